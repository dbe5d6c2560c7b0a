//! Monte-Carlo error metrics, evaluation timing, benchmark records and Pareto
//! extraction.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_dataset, Dataset, GenOptions, OutputProjection};
use crate::error::{Result, SurrogateError};
use crate::linalg::CsrMatrix;
use crate::problem::DiffusionProblem;
use crate::reduced_basis::SmoothnessSpec;
use crate::rng;
use crate::surrogate::{OperatorSurrogate, SurrogateKind};

fn sq_norm(v: &DVector<f64>, gram: Option<&CsrMatrix>) -> f64 {
    match gram {
        Some(g) => g.norm_sq(v),
        None => v.norm_squared(),
    }
}

/// `sqrt(Σ‖y_k − ỹ_k‖² / Σ‖y_k‖²)`, norms in `gram` (Euclidean when `None`).
pub fn eps_l2mu(predicted: &[DVector<f64>], reference: &[DVector<f64>], gram: Option<&CsrMatrix>) -> Result<f64> {
    if predicted.len() != reference.len() || predicted.is_empty() {
        return Err(SurrogateError::DimensionMismatch(format!(
            "{} predictions for {} references",
            predicted.len(),
            reference.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, y) in predicted.iter().zip(reference) {
        if p.len() != y.len() {
            return Err(SurrogateError::DimensionMismatch("prediction and reference lengths differ".into()));
        }
        num += sq_norm(&(y - p), gram);
        den += sq_norm(y, gram);
    }
    if den <= 0.0 {
        return Err(SurrogateError::ZeroDenominator);
    }
    Ok((num / den).sqrt())
}

/// `sqrt(Σ‖(J_k − J̃_k) diag(w)‖²_F / Σ‖J_k diag(w)‖²_F)` with `w = λ^s`.
pub fn eps_h1mu(surrogate: &[DMatrix<f64>], reference: &[DMatrix<f64>], weights: &DVector<f64>) -> Result<f64> {
    if surrogate.len() != reference.len() || surrogate.is_empty() {
        return Err(SurrogateError::DimensionMismatch(format!(
            "{} surrogate Jacobians for {} references",
            surrogate.len(),
            reference.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, r) in surrogate.iter().zip(reference) {
        if a.shape() != r.shape() || r.ncols() != weights.len() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "Jacobian shapes {:?} / {:?} with {} weights",
                a.shape(),
                r.shape(),
                weights.len()
            )));
        }
        for (c, w) in weights.iter().enumerate() {
            let w2 = w * w;
            num += w2 * (r.column(c) - a.column(c)).norm_squared();
            den += w2 * r.column(c).norm_squared();
        }
    }
    if den <= 0.0 {
        return Err(SurrogateError::ZeroDenominator);
    }
    Ok((num / den).sqrt())
}

/// Shared test set: nodal solutions and, optionally, nodal Jacobians with
/// respect to the leading encoded input coordinates.
pub fn build_test_set(problem: &DiffusionProblem, k: usize, seed: u64, jacobian_dims: usize) -> Result<Dataset> {
    let input = problem.input_basis(problem.spec.d_true)?;
    let opts = GenOptions { n: k, seed, with_jacobians: jacobian_dims > 0, jacobian_dims: Some(jacobian_dims) };
    generate_dataset(problem, &input, OutputProjection::Full, &opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub eps_l2: f64,
    pub eps_h1: Option<f64>,
}

/// Scores a surrogate on a full-output test set. `ε_{H¹_μ}` is reported when
/// the test set carries at least `d_in` Jacobian columns; the reference is the
/// nodal Jacobian projected onto the surrogate's own decoder.
pub fn evaluate(surrogate: &OperatorSurrogate, test: &Dataset, problem: &DiffusionProblem) -> Result<Evaluation> {
    if test.manifest.d_out != problem.dof_count() {
        return Err(SurrogateError::DimensionMismatch("test set must hold nodal outputs".into()));
    }
    let pred = surrogate.predict_batch(&test.inputs)?;
    let predicted: Vec<DVector<f64>> = pred.column_iter().map(|c| c.into_owned()).collect();
    let reference: Vec<DVector<f64>> = test.outputs.row_iter().map(|r| r.transpose()).collect();
    let eps_l2 = eps_l2mu(&predicted, &reference, Some(&problem.ops.h1_gram))?;

    let d_in = surrogate.d_in();
    let eps_h1 = match &test.jacobians {
        Some(js) if test.manifest.jacobian_dims >= d_in => {
            let mut sur = Vec::with_capacity(js.len());
            let mut refs = Vec::with_capacity(js.len());
            for (k, j) in js.iter().enumerate() {
                sur.push(surrogate.jacobian(&test.inputs.row(k).transpose())?);
                refs.push(&surrogate.decoder.encoder * j.columns(0, d_in));
            }
            Some(eps_h1mu(&sur, &refs, &SmoothnessSpec::weights(d_in, problem.spec.s))?)
        }
        _ => None,
    };
    Ok(Evaluation { eps_l2, eps_h1 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTiming {
    pub batch: usize,
    /// Median wall time per sample.
    pub seconds_per_sample: f64,
}

/// Per-sample wall time of `eval` on random inputs `c ∈ [−w, w]`, median over
/// `repeats` timed calls after one untimed warm-up call per batch size.
pub fn measure_eval_time(
    mut eval: impl FnMut(&DMatrix<f64>) -> Result<()>,
    half_widths: &DVector<f64>,
    batch_sizes: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<EvalTiming>> {
    if repeats == 0 || batch_sizes.contains(&0) {
        return Err(SurrogateError::InvalidArgument("repeats and batch sizes must be positive".into()));
    }
    let mut r = rng::stream(seed, 0);
    let mut out = Vec::with_capacity(batch_sizes.len());
    for &b in batch_sizes {
        let inputs = DMatrix::from_fn(b, half_widths.len(), |_, j| half_widths[j] * r.random_range(-1.0..=1.0));
        eval(&inputs)?;
        let mut times: Vec<f64> = (0..repeats)
            .map(|_| {
                let t = Instant::now();
                eval(&inputs).map(|_| t.elapsed().as_secs_f64())
            })
            .collect::<Result<_>>()?;
        times.sort_by(f64::total_cmp);
        let mid = times.len() / 2;
        let median = if times.len() % 2 == 1 { times[mid] } else { 0.5 * (times[mid - 1] + times[mid]) };
        out.push(EvalTiming { batch: b, seconds_per_sample: median / b as f64 });
    }
    Ok(out)
}

/// One benchmark outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub kind: SurrogateKind,
    pub s: f64,
    pub hyperparameters: BTreeMap<String, String>,
    /// Forward solves used to build the surrogate.
    pub n: usize,
    pub n_jac: usize,
    /// Free parameters of the coefficient map.
    pub n_params: usize,
    /// Setup seconds excluding solves.
    pub t_train: f64,
    /// Seconds per sample at batch size `eval_batch`.
    pub t_eval: f64,
    pub eval_batch: usize,
    pub eps_l2: f64,
    pub eps_h1: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostAxis {
    /// Training solves.
    N,
    /// Free parameters.
    Params,
    TEval,
    TTrain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorAxis {
    L2,
    H1,
}

impl BenchRecord {
    pub fn cost(&self, axis: CostAxis) -> f64 {
        match axis {
            CostAxis::N => self.n as f64,
            CostAxis::Params => self.n_params as f64,
            CostAxis::TEval => self.t_eval,
            CostAxis::TTrain => self.t_train,
        }
    }

    pub fn error(&self, axis: ErrorAxis) -> Option<f64> {
        match axis {
            ErrorAxis::L2 => Some(self.eps_l2),
            ErrorAxis::H1 => self.eps_h1,
        }
    }
}

/// Indices of the points not dominated by any other (another point with cost
/// and error both `≤`, one strictly), ordered by cost with input order kept
/// among equal costs. Duplicates do not dominate each other.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| points[i].0.total_cmp(&points[j].0).then(i.cmp(&j)));
    let mut keep = Vec::new();
    let mut best = f64::INFINITY;
    let mut g = 0;
    while g < order.len() {
        let cost = points[order[g]].0;
        let end = g + order[g..].iter().take_while(|&&i| points[i].0 == cost).count();
        let group_min = order[g..end].iter().map(|&i| points[i].1).fold(f64::INFINITY, f64::min);
        if group_min < best {
            keep.extend(order[g..end].iter().copied().filter(|&i| points[i].1 == group_min));
            best = group_min;
        }
        g = end;
    }
    keep
}

/// Records on the Pareto frontier of `(cost, error)`. Records lacking the
/// requested error (no `ε_{H¹_μ}`) are left out.
pub fn pareto_frontier(records: &[BenchRecord], cost: CostAxis, error: ErrorAxis) -> Vec<BenchRecord> {
    let usable: Vec<&BenchRecord> = records.iter().filter(|r| r.error(error).is_some()).collect();
    let points: Vec<(f64, f64)> = usable.iter().map(|r| (r.cost(cost), r.error(error).unwrap_or(f64::NAN))).collect();
    pareto_indices(&points).into_iter().map(|i| usable[i].clone()).collect()
}

const CSV_HEADER: [&str; 12] = [
    "kind",
    "s",
    "hyperparameters",
    "n",
    "n_jac",
    "n_params",
    "t_train",
    "t_eval",
    "eval_batch",
    "eps_l2",
    "eps_h1",
    "seed",
];

fn csv_row(r: &BenchRecord) -> Vec<String> {
    let hp = r.hyperparameters.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";");
    vec![
        r.kind.label().into(),
        r.s.to_string(),
        hp,
        r.n.to_string(),
        r.n_jac.to_string(),
        r.n_params.to_string(),
        format!("{:e}", r.t_train),
        format!("{:e}", r.t_eval),
        r.eval_batch.to_string(),
        format!("{:e}", r.eps_l2),
        r.eps_h1.map_or_else(String::new, |e| format!("{e:e}")),
        r.seed.to_string(),
    ]
}

/// Writes records in the documented column order.
pub fn write_records_csv(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record(csv_row(r)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_records_csv`].
pub fn read_records_csv(path: &Path) -> Result<Vec<BenchRecord>> {
    read_records(std::fs::File::open(path)?)
}

/// Parses records CSV from any reader; rejects unknown headers and invalid rows.
pub fn read_records<R: std::io::Read>(reader: R) -> Result<Vec<BenchRecord>> {
    let mut rd = csv::Reader::from_reader(reader);
    let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(SurrogateError::Format(format!("unexpected records header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(csv_err)?;
        out.push(parse_row(&row)?);
    }
    Ok(out)
}

fn parse_row(row: &csv::StringRecord) -> Result<BenchRecord> {
    fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
        s.parse().map_err(|_| SurrogateError::Format(format!("bad {what} value {s:?}")))
    }
    let kind: SurrogateKind = serde_json::from_value(serde_json::Value::String(row[0].to_owned()))
        .map_err(|_| SurrogateError::Format(format!("unknown surrogate kind {:?}", &row[0])))?;
    let mut hyperparameters = BTreeMap::new();
    for kv in row[2].split(';').filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| SurrogateError::Format(format!("bad hyperparameter {kv:?}")))?;
        hyperparameters.insert(k.to_owned(), v.to_owned());
    }
    let rec = BenchRecord {
        kind,
        s: num(&row[1], "s")?,
        hyperparameters,
        n: num(&row[3], "n")?,
        n_jac: num(&row[4], "n_jac")?,
        n_params: num(&row[5], "n_params")?,
        t_train: num(&row[6], "t_train")?,
        t_eval: num(&row[7], "t_eval")?,
        eval_batch: num(&row[8], "eval_batch")?,
        eps_l2: num(&row[9], "eps_l2")?,
        eps_h1: if row[10].is_empty() { None } else { Some(num(&row[10], "eps_h1")?) },
        seed: num(&row[11], "seed")?,
    };
    let costs = [rec.t_train, rec.t_eval, rec.eps_l2, rec.eps_h1.unwrap_or(0.0), rec.s];
    if costs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(SurrogateError::Format("costs and errors must be finite and non-negative".into()));
    }
    Ok(rec)
}

fn csv_err(e: csv::Error) -> SurrogateError {
    SurrogateError::Format(e.to_string())
}

/// Writes `pareto.csv` and one plot-ready CSV per cost axis
/// (`error_vs_n.csv`, `error_vs_params.csv`, `error_vs_t_eval.csv`,
/// `error_vs_t_train.csv`), each with an `on_frontier` flag per surrogate kind
/// and smoothness.
pub fn write_reports(dir: &Path, records: &[BenchRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_records_csv(&dir.join("pareto.csv"), &pareto_frontier(records, CostAxis::N, ErrorAxis::L2))?;
    for (axis, name) in [
        (CostAxis::N, "error_vs_n.csv"),
        (CostAxis::Params, "error_vs_params.csv"),
        (CostAxis::TEval, "error_vs_t_eval.csv"),
        (CostAxis::TTrain, "error_vs_t_train.csv"),
    ] {
        let mut w = csv::Writer::from_path(dir.join(name)).map_err(csv_err)?;
        w.write_record(["kind", "s", "cost", "eps_l2", "eps_h1", "on_frontier"]).map_err(csv_err)?;
        let mut groups: BTreeMap<(String, String), Vec<&BenchRecord>> = BTreeMap::new();
        for r in records {
            groups.entry((r.kind.label().to_owned(), r.s.to_string())).or_default().push(r);
        }
        for ((kind, s), rs) in groups {
            let pts: Vec<(f64, f64)> = rs.iter().map(|r| (r.cost(axis), r.eps_l2)).collect();
            let front = pareto_indices(&pts);
            let mut order: Vec<usize> = (0..rs.len()).collect();
            order.sort_by(|&i, &j| pts[i].0.total_cmp(&pts[j].0));
            for i in order {
                let r = rs[i];
                w.write_record([
                    kind.clone(),
                    s.clone(),
                    format!("{:e}", r.cost(axis)),
                    format!("{:e}", r.eps_l2),
                    r.eps_h1.map_or_else(String::new, |e| format!("{e:e}")),
                    front.contains(&i).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
    }
    Ok(())
}
