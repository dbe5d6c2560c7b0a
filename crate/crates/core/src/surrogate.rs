//! Encoder-decoder operator surrogates `𝓓 ∘ g̃ ∘ 𝓔` for the diffusion problem,
//! with the coefficient map realized by a sparse grid, a tensor train or an MLP.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_dataset, GenOptions, OutputProjection};
use crate::error::{Result, SurrogateError};
use crate::linalg::symmetric_eigen_desc;
use crate::neural::{train, Activation, MlpSurrogate, NetSpec, Objective, TrainConfig, TrainOutcome};
use crate::problem::DiffusionProblem;
use crate::reduced_basis::{empirical_pca, GramKind, ReducedBasis};
use crate::sparse_grid::{build_sg_surrogate, index_set_with_size, SparseGridSurrogate};
use crate::tensor_train::{
    build_tt_surrogate, degree_schedule, Core, CrossOptions, ScheduleMode, TensorTrain, TensorTrainSurrogate,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    RbSg,
    RbTt,
    L2RbNo,
    H1RbNo,
}

impl SurrogateKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::RbSg => "rb-sg",
            Self::RbTt => "rb-tt",
            Self::L2RbNo => "l2-rb-no",
            Self::H1RbNo => "h1-rb-no",
        }
    }
}

/// The finite-dimensional map `g̃: ℝ^{d_in} → ℝ^{d_out}`.
#[derive(Clone, Debug)]
pub enum CoefficientMap {
    SparseGrid(SparseGridSurrogate),
    TensorTrain(TensorTrainSurrogate),
    Neural(MlpSurrogate),
}

impl CoefficientMap {
    pub fn d_in(&self) -> usize {
        match self {
            Self::SparseGrid(s) => s.d_in(),
            Self::TensorTrain(t) => t.d_in(),
            Self::Neural(n) => n.d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Self::SparseGrid(s) => s.d_out(),
            Self::TensorTrain(t) => t.d_out(),
            Self::Neural(n) => n.d_out(),
        }
    }

    /// Free parameters `N`: grid values, core entries, or weights and biases.
    pub fn param_count(&self) -> usize {
        match self {
            Self::SparseGrid(s) => s.storage(),
            Self::TensorTrain(t) => t.storage(),
            Self::Neural(n) => n.param_count(),
        }
    }

    pub fn eval(&self, e: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Self::SparseGrid(s) => s.eval(e),
            Self::TensorTrain(t) => t.eval(e),
            Self::Neural(n) => n.forward(e),
        }
    }

    /// Rows are samples.
    pub fn eval_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Self::SparseGrid(s) => s.eval_batch(inputs),
            Self::TensorTrain(t) => t.eval_batch(inputs),
            Self::Neural(n) => n.forward_batch(inputs),
        }
    }

    /// `d_out × d_in`.
    pub fn jacobian(&self, e: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self {
            Self::SparseGrid(s) => s.jacobian(e),
            Self::TensorTrain(t) => t.jacobian(e),
            Self::Neural(n) => n.input_jacobian(e),
        }
    }
}

/// `x ↦ m_𝓨 + Σ_j g̃_j(𝓔_{d_in}(x)) η_j`, where the input encoder is the
/// analytic Matérn encoder of the problem.
#[derive(Clone, Debug)]
pub struct OperatorSurrogate {
    pub kind: SurrogateKind,
    pub map: CoefficientMap,
    pub decoder: ReducedBasis,
}

impl OperatorSurrogate {
    pub fn new(kind: SurrogateKind, map: CoefficientMap, decoder: ReducedBasis) -> Result<Self> {
        if map.d_out() != decoder.rank() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "coefficient map has {} outputs, decoder rank {}",
                map.d_out(),
                decoder.rank()
            )));
        }
        Ok(Self { kind, map, decoder })
    }

    pub fn d_in(&self) -> usize {
        self.map.d_in()
    }

    pub fn d_out(&self) -> usize {
        self.map.d_out()
    }

    /// Nodal prediction from encoded inputs; extra coordinates beyond `d_in`
    /// are dropped (input truncation).
    pub fn predict(&self, e: &DVector<f64>) -> Result<DVector<f64>> {
        let e = self.truncate(e)?;
        Ok(self.decoder.decode(&self.map.eval(&e)?)?.values)
    }

    /// Rows of `inputs` are samples; returns nodal predictions as columns.
    pub fn predict_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.ncols() < self.d_in() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "{} input columns, surrogate needs {}",
                inputs.ncols(),
                self.d_in()
            )));
        }
        let coeffs = self.map.eval_batch(&inputs.columns(0, self.d_in()).into_owned())?;
        let mut out = &self.decoder.basis * coeffs.transpose();
        for mut col in out.column_iter_mut() {
            col += &self.decoder.mean;
        }
        Ok(out)
    }

    /// Coefficient-space Jacobian `∇g̃`, `d_out × d_in`.
    pub fn jacobian(&self, e: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.map.jacobian(&self.truncate(e)?)
    }

    fn truncate(&self, e: &DVector<f64>) -> Result<DVector<f64>> {
        if e.len() < self.d_in() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "{} input coordinates, surrogate needs {}",
                e.len(),
                self.d_in()
            )));
        }
        Ok(e.rows(0, self.d_in()).into_owned())
    }
}

/// Sparse-grid hyperparameters: `Λ_{a,b,ℓ}` with `ℓ` chosen so that `|Λ|` is
/// the largest size not exceeding `budget`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgParams {
    pub a: f64,
    pub b: f64,
    pub budget: usize,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtParams {
    pub nu_max: usize,
    pub schedule: ScheduleMode,
    /// Parametric dimension; the anisotropic schedule may truncate it.
    pub d_in: usize,
    pub rank_cap: usize,
    pub sweeps: usize,
    pub validation_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NnParams {
    pub objective: Objective,
    pub width: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub activation: Activation,
    pub n_train: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seed of the training-data draw; separate from the network seed so
    /// several nets can share one dataset.
    pub data_seed: u64,
}

/// One surrogate configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SurrogateSpec {
    SparseGrid(SgParams),
    TensorTrain(TtParams),
    Neural(NnParams),
}

impl SurrogateSpec {
    pub fn kind(&self) -> SurrogateKind {
        match self {
            Self::SparseGrid(_) => SurrogateKind::RbSg,
            Self::TensorTrain(_) => SurrogateKind::RbTt,
            Self::Neural(p) => match p.objective {
                Objective::L2 => SurrogateKind::L2RbNo,
                Objective::H1 => SurrogateKind::H1RbNo,
            },
        }
    }

    /// Flat hyperparameter map for reports.
    pub fn hyperparameters(&self) -> Vec<(String, String)> {
        let v = serde_json::to_value(self).expect("surrogate spec serializes");
        let mut out: Vec<(String, String)> = v
            .as_object()
            .map(|o| {
                o.iter()
                    .filter(|(k, _)| k.as_str() != "kind")
                    .map(|(k, v)| (k.clone(), v.as_str().map_or_else(|| v.to_string(), str::to_owned)))
                    .collect()
            })
            .unwrap_or_default();
        out.sort();
        out
    }
}

/// A fitted surrogate with its offline cost.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub surrogate: OperatorSurrogate,
    /// Forward solves spent (`n`).
    pub n_solves: usize,
    /// Tangent solves spent.
    pub n_jac: usize,
    /// Setup wall time excluding forward and tangent solves.
    pub setup_seconds: f64,
    /// Neural training record, if any.
    pub training: Option<TrainOutcome>,
    /// Method-specific remarks (cross convergence, rank truncation).
    pub notes: Vec<String>,
}

/// Builds a surrogate per `spec`. `seed` drives cross pivots and network
/// initialization.
pub fn fit_surrogate(problem: &DiffusionProblem, spec: &SurrogateSpec, seed: u64) -> Result<FitOutcome> {
    match spec {
        SurrogateSpec::SparseGrid(p) => fit_sparse_grid(problem, p),
        SurrogateSpec::TensorTrain(p) => fit_tensor_train(problem, p, seed),
        SurrogateSpec::Neural(p) => fit_neural(problem, p, seed),
    }
}

/// Wraps `probe_full` so the time spent inside solves can be subtracted.
struct TimedProbe<'a> {
    problem: &'a DiffusionProblem,
    nanos: AtomicU64,
}

impl<'a> TimedProbe<'a> {
    fn new(problem: &'a DiffusionProblem) -> Self {
        Self { problem, nanos: AtomicU64::new(0) }
    }

    fn call(&self, e: &DVector<f64>) -> Result<DVector<f64>> {
        let t = Instant::now();
        let y = self.problem.probe_full(e);
        self.nanos.fetch_add(t.elapsed().as_nanos() as u64, Ordering::Relaxed);
        y
    }

    fn seconds(&self) -> f64 {
        self.nanos.load(Ordering::Relaxed) as f64 * 1e-9
    }
}

fn check_d_in(problem: &DiffusionProblem, d_in: usize) -> Result<()> {
    if d_in == 0 || d_in > problem.spec.d_true {
        return Err(SurrogateError::InvalidArgument(format!("d_in = {d_in} must lie in 1..={}", problem.spec.d_true)));
    }
    Ok(())
}

/// H¹-PCA decoder of nodal snapshots (columns). A single snapshot yields a
/// rank-0 decoder holding only the mean.
fn snapshot_decoder(problem: &DiffusionProblem, snapshots: &DMatrix<f64>, d_out: usize) -> Result<ReducedBasis> {
    let n = snapshots.ncols();
    if n < 2 {
        return ReducedBasis::from_orthonormal(
            snapshots.column_mean(),
            DMatrix::zeros(snapshots.nrows(), 0),
            &problem.ops.h1_gram,
            GramKind::H1,
        );
    }
    let rank = d_out.min(n - 1).min(snapshots.nrows());
    empirical_pca(snapshots, &problem.ops.h1_gram, rank, GramKind::H1)
}

fn fit_sparse_grid(problem: &DiffusionProblem, p: &SgParams) -> Result<FitOutcome> {
    check_d_in(problem, p.d_in)?;
    let t0 = Instant::now();
    let (s0, j0) = (problem.n_solves(), problem.n_tangent());
    let index_set = index_set_with_size(p.a, p.b, p.d_in, p.budget)?;
    let hw = problem.half_widths(p.d_in);
    let probe = TimedProbe::new(problem);
    let nodal = build_sg_surrogate(|e| probe.call(e), index_set, hw.clone())?;
    // grid values are nodal; compress them onto an H¹-PCA of the same snapshots
    let decoder = snapshot_decoder(problem, &nodal.values().transpose(), p.d_out)?;
    let mut coeffs = DMatrix::zeros(nodal.values().nrows(), decoder.rank());
    for (r, row) in nodal.values().row_iter().enumerate() {
        coeffs.set_row(r, &decoder.encode_vec(&row.transpose())?.transpose());
    }
    let sg = SparseGridSurrogate::from_parts(nodal.index_set().clone(), hw, coeffs)?;
    let surrogate = OperatorSurrogate::new(SurrogateKind::RbSg, CoefficientMap::SparseGrid(sg), decoder)?;
    let n_solves = problem.n_solves() - s0;
    Ok(FitOutcome {
        notes: vec![format!("|Λ| = {n_solves}")],
        surrogate,
        n_solves,
        n_jac: problem.n_tangent() - j0,
        setup_seconds: (t0.elapsed().as_secs_f64() - probe.seconds()).max(0.0),
        training: None,
    })
}

/// Splits the nodal output core `C₀` (`dof × r`) into `Q R` with `Q`
/// H¹-orthonormal, dropping directions below `1e-12` of the largest.
fn orthonormalize_output_core(problem: &DiffusionProblem, c0: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let g = problem.ops.h1_gram.mul_mat(c0);
    let s = c0.transpose() * g;
    let s = (&s + s.transpose()) * 0.5;
    let (eig, v) = symmetric_eigen_desc(s)?;
    let top = eig[0].max(0.0);
    let keep = eig.iter().take_while(|&&l| l > 1e-24 * top && l > 0.0).count().max(1);
    let mut q = DMatrix::zeros(c0.nrows(), keep);
    let mut r = DMatrix::zeros(keep, c0.ncols());
    for k in 0..keep {
        let sq = eig[k].max(f64::MIN_POSITIVE).sqrt();
        q.set_column(k, &(c0 * v.column(k) / sq));
        r.set_row(k, &(v.column(k).transpose() * sq));
    }
    Ok((q, r))
}

fn fit_tensor_train(problem: &DiffusionProblem, p: &TtParams, seed: u64) -> Result<FitOutcome> {
    check_d_in(problem, p.d_in)?;
    let t0 = Instant::now();
    let (s0, j0) = (problem.n_solves(), problem.n_tangent());
    let schedule = degree_schedule(p.nu_max, p.schedule, p.d_in)?;
    let d = schedule.d_in();
    if d > problem.spec.d_true {
        return Err(SurrogateError::InvalidArgument(format!(
            "schedule needs {d} inputs, problem has d_true = {}",
            problem.spec.d_true
        )));
    }
    let hw = problem.half_widths(d);
    let opts = CrossOptions {
        rank_cap: p.rank_cap,
        sweeps: p.sweeps,
        validation_size: p.validation_size,
        seed,
        ..CrossOptions::default()
    };
    let probe = TimedProbe::new(problem);
    let (nodal, cross) = build_tt_surrogate(|e| probe.call(e), schedule.clone(), hw.clone(), &opts)?;
    let c0 = nodal.tt.cores()[0].left_unfolding();
    let (q, r) = orthonormalize_output_core(problem, &c0)?;
    let mut cores = nodal.tt.cores().to_vec();
    cores[0] = Core::from_left_unfolding(1, r.nrows(), &r);
    let tt = TensorTrain::new(cores)?;
    let sur = TensorTrainSurrogate::from_parts(tt, schedule, hw, cross.converged, cross.n_cross, cross.n_validation)?;
    let decoder =
        ReducedBasis::from_orthonormal(DVector::zeros(problem.dof_count()), q, &problem.ops.h1_gram, GramKind::H1)?;
    let surrogate = OperatorSurrogate::new(SurrogateKind::RbTt, CoefficientMap::TensorTrain(sur), decoder)?;
    let mut notes = vec![format!("ranks {:?}", cross.tt.ranks()), format!("validation history {:?}", cross.history)];
    if !cross.converged {
        notes.push("cross stopped without meeting its tolerance".into());
    }
    Ok(FitOutcome {
        surrogate,
        n_solves: problem.n_solves() - s0,
        n_jac: problem.n_tangent() - j0,
        setup_seconds: (t0.elapsed().as_secs_f64() - probe.seconds()).max(0.0),
        training: None,
        notes,
    })
}

fn fit_neural(problem: &DiffusionProblem, p: &NnParams, seed: u64) -> Result<FitOutcome> {
    check_d_in(problem, p.d_in)?;
    if p.n_train < 2 {
        return Err(SurrogateError::InvalidArgument("neural surrogates need at least 2 training samples".into()));
    }
    let (s0, j0) = (problem.n_solves(), problem.n_tangent());
    let input = problem.input_basis(p.d_in)?;
    let with_jac = p.objective == Objective::H1;
    let gen = GenOptions { n: p.n_train, seed: p.data_seed, with_jacobians: with_jac, jacobian_dims: None };
    let raw = generate_dataset(problem, &input, OutputProjection::Full, &gen)?;

    let t0 = Instant::now();
    let decoder = snapshot_decoder(problem, &raw.outputs.transpose(), p.d_out)?;
    let mut outputs = DMatrix::zeros(raw.len(), decoder.rank());
    for k in 0..raw.len() {
        outputs.set_row(k, &decoder.encode_vec(&raw.outputs.row(k).transpose())?.transpose());
    }
    let jacobians = raw.jacobians.as_ref().map(|js| js.iter().map(|j| &decoder.encoder * j).collect());
    let data = crate::neural::TrainingDataset::new(raw.inputs.clone(), outputs, jacobians)?;
    let spec = NetSpec { hidden: vec![p.width; p.depth], activation: p.activation };
    let mut cfg = TrainConfig::new(p.objective, problem.spec.s, p.epochs, seed);
    cfg.batch_size = p.batch_size;
    let outcome = train(&spec, &data, &cfg)?;
    let setup = t0.elapsed().as_secs_f64();
    let surrogate =
        OperatorSurrogate::new(spec_kind(p.objective), CoefficientMap::Neural(outcome.net.clone()), decoder)?;
    Ok(FitOutcome {
        surrogate,
        n_solves: problem.n_solves() - s0,
        n_jac: problem.n_tangent() - j0,
        setup_seconds: setup,
        notes: vec![format!("best epoch {} (validation loss {:.3e})", outcome.best_epoch, outcome.best_val_loss)],
        training: Some(outcome),
    })
}

fn spec_kind(objective: Objective) -> SurrogateKind {
    match objective {
        Objective::L2 => SurrogateKind::L2RbNo,
        Objective::H1 => SurrogateKind::H1RbNo,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ProblemConfig;

    fn problem() -> DiffusionProblem {
        DiffusionProblem::new(ProblemConfig { grid: 8, s: 3.0, d_true: 16, ..Default::default() }).unwrap()
    }

    fn rel_h1(problem: &DiffusionProblem, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let g = &problem.ops.h1_gram;
        (g.norm_sq(&(a - b)) / g.norm_sq(b)).sqrt()
    }

    #[test]
    fn sparse_grid_counts_one_solve_per_index() {
        let p = problem();
        let spec = SgParams { a: 1.0, b: 1.0, budget: 20, d_in: 4, d_out: 10 };
        let fit = fit_sparse_grid(&p, &spec).unwrap();
        let CoefficientMap::SparseGrid(sg) = &fit.surrogate.map else { panic!() };
        assert_eq!(fit.n_solves, sg.index_set().len());
        assert!(fit.n_solves <= 20);
        // reproduces the probe at the origin, which is a grid point
        let e = DVector::zeros(4);
        let y = p.probe_full(&e).unwrap();
        assert!(rel_h1(&p, &fit.surrogate.predict(&e).unwrap(), &y) < 1e-10);
    }

    #[test]
    fn tensor_train_output_core_is_orthonormalized() {
        let p = problem();
        let spec =
            TtParams { nu_max: 5, schedule: ScheduleMode::Iso, d_in: 3, rank_cap: 4, sweeps: 1, validation_size: 8 };
        let fit = fit_tensor_train(&p, &spec, 0).unwrap();
        let b = &fit.surrogate.decoder.basis;
        let gram = b.transpose() * p.ops.h1_gram.mul_mat(b);
        assert!((gram - DMatrix::identity(b.ncols(), b.ncols())).amax() < 1e-10);
        let e = DVector::from_vec(vec![0.3, -0.05, 0.01]);
        let y = p.probe_full(&e).unwrap();
        let err = rel_h1(&p, &fit.surrogate.predict(&e).unwrap(), &y);
        assert!(err < 1e-2, "err {err} notes {:?}", fit.notes);
    }

    #[test]
    fn neural_fit_reports_costs() {
        let p = problem();
        let spec = NnParams {
            objective: Objective::H1,
            width: 8,
            depth: 1,
            activation: Activation::Gelu,
            n_train: 10,
            d_in: 3,
            d_out: 4,
            epochs: 3,
            batch_size: 4,
            data_seed: 1,
        };
        let fit = fit_neural(&p, &spec, 0).unwrap();
        assert_eq!(fit.n_solves, 10);
        assert_eq!(fit.n_jac, 30);
        assert_eq!(fit.surrogate.kind, SurrogateKind::H1RbNo);
        assert_eq!(fit.surrogate.d_out(), 4);
    }

    #[test]
    fn hyperparameters_are_flat() {
        let spec = SurrogateSpec::SparseGrid(SgParams { a: 0.5, b: 1.2, budget: 30, d_in: 8, d_out: 16 });
        let hp = spec.hyperparameters();
        assert!(hp.contains(&("a".into(), "0.5".into())));
        assert!(hp.iter().all(|(k, _)| k != "kind"));
    }
}
