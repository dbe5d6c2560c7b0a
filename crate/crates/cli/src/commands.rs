//! Subcommand bodies. Each writes its artifacts under `--out` plus a run
//! manifest in `<out>/manifests/<command>.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surrogate_core::artifacts::{load_basis, load_surrogate, save_basis, save_surrogate};
use surrogate_core::bench::{run_ensemble, shared_test_set};
use surrogate_core::datagen::{generate_dataset, GenOptions, OutputProjection};
use surrogate_core::io::{sha256_hex, BlobStore};
use surrogate_core::metrics::{
    evaluate, measure_eval_time, read_records_csv, write_records_csv, write_reports, BenchRecord,
};
use surrogate_core::problem::{DiffusionProblem, ProblemConfig};
use surrogate_core::reduced_basis::{empirical_pca, GramKind};
use surrogate_core::surrogate::{fit_surrogate, SurrogateSpec};

use crate::config::{CliConfig, Projection};
use crate::error::CliError;
use crate::{Cli, Command};

pub const RUN_FORMAT: &str = "surrogate-run/1";

/// Everything needed to repeat a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub version: String,
    pub threads: Option<usize>,
    pub config_hash: String,
    pub config: CliConfig,
    /// Content hashes of artifacts read, keyed by path relative to `--out`.
    pub inputs: BTreeMap<String, String>,
    /// Content hashes of artifacts written.
    pub outputs: BTreeMap<String, String>,
}

/// Offline facts about a fit that `eval` needs. Timings live here, not in
/// the surrogate directory, so the surrogate itself is reproducible bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub spec: SurrogateSpec,
    pub seed: u64,
    pub problem: ProblemConfig,
    pub n_solves: usize,
    pub n_jac: usize,
    pub n_params: usize,
    pub setup_seconds: f64,
    pub notes: Vec<String>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

pub const BASIS_INPUT_DIR: &str = "basis/input";
pub const BASIS_OUTPUT_DIR: &str = "basis/output";
pub const DATASET_DIR: &str = "dataset";
pub const SURROGATE_DIR: &str = "surrogate";
pub const FIT_REPORT: &str = "fit_report.json";

struct Run<'a> {
    out: &'a Path,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> Run<'a> {
    fn new(out: &'a Path) -> Self {
        Self { out, inputs: BTreeMap::new(), outputs: BTreeMap::new() }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// A store at `rel`, emptied first so no stale blob survives.
    fn fresh_store(&self, rel: &str) -> Result<BlobStore, CliError> {
        let dir = self.path(rel);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        Ok(BlobStore::create(&dir)?)
    }

    fn existing_store(&mut self, rel: &str, hint: &str) -> Result<BlobStore, CliError> {
        let store = BlobStore::open(self.path(rel))
            .map_err(|_| CliError::Runtime(format!("{} not found; {hint}", self.path(rel).display())))?;
        self.inputs.insert(rel.into(), store.content_hash()?);
        Ok(store)
    }

    fn record_dir(&mut self, rel: &str) -> Result<(), CliError> {
        let h = BlobStore::open(self.path(rel))?.content_hash()?;
        self.outputs.insert(rel.into(), h);
        Ok(())
    }

    fn record_file(map: &mut BTreeMap<String, String>, out: &Path, rel: &str) -> Result<(), CliError> {
        let bytes = std::fs::read(out.join(rel))?;
        map.insert(rel.into(), sha256_hex(&bytes));
        Ok(())
    }
}

pub fn dispatch(cli: &Cli, cfg: &CliConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cli.out)?;
    let mut run = Run::new(&cli.out);
    match &cli.command {
        Command::Basis => basis(cfg, &mut run)?,
        Command::Gen => gen(cfg, &mut run)?,
        Command::Fit => fit(cfg, &mut run)?,
        Command::Eval => eval(cfg, &mut run)?,
        Command::Ensemble => ensemble(cfg, &mut run)?,
        Command::Report { records } => report(records.as_deref(), &mut run)?,
    }
    let manifest = RunManifest {
        format: RUN_FORMAT.into(),
        command: cli.command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        threads: cli.threads,
        config_hash: cfg.content_hash(),
        config: cfg.clone(),
        inputs: run.inputs,
        outputs: run.outputs,
    };
    let dir = cli.out.join("manifests");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(format!("{}.json", manifest.command)), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn problem(cfg: &CliConfig) -> Result<DiffusionProblem, CliError> {
    Ok(DiffusionProblem::new(cfg.problem.clone())?)
}

fn basis(cfg: &CliConfig, run: &mut Run<'_>) -> Result<(), CliError> {
    let problem = problem(cfg)?;
    let b = &cfg.basis;
    let input = problem.input_basis(b.d_in)?;
    save_basis(&run.fresh_store(BASIS_INPUT_DIR)?, &input)?;
    let opts = GenOptions { n: b.samples, seed: b.seed, with_jacobians: false, jacobian_dims: None };
    let snaps = generate_dataset(&problem, &input, OutputProjection::Full, &opts)?;
    let pca = empirical_pca(&snaps.outputs.transpose(), &problem.ops.h1_gram, b.output_rank, GramKind::H1)?;
    save_basis(&run.fresh_store(BASIS_OUTPUT_DIR)?, &pca)?;
    let captured: f64 = pca.captured_energy.sum();
    eprintln!(
        "basis: input rank {}, output rank {} capturing {:.6} of the snapshot energy ({} solves)",
        input.rank(),
        pca.rank(),
        captured / (captured + pca.discarded_energy),
        problem.n_solves()
    );
    run.record_dir(BASIS_INPUT_DIR)?;
    run.record_dir(BASIS_OUTPUT_DIR)
}

fn gen(cfg: &CliConfig, run: &mut Run<'_>) -> Result<(), CliError> {
    let problem = problem(cfg)?;
    let g = &cfg.gen;
    let input = problem.input_basis(g.d_in)?;
    let output_basis = match g.output {
        Projection::Full => None,
        Projection::Pca => {
            let store = run.existing_store(BASIS_OUTPUT_DIR, "run `basis` first or set gen.output = \"full\"")?;
            let b = load_basis(&store)?;
            if b.dim() != problem.dof_count() {
                return Err(CliError::Config(format!(
                    "stored output basis has {} rows but the problem has {} nodes",
                    b.dim(),
                    problem.dof_count()
                )));
            }
            Some(b)
        }
    };
    let projection = output_basis.as_ref().map_or(OutputProjection::Full, OutputProjection::Basis);
    let opts = GenOptions { n: g.n, seed: g.seed, with_jacobians: g.jacobians, jacobian_dims: g.jacobian_dims };
    let ds = generate_dataset(&problem, &input, projection, &opts)?;
    ds.save(&run.fresh_store(DATASET_DIR)?)?;
    eprintln!(
        "gen: {} samples, d_in {}, d_out {}, {} forward and {} tangent solves",
        ds.manifest.n, ds.manifest.d_in, ds.manifest.d_out, ds.manifest.n_solves, ds.manifest.n_jac
    );
    run.record_dir(DATASET_DIR)
}

fn fit(cfg: &CliConfig, run: &mut Run<'_>) -> Result<(), CliError> {
    let problem = problem(cfg)?;
    let f = fit_surrogate(&problem, &cfg.fit.surrogate, cfg.fit.seed)?;
    save_surrogate(&run.fresh_store(SURROGATE_DIR)?, &f.surrogate)?;
    let report = FitReport {
        spec: cfg.fit.surrogate.clone(),
        seed: cfg.fit.seed,
        problem: cfg.problem.clone(),
        n_solves: f.n_solves,
        n_jac: f.n_jac,
        n_params: f.surrogate.map.param_count(),
        setup_seconds: f.setup_seconds,
        notes: f.notes.clone(),
        best_epoch: f.training.as_ref().map(|t| t.best_epoch),
        best_val_loss: f.training.as_ref().map(|t| t.best_val_loss),
    };
    std::fs::write(run.path(FIT_REPORT), serde_json::to_string_pretty(&report)? + "\n")?;
    eprintln!(
        "fit: {} with {} parameters, n = {}, n_jac = {}, setup {:.3} s",
        cfg.fit.surrogate.kind().label(),
        report.n_params,
        report.n_solves,
        report.n_jac,
        report.setup_seconds
    );
    for note in &f.notes {
        eprintln!("fit: {note}");
    }
    run.record_dir(SURROGATE_DIR)?;
    Run::record_file(&mut run.outputs, run.out, FIT_REPORT)
}

fn eval(cfg: &CliConfig, run: &mut Run<'_>) -> Result<(), CliError> {
    let report_path = run.path(FIT_REPORT);
    let text = std::fs::read_to_string(&report_path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}; run `fit` first", report_path.display())))?;
    let report: FitReport = serde_json::from_str(&text)?;
    Run::record_file(&mut run.inputs, run.out, FIT_REPORT)?;
    if report.problem != cfg.problem {
        return Err(CliError::Config("the [problem] section differs from the one the surrogate was fitted on".into()));
    }
    let sur = load_surrogate(&run.existing_store(SURROGATE_DIR, "run `fit` first")?)?;
    let problem = problem(cfg)?;
    let test_rel = format!("test_s{}", cfg.problem.s);
    let test = shared_test_set(&problem, &cfg.test, Some(&run.path(&test_rel)))?;
    run.inputs.insert(test_rel.clone(), BlobStore::open(run.path(&test_rel))?.content_hash()?);
    let ev = evaluate(&sur, &test, &problem)?;
    let t = measure_eval_time(
        |x| sur.predict_batch(x).map(|_| ()),
        &problem.half_widths(sur.d_in()),
        &[cfg.timing.batch],
        cfg.timing.repeats,
        report.seed,
    )?;
    let record = BenchRecord {
        kind: report.spec.kind(),
        s: cfg.problem.s,
        hyperparameters: report.spec.hyperparameters().into_iter().collect(),
        n: report.n_solves,
        n_jac: report.n_jac,
        n_params: sur.map.param_count(),
        t_train: report.setup_seconds,
        t_eval: t[0].seconds_per_sample,
        eval_batch: cfg.timing.batch,
        eps_l2: ev.eps_l2,
        eps_h1: ev.eps_h1,
        seed: report.seed,
    };
    write_records_csv(&run.path("records.csv"), std::slice::from_ref(&record))?;
    std::fs::write(run.path("eval.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    eprintln!(
        "eval: eps_l2 = {:.4e}, eps_h1 = {}, t_eval = {:.3e} s/sample",
        record.eps_l2,
        record.eps_h1.map_or_else(|| "n/a".into(), |v| format!("{v:.4e}")),
        record.t_eval
    );
    Run::record_file(&mut run.outputs, run.out, "records.csv")
}

fn ensemble(cfg: &CliConfig, run: &mut Run<'_>) -> Result<(), CliError> {
    let outcome = run_ensemble(&cfg.ensemble_config(), Some(run.out))?;
    eprintln!("ensemble: {} records, {} skipped", outcome.records.len(), outcome.skipped.len());
    for s in &outcome.skipped {
        eprintln!("ensemble: skipped {} (s = {}, seed {}): {}", s.spec.kind().label(), s.s, s.seed, s.reason);
    }
    Run::record_file(&mut run.outputs, run.out, "records.csv")?;
    Run::record_file(&mut run.outputs, run.out, "pareto.csv")
}

fn report(records: Option<&Path>, run: &mut Run<'_>) -> Result<(), CliError> {
    let path = records.map_or_else(|| run.path("records.csv"), Path::to_path_buf);
    let bytes = std::fs::read(&path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    run.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
    let recs = read_records_csv(&path)?;
    write_reports(run.out, &recs)?;
    eprintln!("report: {} records", recs.len());
    Run::record_file(&mut run.outputs, run.out, "pareto.csv")
}
