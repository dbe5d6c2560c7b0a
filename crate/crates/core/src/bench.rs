//! Ensemble orchestration: expand a hyperparameter grid, fit and score every
//! configuration against a shared test set, and write the reports.
//!
//! Entries run one after another so timings are never co-scheduled with other
//! work. Sparse-grid surrogates are deterministic and are built once per
//! configuration; tensor-train and neural entries are repeated per seed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Result, SurrogateError};
use crate::io::BlobStore;
use crate::metrics::{build_test_set, evaluate, measure_eval_time, write_records_csv, write_reports, BenchRecord};
use crate::neural::{Activation, Objective};
use crate::problem::{DiffusionProblem, ProblemConfig};
use crate::surrogate::{fit_surrogate, NnParams, SgParams, SurrogateSpec, TtParams};
use crate::tensor_train::ScheduleMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    /// Test samples `K`.
    pub size: usize,
    pub seed: u64,
    /// Jacobian columns stored per test sample; `ε_{H¹_μ}` needs at least `d_in`.
    pub jacobian_dims: usize,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self { size: 128, seed: 20_240_601, jacobian_dims: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub batch: usize,
    pub repeats: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { batch: 1, repeats: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgGrid {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub budget: Vec<usize>,
    pub d_in: Vec<usize>,
    pub d_out: usize,
}

impl Default for SgGrid {
    fn default() -> Self {
        Self { a: vec![0.5, 1.2], b: vec![1.2], budget: vec![30, 120, 500], d_in: vec![64], d_out: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtGrid {
    pub nu_max: Vec<usize>,
    pub schedule: ScheduleMode,
    pub d_in: Vec<usize>,
    pub rank_cap: Vec<usize>,
    pub sweeps: usize,
    pub validation_size: usize,
}

impl Default for TtGrid {
    fn default() -> Self {
        Self {
            nu_max: vec![3, 4],
            schedule: ScheduleMode::Aniso,
            d_in: vec![64],
            rank_cap: vec![4, 8],
            sweeps: 2,
            validation_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnGrid {
    pub objective: Vec<Objective>,
    pub width: Vec<usize>,
    pub depth: Vec<usize>,
    pub activation: Activation,
    pub n_train: Vec<usize>,
    pub d_in: usize,
    pub d_out: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub data_seed: u64,
}

impl Default for NnGrid {
    fn default() -> Self {
        Self {
            objective: vec![Objective::L2, Objective::H1],
            width: vec![64],
            depth: vec![3],
            activation: Activation::Gelu,
            n_train: vec![64, 256],
            d_in: 16,
            d_out: 32,
            epochs: 500,
            batch_size: 32,
            data_seed: 7,
        }
    }
}

/// Ensemble configuration. Absent surrogate sections are skipped entirely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub problem: ProblemConfig,
    /// Smoothness values to sweep; empty means `problem.s` only.
    pub smoothness: Vec<f64>,
    pub seeds: Vec<u64>,
    pub test: TestConfig,
    pub timing: TimingConfig,
    pub sparse_grid: Option<SgGrid>,
    pub tensor_train: Option<TtGrid>,
    pub neural: Option<NnGrid>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::default(),
            smoothness: vec![1.0, 3.0],
            seeds: vec![0],
            test: TestConfig::default(),
            timing: TimingConfig::default(),
            sparse_grid: Some(SgGrid::default()),
            tensor_train: Some(TtGrid::default()),
            neural: Some(NnGrid::default()),
        }
    }
}

impl EnsembleConfig {
    /// The full-scale grids: 64×64 mesh, `d_true = 1000`, `K = 250`,
    /// `a, b ∈ {0.2, 0.5, 1.2, 3.0}`, widths 200/400/800 and depths 3/5/7 with
    /// 2000 epochs. Runs for many hours on a desktop.
    pub fn full() -> Self {
        Self {
            problem: ProblemConfig { grid: 64, d_true: 1000, ..ProblemConfig::default() },
            smoothness: vec![0.5, 1.0, 2.0, 3.0],
            seeds: vec![0, 1, 2],
            test: TestConfig { size: 250, jacobian_dims: 200, ..TestConfig::default() },
            timing: TimingConfig::default(),
            sparse_grid: Some(SgGrid {
                a: vec![0.2, 0.5, 1.2, 3.0],
                b: vec![0.2, 0.5, 1.2, 3.0],
                budget: vec![100, 1000, 10_000],
                d_in: vec![200],
                d_out: 200,
            }),
            tensor_train: Some(TtGrid {
                nu_max: vec![3, 4, 5],
                d_in: vec![200],
                rank_cap: vec![5, 10, 20],
                ..TtGrid::default()
            }),
            neural: Some(NnGrid {
                width: vec![200, 400, 800],
                depth: vec![3, 5, 7],
                n_train: vec![100, 1000, 10_000],
                d_in: 200,
                d_out: 200,
                epochs: 2000,
                ..NnGrid::default()
            }),
        }
    }

    pub fn smoothness_values(&self) -> Vec<f64> {
        if self.smoothness.is_empty() {
            vec![self.problem.s]
        } else {
            self.smoothness.clone()
        }
    }

    /// Every surrogate configuration with whether it depends on the seed.
    pub fn expand(&self) -> Vec<(SurrogateSpec, bool)> {
        let mut out = Vec::new();
        if let Some(g) = &self.sparse_grid {
            for &a in &g.a {
                for &b in &g.b {
                    for &d_in in &g.d_in {
                        for &budget in &g.budget {
                            out.push((
                                SurrogateSpec::SparseGrid(SgParams { a, b, budget, d_in, d_out: g.d_out }),
                                false,
                            ));
                        }
                    }
                }
            }
        }
        if let Some(g) = &self.tensor_train {
            for &nu_max in &g.nu_max {
                for &d_in in &g.d_in {
                    for &rank_cap in &g.rank_cap {
                        out.push((
                            SurrogateSpec::TensorTrain(TtParams {
                                nu_max,
                                schedule: g.schedule,
                                d_in,
                                rank_cap,
                                sweeps: g.sweeps,
                                validation_size: g.validation_size,
                            }),
                            true,
                        ));
                    }
                }
            }
        }
        if let Some(g) = &self.neural {
            for &objective in &g.objective {
                for &width in &g.width {
                    for &depth in &g.depth {
                        for &n_train in &g.n_train {
                            out.push((
                                SurrogateSpec::Neural(NnParams {
                                    objective,
                                    width,
                                    depth,
                                    activation: g.activation,
                                    n_train,
                                    d_in: g.d_in,
                                    d_out: g.d_out,
                                    epochs: g.epochs,
                                    batch_size: g.batch_size,
                                    data_seed: g.data_seed,
                                }),
                                true,
                            ));
                        }
                    }
                }
            }
        }
        out
    }
}

/// A configuration that produced no record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub spec: SurrogateSpec,
    pub s: f64,
    pub seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutcome {
    pub records: Vec<BenchRecord>,
    pub skipped: Vec<SkippedEntry>,
}

/// Fits, scores and times one configuration.
pub fn bench_entry(
    problem: &DiffusionProblem,
    test: &Dataset,
    spec: &SurrogateSpec,
    seed: u64,
    timing: &TimingConfig,
) -> Result<BenchRecord> {
    let fit = fit_surrogate(problem, spec, seed)?;
    let ev = evaluate(&fit.surrogate, test, problem)?;
    let t = measure_eval_time(
        |x| fit.surrogate.predict_batch(x).map(|_| ()),
        &problem.half_widths(fit.surrogate.d_in()),
        &[timing.batch],
        timing.repeats,
        seed,
    )?;
    Ok(BenchRecord {
        kind: spec.kind(),
        s: problem.spec.s,
        hyperparameters: spec.hyperparameters().into_iter().collect::<BTreeMap<_, _>>(),
        n: fit.n_solves,
        n_jac: fit.n_jac,
        n_params: fit.surrogate.map.param_count(),
        t_train: fit.setup_seconds,
        t_eval: t[0].seconds_per_sample,
        eval_batch: timing.batch,
        eps_l2: ev.eps_l2,
        eps_h1: ev.eps_h1,
        seed,
    })
}

/// Loads the shared test set from `dir` when its manifest matches, otherwise
/// generates and stores it.
pub fn shared_test_set(problem: &DiffusionProblem, cfg: &TestConfig, dir: Option<&Path>) -> Result<Dataset> {
    let jd = cfg.jacobian_dims.min(problem.spec.d_true);
    if let Some(dir) = dir {
        if let Ok(store) = BlobStore::open(dir) {
            if let Ok(ds) = Dataset::load(&store) {
                let m = &ds.manifest;
                if m.problem == problem.config && m.seed == Some(cfg.seed) && m.n == cfg.size && m.jacobian_dims == jd {
                    return Ok(ds);
                }
            }
        }
    }
    let ds = build_test_set(problem, cfg.size, cfg.seed, jd)?;
    if let Some(dir) = dir {
        ds.save(&BlobStore::create(dir)?)?;
    }
    Ok(ds)
}

/// Runs the whole grid. Failures of individual entries are recorded in
/// `skipped`; only setup errors (problem or test set) abort the run. With
/// `out`, writes `records.csv`, `records.json`, the report CSVs and one test
/// set directory per smoothness value.
pub fn run_ensemble(cfg: &EnsembleConfig, out: Option<&Path>) -> Result<EnsembleOutcome> {
    let specs = cfg.expand();
    let mut outcome = EnsembleOutcome::default();
    if cfg.seeds.is_empty() && specs.iter().any(|(_, seeded)| *seeded) {
        return Err(SurrogateError::InvalidArgument("seeded surrogates need at least one seed".into()));
    }
    if !specs.is_empty() {
        for s in cfg.smoothness_values() {
            let problem = DiffusionProblem::new(ProblemConfig { s, ..cfg.problem.clone() })?;
            let test_dir = out.map(|o| o.join(format!("test_s{s}")));
            let test = shared_test_set(&problem, &cfg.test, test_dir.as_deref())?;
            for (spec, seeded) in &specs {
                let seeds = if *seeded { cfg.seeds.clone() } else { vec![cfg.seeds.first().copied().unwrap_or(0)] };
                for seed in seeds {
                    match bench_entry(&problem, &test, spec, seed, &cfg.timing) {
                        Ok(r) => outcome.records.push(r),
                        Err(e) => {
                            outcome.skipped.push(SkippedEntry { spec: spec.clone(), s, seed, reason: e.to_string() })
                        }
                    }
                }
            }
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_records_csv(&dir.join("records.csv"), &outcome.records)?;
        std::fs::write(dir.join("records.json"), serde_json::to_string_pretty(&outcome)? + "\n")?;
        write_reports(dir, &outcome.records)?;
    }
    Ok(outcome)
}
