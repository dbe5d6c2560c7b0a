//! Run configuration: one TOML file with a section per pipeline stage.
//!
//! Values are layered: built-in defaults (or the full-scale set under
//! `--full`), then the file, then command-line overrides. The file is merged
//! table by table, so it only needs the keys it changes.

use serde::{Deserialize, Serialize};
use surrogate_core::bench::{EnsembleConfig, NnGrid, SgGrid, TestConfig, TimingConfig, TtGrid};
use surrogate_core::io::sha256_hex;
use surrogate_core::problem::ProblemConfig;
use surrogate_core::surrogate::{SgParams, SurrogateSpec};

use crate::error::CliError;

/// Output space of generated datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    /// Nodal solution values.
    Full,
    /// Coefficients in the output basis written by `basis`.
    Pca,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    /// Leading Matérn functions kept by the input encoder.
    pub d_in: usize,
    /// Rank of the H¹ output PCA.
    pub output_rank: usize,
    /// Forward solves used for the output PCA.
    pub samples: usize,
    pub seed: u64,
}

impl Default for BasisSection {
    fn default() -> Self {
        Self { d_in: 64, output_rank: 64, samples: 128, seed: 11 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub n: usize,
    pub seed: u64,
    pub d_in: usize,
    pub output: Projection,
    pub jacobians: bool,
    /// Differentiated input directions; absent means all `d_in`.
    pub jacobian_dims: Option<usize>,
}

impl Default for GenSection {
    fn default() -> Self {
        Self { n: 64, seed: 1, d_in: 64, output: Projection::Full, jacobians: false, jacobian_dims: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Cross pivots and network initialization.
    pub seed: u64,
    pub surrogate: SurrogateSpec,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            seed: 0,
            surrogate: SurrogateSpec::SparseGrid(SgParams { a: 0.5, b: 1.2, budget: 120, d_in: 64, d_out: 64 }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SparseGrid,
    TensorTrain,
    Neural,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    /// Surrogate families to run; the grids of the others are ignored.
    pub methods: Vec<Method>,
    /// Smoothness values swept; empty means `problem.s` only.
    pub smoothness: Vec<f64>,
    pub seeds: Vec<u64>,
    pub sparse_grid: SgGrid,
    pub tensor_train: TtGrid,
    pub neural: NnGrid,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        let e = EnsembleConfig::default();
        Self::from_ensemble(&e)
    }
}

impl EnsembleSection {
    fn from_ensemble(e: &EnsembleConfig) -> Self {
        Self {
            methods: vec![Method::SparseGrid, Method::TensorTrain, Method::Neural],
            smoothness: e.smoothness.clone(),
            seeds: e.seeds.clone(),
            sparse_grid: e.sparse_grid.clone().unwrap_or_default(),
            tensor_train: e.tensor_train.clone().unwrap_or_default(),
            neural: e.neural.clone().unwrap_or_default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub problem: ProblemConfig,
    pub basis: BasisSection,
    pub gen: GenSection,
    pub fit: FitSection,
    pub test: TestConfig,
    pub timing: TimingConfig,
    pub ensemble: EnsembleSection,
}

impl CliConfig {
    /// Full-scale defaults: 64×64 mesh, `d_true = 1000`, the large ensemble.
    pub fn full() -> Self {
        let e = EnsembleConfig::full();
        Self {
            problem: e.problem.clone(),
            basis: BasisSection { d_in: 200, output_rank: 200, samples: 1000, ..BasisSection::default() },
            gen: GenSection { n: 1000, d_in: 200, ..GenSection::default() },
            fit: FitSection {
                seed: 0,
                surrogate: SurrogateSpec::SparseGrid(SgParams { a: 0.5, b: 1.2, budget: 1000, d_in: 200, d_out: 200 }),
            },
            test: e.test.clone(),
            timing: e.timing.clone(),
            ensemble: EnsembleSection::from_ensemble(&e),
        }
    }

    /// Ensemble driver configuration built from the shared sections.
    pub fn ensemble_config(&self) -> EnsembleConfig {
        let m = &self.ensemble.methods;
        EnsembleConfig {
            problem: self.problem.clone(),
            smoothness: self.ensemble.smoothness.clone(),
            seeds: self.ensemble.seeds.clone(),
            test: self.test.clone(),
            timing: self.timing.clone(),
            sparse_grid: m.contains(&Method::SparseGrid).then(|| self.ensemble.sparse_grid.clone()),
            tensor_train: m.contains(&Method::TensorTrain).then(|| self.ensemble.tensor_train.clone()),
            neural: m.contains(&Method::Neural).then(|| self.ensemble.neural.clone()),
        }
    }

    /// Replaces every stage seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.gen.seed = seed;
        self.fit.seed = seed;
        self.ensemble.seeds = vec![seed];
    }

    /// Cheap range checks, so bad values fail before any solve.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        let bad = |msg: String| Err(CliError::Config(msg));
        if p.grid < 2 {
            return bad(format!("problem.grid must be at least 2, got {}", p.grid));
        }
        if !(p.gamma > 0.0 && p.delta > 0.0) {
            return bad("problem.gamma and problem.delta must be positive".into());
        }
        if !(p.s.is_finite() && p.s > 0.0) {
            return bad(format!("problem.s must be positive, got {}", p.s));
        }
        let dof = (p.grid + 1) * (p.grid + 1);
        if p.d_true == 0 || p.d_true > dof {
            return bad(format!("problem.d_true must lie in 1..={dof}, got {}", p.d_true));
        }
        if self.basis.d_in == 0 || self.basis.d_in > p.d_true {
            return bad(format!("basis.d_in must lie in 1..={}, got {}", p.d_true, self.basis.d_in));
        }
        if self.basis.samples < 2 || self.basis.output_rank == 0 || self.basis.output_rank >= self.basis.samples {
            return bad("basis.output_rank must be positive and below basis.samples".into());
        }
        if self.gen.d_in == 0 || self.gen.d_in > p.d_true {
            return bad(format!("gen.d_in must lie in 1..={}, got {}", p.d_true, self.gen.d_in));
        }
        if let Some(j) = self.gen.jacobian_dims {
            if j == 0 || j > self.gen.d_in {
                return bad(format!("gen.jacobian_dims must lie in 1..={}, got {j}", self.gen.d_in));
            }
        }
        if self.gen.n == 0 {
            return bad("gen.n must be positive".into());
        }
        if self.test.size == 0 {
            return bad("test.size must be positive".into());
        }
        if self.timing.batch == 0 || self.timing.repeats == 0 {
            return bad("timing.batch and timing.repeats must be positive".into());
        }
        for s in &self.ensemble.smoothness {
            if !(s.is_finite() && *s > 0.0) {
                return bad(format!("ensemble.smoothness values must be positive, got {s}"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; identical configs hash equally.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&json)
    }
}

/// Parses `text` layered over `base`.
pub fn parse_config(text: &str, base: &CliConfig) -> Result<CliConfig, CliError> {
    let overlay: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?;
    let mut merged =
        toml::Table::try_from(base).map_err(|e| CliError::Config(format!("cannot serialize defaults: {e}")))?;
    merge(&mut merged, overlay);
    toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| CliError::Config(e.message().to_owned()))
}

/// Recursive table merge; tagged tables (with a `kind` key) replace wholesale
/// so switching surrogate type does not inherit stale keys.
fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("kind") => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// The commented default configuration shipped as `surrogate.example.toml`.
pub const EXAMPLE_CONFIG: &str = include_str!("../surrogate.example.toml");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("", &CliConfig::default()).unwrap(), CliConfig::default());
    }

    #[test]
    fn example_config_matches_defaults() {
        assert_eq!(parse_config(EXAMPLE_CONFIG, &CliConfig::default()).unwrap(), CliConfig::default());
    }

    #[test]
    fn partial_tables_merge() {
        let c = parse_config("[problem]\ns = 3.0\n[ensemble.neural]\nepochs = 5\n", &CliConfig::default()).unwrap();
        assert_eq!(c.problem.s, 3.0);
        assert_eq!(c.problem.grid, 32);
        assert_eq!(c.ensemble.neural.epochs, 5);
        assert_eq!(c.ensemble.neural.width, NnGrid::default().width);
    }

    #[test]
    fn surrogate_kind_switch_replaces_table() {
        let text = r#"
[fit.surrogate]
kind = "neural"
objective = "h1"
width = 8
depth = 2
activation = "tanh"
n_train = 16
d_in = 4
d_out = 4
epochs = 3
batch_size = 4
data_seed = 2
"#;
        let c = parse_config(text, &CliConfig::default()).unwrap();
        assert!(matches!(c.fit.surrogate, SurrogateSpec::Neural(ref p) if p.width == 8));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in ["[problem]\ngird = 3\n", "[nonsense]\n", "problem = 3", "[problem]\ngrid = -1\n", "[["] {
            assert!(matches!(parse_config(text, &CliConfig::default()), Err(CliError::Config(_))), "{text}");
        }
        let c = parse_config("[problem]\ngrid = 1\n", &CliConfig::default()).unwrap();
        assert!(c.validate().is_err());
        assert!(CliConfig::default().validate().is_ok());
        assert!(CliConfig::full().validate().is_ok());
    }

    #[test]
    fn seed_override_and_hash() {
        let mut c = CliConfig::default();
        let h = c.content_hash();
        c.override_seed(9);
        assert_eq!((c.gen.seed, c.fit.seed, c.ensemble.seeds.clone()), (9, 9, vec![9]));
        assert_ne!(c.content_hash(), h);
        assert_eq!(c.content_hash(), c.clone().content_hash());
    }
}
