//! Dataset generation: sample `K^s` inputs, run forward and tangent solves,
//! encode, and persist.
//!
//! Sample `k` of a run with master seed `σ` draws its coefficients from the
//! ChaCha8 stream seeded by `splitmix64(splitmix64(σ) + k)`, so datasets do not
//! depend on thread count or scheduling.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurrogateError};
use crate::io::BlobStore;
use crate::neural::TrainingDataset;
use crate::problem::{DiffusionProblem, ProblemConfig};
use crate::reduced_basis::{sample_ks, ReducedBasis};

/// Where solver outputs go before storage.
#[derive(Clone, Copy, Debug)]
pub enum OutputProjection<'a> {
    /// Nodal values, no reduction.
    Full,
    /// Encoded with the given output basis.
    Basis(&'a ReducedBasis),
}

impl OutputProjection<'_> {
    fn apply(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Self::Full => Ok(y.clone()),
            Self::Basis(b) => b.encode_vec(y),
        }
    }

    fn apply_linear(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Full => z.clone(),
            Self::Basis(b) => &b.encoder * z,
        }
    }

    fn hash(&self) -> String {
        match self {
            Self::Full => "identity".into(),
            Self::Basis(b) => b.content_hash(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    pub n: usize,
    pub seed: u64,
    pub with_jacobians: bool,
    /// Input directions differentiated; `None` means every input coordinate.
    pub jacobian_dims: Option<usize>,
}

/// Generated samples. Rows of the matrices are samples; `jacobians[k]` is
/// `d_out × jacobian_dims`, the derivative with respect to the leading encoded
/// input coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Raw `c ∈ [−1, 1]^{d_true}` per sample.
    pub coeffs: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub jacobians: Option<Vec<DMatrix<f64>>>,
    pub manifest: DatasetManifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub n: usize,
    pub d_true: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub jacobian_dims: usize,
    pub dtype: String,
    pub layout: String,
    pub seed: Option<u64>,
    pub problem: ProblemConfig,
    pub input_encoder: String,
    pub output_encoder: String,
    /// Forward solves spent.
    pub n_solves: usize,
    /// Tangent solves spent.
    pub n_jac: usize,
}

pub const DATASET_FORMAT: &str = "surrogate-dataset/1";

/// Draws `n` inputs from `K^s` and evaluates them.
pub fn generate_dataset(
    problem: &DiffusionProblem,
    input: &ReducedBasis,
    output: OutputProjection<'_>,
    opts: &GenOptions,
) -> Result<Dataset> {
    let coeffs: Vec<DVector<f64>> = (0..opts.n as u64)
        .map(|k| sample_ks(&problem.spec, &problem.psi, opts.seed, k).map(|(c, _)| c))
        .collect::<Result<_>>()?;
    let mut ds = generate_from_coeffs(problem, &coeffs, input, output, opts.with_jacobians, opts.jacobian_dims)?;
    ds.manifest.seed = Some(opts.seed);
    Ok(ds)
}

/// Evaluates the given raw coefficient vectors (each of length `d_true`).
pub fn generate_from_coeffs(
    problem: &DiffusionProblem,
    coeffs: &[DVector<f64>],
    input: &ReducedBasis,
    output: OutputProjection<'_>,
    with_jacobians: bool,
    jacobian_dims: Option<usize>,
) -> Result<Dataset> {
    let d_true = problem.spec.d_true;
    if input.dim() != problem.dof_count() {
        return Err(SurrogateError::DimensionMismatch("input basis lives on a different grid".into()));
    }
    if let OutputProjection::Basis(b) = output {
        if b.dim() != problem.dof_count() {
            return Err(SurrogateError::DimensionMismatch("output basis lives on a different grid".into()));
        }
    }
    if coeffs.iter().any(|c| c.len() != d_true) {
        return Err(SurrogateError::DimensionMismatch(format!("coefficient vectors must have length {d_true}")));
    }
    let jac_dims = if with_jacobians { jacobian_dims.unwrap_or(input.rank()) } else { 0 };
    if with_jacobians && jac_dims == 0 {
        return Err(SurrogateError::InvalidArgument("Jacobian output needs at least one direction".into()));
    }
    if jac_dims > input.rank() {
        return Err(SurrogateError::InvalidArgument(format!(
            "{jac_dims} Jacobian directions requested, input basis has rank {}",
            input.rank()
        )));
    }
    let dirs = input.basis.columns(0, jac_dims).into_owned();
    let (s0, j0) = (problem.n_solves(), problem.n_tangent());

    type Row = (DVector<f64>, DVector<f64>, Option<DMatrix<f64>>);
    let rows: Vec<Row> = coeffs
        .par_iter()
        .map(|c| {
            let x = crate::reduced_basis::field_from_coeffs(&problem.spec, &problem.psi, c)?;
            let sys = problem.factorize(&x)?;
            let y = sys.solve();
            let e = input.encode(&x)?;
            let out = output.apply(&y.values)?;
            let jac =
                if with_jacobians { Some(output.apply_linear(&problem.tangents(&sys, &y, &dirs)?)) } else { None };
            Ok((e, out, jac))
        })
        .collect::<Result<_>>()?;

    let n = coeffs.len();
    let d_in = input.rank();
    let d_out = match output {
        OutputProjection::Full => problem.dof_count(),
        OutputProjection::Basis(b) => b.rank(),
    };
    let coeff_m = DMatrix::from_fn(n, d_true, |k, j| coeffs[k][j]);
    let inputs = DMatrix::from_fn(n, d_in, |k, j| rows[k].0[j]);
    let outputs = DMatrix::from_fn(n, d_out, |k, j| rows[k].1[j]);
    let jacobians = with_jacobians.then(|| rows.into_iter().map(|r| r.2.expect("jacobian computed")).collect());
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        n,
        d_true,
        d_in,
        d_out,
        jacobian_dims: jac_dims,
        dtype: "f64-le".into(),
        layout: "row-major".into(),
        seed: None,
        problem: problem.config.clone(),
        input_encoder: input.content_hash(),
        output_encoder: output.hash(),
        n_solves: problem.n_solves() - s0,
        n_jac: problem.n_tangent() - j0,
    };
    Ok(Dataset { coeffs: coeff_m, inputs, outputs, jacobians, manifest })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    /// Training view restricted to the leading `d_in` inputs (and Jacobian
    /// columns, when present).
    pub fn to_training(&self, d_in: usize) -> Result<TrainingDataset> {
        if d_in > self.inputs.ncols() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "dataset has {} inputs, {d_in} requested",
                self.inputs.ncols()
            )));
        }
        let jac = match &self.jacobians {
            Some(js) if self.manifest.jacobian_dims >= d_in => {
                Some(js.iter().map(|j| j.columns(0, d_in).into_owned()).collect())
            }
            Some(_) => {
                return Err(SurrogateError::MissingJacobians(format!(
                    "dataset has {} Jacobian columns, {d_in} needed",
                    self.manifest.jacobian_dims
                )))
            }
            None => None,
        };
        TrainingDataset::new(self.inputs.columns(0, d_in).into_owned(), self.outputs.clone(), jac)
    }

    /// Writes `manifest.json`, `coeffs.bin`, `inputs.bin`, `outputs.bin` and,
    /// with Jacobians, `jacobians.bin` (shape `n × d_out × jacobian_dims`).
    pub fn save(&self, store: &BlobStore) -> Result<()> {
        store.write_manifest(&self.manifest)?;
        store.write_matrix("coeffs.bin", &self.coeffs)?;
        store.write_matrix("inputs.bin", &self.inputs)?;
        store.write_matrix("outputs.bin", &self.outputs)?;
        if let Some(js) = &self.jacobians {
            let mut flat = Vec::with_capacity(js.len() * self.manifest.d_out * self.manifest.jacobian_dims);
            for j in js {
                flat.extend(crate::io::matrix_to_row_major(j));
            }
            store.write_blob("jacobians.bin", &flat)?;
        }
        Ok(())
    }

    pub fn load(store: &BlobStore) -> Result<Self> {
        let manifest: DatasetManifest = store.read_manifest()?;
        Self::from_parts(manifest, |name, len| store.read_blob(name, len), |name| store.root().join(name).is_file())
    }

    /// Reassembles a dataset from a manifest and a blob reader.
    pub fn from_parts(
        manifest: DatasetManifest,
        mut read: impl FnMut(&str, usize) -> Result<Vec<f64>>,
        has: impl Fn(&str) -> bool,
    ) -> Result<Self> {
        if manifest.format != DATASET_FORMAT || manifest.dtype != "f64-le" || manifest.layout != "row-major" {
            return Err(SurrogateError::Format(format!(
                "unsupported dataset format {} / {} / {}",
                manifest.format, manifest.dtype, manifest.layout
            )));
        }
        let m = &manifest;
        if m.d_true == 0 || m.d_in == 0 || m.d_out == 0 {
            return Err(SurrogateError::Format("dataset dimensions must be positive".into()));
        }
        let size = |a: usize, b: usize| {
            a.checked_mul(b).filter(|&v| v <= 1 << 31).ok_or_else(|| SurrogateError::Format("dataset too large".into()))
        };
        let coeffs = crate::io::matrix_from_row_major(m.n, m.d_true, &read("coeffs.bin", size(m.n, m.d_true)?)?)?;
        let inputs = crate::io::matrix_from_row_major(m.n, m.d_in, &read("inputs.bin", size(m.n, m.d_in)?)?)?;
        let outputs = crate::io::matrix_from_row_major(m.n, m.d_out, &read("outputs.bin", size(m.n, m.d_out)?)?)?;
        let jacobians = if has("jacobians.bin") {
            if m.jacobian_dims == 0 || m.jacobian_dims > m.d_in {
                return Err(SurrogateError::Format("jacobian_dims must lie in 1..=d_in".into()));
            }
            let block = size(m.d_out, m.jacobian_dims)?;
            let flat = read("jacobians.bin", size(m.n, block)?)?;
            Some(
                (0..m.n)
                    .map(|k| {
                        crate::io::matrix_from_row_major(m.d_out, m.jacobian_dims, &flat[k * block..(k + 1) * block])
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self { coeffs, inputs, outputs, jacobians, manifest })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduced_basis::GramKind;

    fn problem() -> DiffusionProblem {
        DiffusionProblem::new(ProblemConfig { grid: 8, s: 2.0, d_true: 12, ..Default::default() }).unwrap()
    }

    #[test]
    fn zero_coefficients_encode_to_zero() {
        let p = problem();
        let input = p.input_basis(5).unwrap();
        let ds = generate_from_coeffs(&p, &[DVector::zeros(12)], &input, OutputProjection::Full, false, None).unwrap();
        assert_eq!(ds.inputs.row(0).amax(), 0.0);
        assert_eq!(ds.manifest.n_solves, 1);
        assert_eq!(ds.manifest.n_jac, 0);
    }

    #[test]
    fn solve_counter_matches_manifest() {
        let p = problem();
        let input = p.input_basis(4).unwrap();
        let opts = GenOptions { n: 5, seed: 3, with_jacobians: true, jacobian_dims: Some(3) };
        let ds = generate_dataset(&p, &input, OutputProjection::Full, &opts).unwrap();
        assert_eq!(ds.manifest.n_solves, 5);
        assert_eq!(ds.manifest.n_jac, 15);
        assert_eq!(p.n_solves(), 5);
        assert_eq!(ds.jacobians.as_ref().unwrap()[0].shape(), (p.dof_count(), 3));
    }

    #[test]
    fn inputs_are_scaled_coefficients() {
        let p = problem();
        let input = p.input_basis(12).unwrap();
        let opts = GenOptions { n: 3, seed: 9, with_jacobians: false, jacobian_dims: None };
        let ds = generate_dataset(&p, &input, OutputProjection::Full, &opts).unwrap();
        for k in 0..3 {
            for j in 0..12 {
                let want = ds.coeffs[(k, j)] * p.spec.weight(j + 1);
                assert!((ds.inputs[(k, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let p = problem();
        let input = p.input_basis(4).unwrap();
        let y: DMatrix<f64> = DMatrix::from_fn(p.dof_count(), 6, |i, k| ((i * 7 + k * 3) % 11) as f64);
        let out = crate::reduced_basis::empirical_pca(&y, &p.ops.h1_gram, 3, GramKind::H1).unwrap();
        let opts = GenOptions { n: 4, seed: 1, with_jacobians: true, jacobian_dims: None };
        let ds = generate_dataset(&p, &input, OutputProjection::Basis(&out), &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::create(dir.path()).unwrap();
        ds.save(&store).unwrap();
        let back = Dataset::load(&store).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn training_view_truncates() {
        let p = problem();
        let input = p.input_basis(6).unwrap();
        let opts = GenOptions { n: 2, seed: 0, with_jacobians: true, jacobian_dims: Some(4) };
        let ds = generate_dataset(&p, &input, OutputProjection::Full, &opts).unwrap();
        let t = ds.to_training(4).unwrap();
        assert_eq!(t.d_in(), 4);
        assert!(ds.to_training(5).is_err());
    }
}
