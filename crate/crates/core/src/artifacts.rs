//! Persistence of reduced bases and fitted operator surrogates.
//!
//! Layout of a surrogate directory:
//!
//! | file | contents |
//! |------|----------|
//! | `manifest.json` | [`SurrogateManifest`] |
//! | `decoder_mean.bin` | `dof` values |
//! | `decoder_basis.bin` | `dof × d_out`, column-major |
//! | `decoder_encoder.bin` | `d_out × dof`, column-major |
//! | `half_widths.bin` | `d_in` values (sparse grid, tensor train) |
//! | `values.bin` | `|Λ| × d_out`, row-major (sparse grid) |
//! | `core_<k>.bin` | core `k` in `(a, i, b) ↦ a + r₀(i + m b)` order (tensor train) |
//! | `w_<k>.bin`, `b_<k>.bin` | layer `k` weights (row-major) and biases (MLP) |
//!
//! Manifest sizes are checked against hard limits before any allocation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Result, SurrogateError};
use crate::io::{BlobStore, PackedBlobs};
use crate::neural::{Activation, Layer, MlpSurrogate};
use crate::reduced_basis::{GramKind, ReducedBasis};
use crate::sparse_grid::{IndexSetParams, MultiIndexSet, SparseGridSurrogate};
use crate::surrogate::{CoefficientMap, OperatorSurrogate, SurrogateKind};
use crate::tensor_train::{Core, DegreeSchedule, TensorTrain, TensorTrainSurrogate};

pub const SURROGATE_FORMAT: &str = "surrogate-operator/1";
pub const BASIS_FORMAT: &str = "reduced-basis/1";

/// Largest accepted array, in values.
const MAX_VALUES: usize = 1 << 28;
/// Largest accepted polynomial degree per coordinate.
const MAX_DEGREE: usize = 4096;

fn checked_size(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_VALUES)
        .ok_or_else(|| SurrogateError::Format(format!("array of shape {dims:?} exceeds the size limit")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisManifest {
    pub format: String,
    pub dof: usize,
    pub rank: usize,
    pub gram: GramKind,
    pub discarded_energy: f64,
    /// SHA-256 of mean, basis and Gram tag.
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapManifest {
    SparseGrid {
        dim: usize,
        index_set: Vec<Vec<u32>>,
        params: Option<IndexSetParams>,
    },
    TensorTrain {
        schedule: DegreeSchedule,
        /// Boundary ranks included: `[1, r₁, …, r_d, 1]`.
        ranks: Vec<usize>,
        converged: bool,
        n_cross: usize,
        n_validation: usize,
    },
    Neural {
        dims: Vec<usize>,
        activation: Activation,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateManifest {
    pub format: String,
    pub kind: SurrogateKind,
    pub dof: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub decoder_gram: GramKind,
    pub map: MapManifest,
}

/// Writes `manifest.json`, `mean.bin`, `basis.bin` (column-major `dof × r`),
/// `encoder.bin` (column-major `r × dof`) and `energy.bin`.
pub fn save_basis(store: &BlobStore, basis: &ReducedBasis) -> Result<()> {
    store.write_manifest(&BasisManifest {
        format: BASIS_FORMAT.into(),
        dof: basis.dim(),
        rank: basis.rank(),
        gram: basis.gram_tag,
        discarded_energy: basis.discarded_energy,
        hash: basis.content_hash(),
    })?;
    store.write_blob("mean.bin", basis.mean.as_slice())?;
    store.write_blob("basis.bin", basis.basis.as_slice())?;
    store.write_blob("encoder.bin", basis.encoder.as_slice())?;
    store.write_blob("energy.bin", basis.captured_energy.as_slice())
}

pub fn load_basis(store: &BlobStore) -> Result<ReducedBasis> {
    let m: BasisManifest = store.read_manifest()?;
    basis_from_parts(&m, |name, len| store.read_blob(name, len))
}

/// Rebuilds a basis from a manifest and a blob reader `(name, len) → values`,
/// verifying the content hash.
pub fn basis_from_parts(
    m: &BasisManifest,
    mut read: impl FnMut(&str, usize) -> Result<Vec<f64>>,
) -> Result<ReducedBasis> {
    if m.format != BASIS_FORMAT {
        return Err(SurrogateError::Format(format!("unsupported basis format {}", m.format)));
    }
    let size = checked_size(&[m.dof, m.rank])?;
    checked_size(&[m.dof])?;
    checked_size(&[m.rank])?;
    let basis = ReducedBasis {
        mean: DVector::from_vec(read("mean.bin", m.dof)?),
        basis: DMatrix::from_vec(m.dof, m.rank, read("basis.bin", size)?),
        encoder: DMatrix::from_vec(m.rank, m.dof, read("encoder.bin", size)?),
        gram_tag: m.gram,
        captured_energy: DVector::from_vec(read("energy.bin", m.rank)?),
        discarded_energy: m.discarded_energy,
    };
    if basis.content_hash() != m.hash {
        return Err(SurrogateError::Format("basis hash does not match its manifest".into()));
    }
    Ok(basis)
}

pub fn save_surrogate(store: &BlobStore, sur: &OperatorSurrogate) -> Result<()> {
    let d = &sur.decoder;
    store.write_blob("decoder_mean.bin", d.mean.as_slice())?;
    store.write_blob("decoder_basis.bin", d.basis.as_slice())?;
    store.write_blob("decoder_encoder.bin", d.encoder.as_slice())?;
    let map = match &sur.map {
        CoefficientMap::SparseGrid(sg) => {
            store.write_blob("half_widths.bin", sg.half_widths().as_slice())?;
            store.write_matrix("values.bin", sg.values())?;
            MapManifest::SparseGrid {
                dim: sg.d_in(),
                index_set: sg.index_set().indices().to_vec(),
                params: sg.index_set().params,
            }
        }
        CoefficientMap::TensorTrain(tt) => {
            store.write_blob("half_widths.bin", tt.half_widths.as_slice())?;
            for (k, c) in tt.tt.cores().iter().enumerate() {
                store.write_blob(&format!("core_{k}.bin"), &c.data)?;
            }
            MapManifest::TensorTrain {
                schedule: tt.schedule.clone(),
                ranks: std::iter::once(1).chain(tt.tt.ranks()).chain(std::iter::once(1)).collect(),
                converged: tt.converged,
                n_cross: tt.n_cross,
                n_validation: tt.n_validation,
            }
        }
        CoefficientMap::Neural(net) => {
            for (k, l) in net.layers.iter().enumerate() {
                store.write_matrix(&format!("w_{k}.bin"), &l.w)?;
                store.write_blob(&format!("b_{k}.bin"), l.b.as_slice())?;
            }
            MapManifest::Neural { dims: net.dims(), activation: net.activation }
        }
    };
    store.write_manifest(&SurrogateManifest {
        format: SURROGATE_FORMAT.into(),
        kind: sur.kind,
        dof: d.dim(),
        d_in: sur.d_in(),
        d_out: sur.d_out(),
        decoder_gram: d.gram_tag,
        map,
    })
}

pub fn load_surrogate(store: &BlobStore) -> Result<OperatorSurrogate> {
    let m: SurrogateManifest = store.read_manifest()?;
    surrogate_from_parts(&m, |name, len| store.read_blob(name, len))
}

/// Rebuilds a surrogate from a manifest and a blob reader `(name, len) → values`.
pub fn surrogate_from_parts(
    m: &SurrogateManifest,
    mut read: impl FnMut(&str, usize) -> Result<Vec<f64>>,
) -> Result<OperatorSurrogate> {
    if m.format != SURROGATE_FORMAT {
        return Err(SurrogateError::Format(format!("unsupported surrogate format {}", m.format)));
    }
    let dec_size = checked_size(&[m.dof, m.d_out])?;
    checked_size(&[m.dof])?;
    checked_size(&[m.d_out])?;
    let mean = DVector::from_vec(read("decoder_mean.bin", m.dof)?);
    let basis = DMatrix::from_vec(m.dof, m.d_out, read("decoder_basis.bin", dec_size)?);
    let encoder = DMatrix::from_vec(m.d_out, m.dof, read("decoder_encoder.bin", dec_size)?);
    let decoder = ReducedBasis {
        mean,
        basis,
        encoder,
        gram_tag: m.decoder_gram,
        captured_energy: DVector::zeros(m.d_out),
        discarded_energy: 0.0,
    };
    let map = match &m.map {
        MapManifest::SparseGrid { dim, index_set, params } => {
            if *dim != m.d_in {
                return Err(SurrogateError::Format("index set dimension differs from d_in".into()));
            }
            checked_size(&[index_set.len(), *dim])?;
            if index_set.iter().flatten().any(|&v| v as usize > MAX_DEGREE) {
                return Err(SurrogateError::Format(format!("index set degree exceeds {MAX_DEGREE}")));
            }
            let mut set = MultiIndexSet::from_indices(*dim, index_set.clone())?;
            set.params = *params;
            let hw = DVector::from_vec(read("half_widths.bin", *dim)?);
            let n = set.len();
            let values =
                crate::io::matrix_from_row_major(n, m.d_out, &read("values.bin", checked_size(&[n, m.d_out])?)?)?;
            CoefficientMap::SparseGrid(SparseGridSurrogate::from_parts(set, hw, values)?)
        }
        MapManifest::TensorTrain { schedule, ranks, converged, n_cross, n_validation } => {
            let d = schedule.nu.len();
            if d != m.d_in || ranks.len() != d + 2 || schedule.nu.iter().any(|&v| v > MAX_DEGREE) {
                return Err(SurrogateError::Format("tensor-train manifest is inconsistent".into()));
            }
            let mut modes = vec![m.d_out];
            modes.extend(schedule.nu.iter().map(|v| v + 1));
            let mut cores = Vec::with_capacity(d + 1);
            for (k, &mk) in modes.iter().enumerate() {
                let len = checked_size(&[ranks[k], mk, ranks[k + 1]])?;
                cores.push(Core::from_data(ranks[k], mk, ranks[k + 1], read(&format!("core_{k}.bin"), len)?)?);
            }
            let hw = DVector::from_vec(read("half_widths.bin", d)?);
            let tt = TensorTrain::new(cores)?;
            CoefficientMap::TensorTrain(TensorTrainSurrogate::from_parts(
                tt,
                schedule.clone(),
                hw,
                *converged,
                *n_cross,
                *n_validation,
            )?)
        }
        MapManifest::Neural { dims, activation } => {
            if dims.len() < 2 || dims[0] != m.d_in || dims[dims.len() - 1] != m.d_out {
                return Err(SurrogateError::Format("network dims disagree with d_in / d_out".into()));
            }
            let mut layers = Vec::with_capacity(dims.len() - 1);
            for (k, p) in dims.windows(2).enumerate() {
                let w = read(&format!("w_{k}.bin"), checked_size(&[p[1], p[0]])?)?;
                let b = read(&format!("b_{k}.bin"), checked_size(&[p[1]])?)?;
                layers.push(Layer { w: crate::io::matrix_from_row_major(p[1], p[0], &w)?, b: DVector::from_vec(b) });
            }
            CoefficientMap::Neural(MlpSurrogate::from_layers(layers, *activation)?)
        }
    };
    OperatorSurrogate::new(m.kind, map, decoder)
}

/// Decodes a basis packed as manifest JSON, a NUL byte, then the blobs in read order.
pub fn basis_from_packed(bytes: &[u8]) -> Result<ReducedBasis> {
    let (manifest, mut blobs) = PackedBlobs::split(bytes);
    basis_from_parts(&serde_json::from_slice(manifest)?, |name, len| blobs.read(name, len))
}

/// Decodes a surrogate packed as manifest JSON, a NUL byte, then the blobs in read order.
pub fn surrogate_from_packed(bytes: &[u8]) -> Result<OperatorSurrogate> {
    let (manifest, mut blobs) = PackedBlobs::split(bytes);
    surrogate_from_parts(&serde_json::from_slice(manifest)?, |name, len| blobs.read(name, len))
}

/// Decodes a dataset packed as manifest JSON, a NUL byte, then the blobs in read
/// order; Jacobians are present when bytes remain after the outputs.
pub fn dataset_from_packed(bytes: &[u8]) -> Result<Dataset> {
    let (manifest, blobs) = PackedBlobs::split(bytes);
    let blobs = std::cell::RefCell::new(blobs);
    Dataset::from_parts(
        serde_json::from_slice(manifest)?,
        |name, len| blobs.borrow_mut().read(name, len),
        |_| !blobs.borrow().is_empty(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Objective;
    use crate::problem::{DiffusionProblem, ProblemConfig};
    use crate::surrogate::{fit_surrogate, NnParams, SgParams, SurrogateSpec, TtParams};
    use crate::tensor_train::ScheduleMode;

    fn roundtrip(spec: SurrogateSpec) {
        let p = DiffusionProblem::new(ProblemConfig { grid: 6, s: 2.0, d_true: 10, ..Default::default() }).unwrap();
        let fit = fit_surrogate(&p, &spec, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::create(dir.path()).unwrap();
        save_surrogate(&store, &fit.surrogate).unwrap();
        let back = load_surrogate(&store).unwrap();
        let e = DVector::from_fn(fit.surrogate.d_in(), |i, _| 0.1 / (i + 1) as f64);
        assert_eq!(back.predict(&e).unwrap(), fit.surrogate.predict(&e).unwrap());
        assert_eq!(back.kind, fit.surrogate.kind);
    }

    #[test]
    fn sparse_grid_roundtrip() {
        roundtrip(SurrogateSpec::SparseGrid(SgParams { a: 1.0, b: 1.0, budget: 12, d_in: 3, d_out: 5 }));
    }

    #[test]
    fn tensor_train_roundtrip() {
        roundtrip(SurrogateSpec::TensorTrain(TtParams {
            nu_max: 2,
            schedule: ScheduleMode::Iso,
            d_in: 2,
            rank_cap: 2,
            sweeps: 1,
            validation_size: 4,
        }));
    }

    #[test]
    fn neural_roundtrip() {
        roundtrip(SurrogateSpec::Neural(NnParams {
            objective: Objective::L2,
            width: 4,
            depth: 2,
            activation: Activation::Tanh,
            n_train: 6,
            d_in: 3,
            d_out: 3,
            epochs: 2,
            batch_size: 3,
            data_seed: 0,
        }));
    }

    #[test]
    fn basis_roundtrip_and_tamper_detection() {
        let p = DiffusionProblem::new(ProblemConfig { grid: 4, d_true: 5, ..Default::default() }).unwrap();
        let b = p.input_basis(5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::create(dir.path()).unwrap();
        save_basis(&store, &b).unwrap();
        assert_eq!(load_basis(&store).unwrap(), b);
        let mut mean = b.mean.clone();
        mean[0] = 1.0;
        store.write_blob("mean.bin", mean.as_slice()).unwrap();
        assert!(load_basis(&store).is_err());
    }

    #[test]
    fn oversized_manifest_is_rejected_before_reading() {
        let m = SurrogateManifest {
            format: SURROGATE_FORMAT.into(),
            kind: SurrogateKind::RbSg,
            dof: usize::MAX / 2,
            d_in: 1,
            d_out: 4,
            decoder_gram: GramKind::H1,
            map: MapManifest::Neural { dims: vec![1, 4], activation: Activation::Gelu },
        };
        let err = surrogate_from_parts(&m, |_, _| panic!("must not read")).unwrap_err();
        assert!(matches!(err, SurrogateError::Format(_)));
    }
}
