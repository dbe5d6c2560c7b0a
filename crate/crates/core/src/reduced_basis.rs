//! Gram-orthonormal reduced bases: PCA from snapshots, analytic bases from known
//! eigenfunctions, encoders/decoders, and sampling of smooth random inputs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurrogateError};
use crate::linalg::{symmetric_eigen_desc, CsrMatrix};
use crate::pde::ScalarField;
use crate::rng;

/// Input smoothness: coefficients of the generating expansion are bounded by
/// `λ_j^s = j^{-s}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSpec {
    pub s: f64,
    pub d_true: usize,
}

impl SmoothnessSpec {
    pub fn new(s: f64, d_true: usize) -> Result<Self> {
        if !(s >= 0.0 && s.is_finite()) || d_true == 0 {
            return Err(SurrogateError::InvalidArgument(format!(
                "smoothness needs s >= 0 and d_true >= 1 (s = {s}, d_true = {d_true})"
            )));
        }
        Ok(Self { s, d_true })
    }

    /// `λ_j = 1/j`, one-based.
    pub fn lambda(j: usize) -> f64 {
        1.0 / j as f64
    }

    /// `λ_j^s` for the one-based index `j`.
    pub fn weight(&self, j: usize) -> f64 {
        Self::lambda(j).powf(self.s)
    }

    /// `(λ_1^p, …, λ_d^p)`.
    pub fn weights(d: usize, p: f64) -> DVector<f64> {
        DVector::from_iterator(d, (1..=d).map(|j| Self::lambda(j).powf(p)))
    }
}

/// Assembles `x(c) = Σ_j c_j j^{-s} ψ_j` from the columns of `psi`.
pub fn field_from_coeffs(spec: &SmoothnessSpec, psi: &DMatrix<f64>, c: &DVector<f64>) -> Result<ScalarField> {
    if c.len() > psi.ncols() {
        return Err(SurrogateError::DimensionMismatch(format!(
            "{} coefficients but only {} basis functions",
            c.len(),
            psi.ncols()
        )));
    }
    let scaled = DVector::from_iterator(c.len(), c.iter().enumerate().map(|(j, v)| v * spec.weight(j + 1)));
    Ok(ScalarField::new(psi.columns(0, c.len()) * scaled))
}

/// Draws `c ~ U[-1, 1]^{d_true}` from the stream `(seed, index)` and the matching field.
pub fn sample_ks(
    spec: &SmoothnessSpec,
    psi: &DMatrix<f64>,
    seed: u64,
    index: u64,
) -> Result<(DVector<f64>, ScalarField)> {
    if spec.d_true > psi.ncols() {
        return Err(SurrogateError::InvalidArgument(format!(
            "d_true = {} exceeds the {} available basis functions",
            spec.d_true,
            psi.ncols()
        )));
    }
    let mut r = rng::stream(seed, index);
    let c = DVector::from_iterator(spec.d_true, (0..spec.d_true).map(|_| r.random_range(-1.0..=1.0)));
    let x = field_from_coeffs(spec, psi, &c)?;
    Ok((c, x))
}

/// Which inner product a basis is orthonormal in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GramKind {
    /// L²(Ω), the FE mass matrix.
    L2,
    /// H¹(Ω), mass plus stiffness.
    H1,
    /// Any other SPD matrix supplied by the caller.
    Custom,
}

/// Affine encoder/decoder pair `x ↦ Bᵀ G (x − m)`, `c ↦ m + B c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedBasis {
    pub mean: DVector<f64>,
    /// `dof × r`, G-orthonormal columns.
    pub basis: DMatrix<f64>,
    /// `r × dof`, equal to `(G B)ᵀ`; kept so encoding needs no Gram matrix.
    pub encoder: DMatrix<f64>,
    pub gram_tag: GramKind,
    pub captured_energy: DVector<f64>,
    pub discarded_energy: f64,
}

impl ReducedBasis {
    /// Wraps columns already G-orthonormal (e.g. known eigenfunctions).
    pub fn from_orthonormal(
        mean: DVector<f64>,
        basis: DMatrix<f64>,
        gram: &CsrMatrix,
        gram_tag: GramKind,
    ) -> Result<Self> {
        if mean.len() != basis.nrows() || gram.nrows() != basis.nrows() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "mean {} / basis {} / gram {} rows disagree",
                mean.len(),
                basis.nrows(),
                gram.nrows()
            )));
        }
        let encoder = gram.mul_mat(&basis).transpose();
        let r = basis.ncols();
        Ok(Self { mean, basis, encoder, gram_tag, captured_energy: DVector::zeros(r), discarded_energy: 0.0 })
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Keeps the leading `r` directions.
    pub fn truncated(&self, r: usize) -> Result<Self> {
        if r > self.rank() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "cannot truncate rank {} basis to {r}",
                self.rank()
            )));
        }
        let tail: f64 = self.captured_energy.iter().skip(r).sum();
        Ok(Self {
            mean: self.mean.clone(),
            basis: self.basis.columns(0, r).into_owned(),
            encoder: self.encoder.rows(0, r).into_owned(),
            gram_tag: self.gram_tag,
            captured_energy: self.captured_energy.rows(0, r.min(self.captured_energy.len())).into_owned(),
            discarded_energy: self.discarded_energy + tail,
        })
    }

    pub fn encode(&self, x: &ScalarField) -> Result<DVector<f64>> {
        self.encode_vec(&x.values)
    }

    pub fn encode_vec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "field has {} values, basis expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(&self.encoder * (x - &self.mean))
    }

    /// Encodes a direction (no mean shift), e.g. a tangent field.
    pub fn encode_linear(&self, h: &DVector<f64>) -> Result<DVector<f64>> {
        if h.len() != self.dim() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "field has {} values, basis expects {}",
                h.len(),
                self.dim()
            )));
        }
        Ok(&self.encoder * h)
    }

    /// SHA-256 over mean, basis and Gram tag; identifies the encoder in manifests.
    pub fn content_hash(&self) -> String {
        let tag = [match self.gram_tag {
            GramKind::L2 => 0.0,
            GramKind::H1 => 1.0,
            GramKind::Custom => 2.0,
        }];
        crate::io::hash_arrays([&tag[..], self.mean.as_slice(), self.basis.as_slice()])
    }

    /// `m + B c` using the first `len(c)` columns.
    pub fn decode(&self, c: &DVector<f64>) -> Result<ScalarField> {
        if c.len() > self.rank() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "{} coefficients for a rank {} basis",
                c.len(),
                self.rank()
            )));
        }
        Ok(ScalarField::new(&self.mean + self.basis.columns(0, c.len()) * c))
    }
}

/// PCA of the columns of `samples` (`dof × N`) in the `gram` inner product,
/// computed through the `N × N` snapshot matrix `X̃ᵀ G X̃`.
///
/// Directions with singular value below `1e-12 σ_max` are dropped, so the
/// returned rank may be smaller than requested.
pub fn empirical_pca(
    samples: &DMatrix<f64>,
    gram: &CsrMatrix,
    rank: usize,
    gram_tag: GramKind,
) -> Result<ReducedBasis> {
    let (m, n) = samples.shape();
    if n < 2 {
        return Err(SurrogateError::InvalidArgument(format!("PCA needs at least 2 samples, got {n}")));
    }
    if gram.nrows() != m || gram.ncols() != m {
        return Err(SurrogateError::DimensionMismatch(format!(
            "gram is {}x{}, samples have {m} rows",
            gram.nrows(),
            gram.ncols()
        )));
    }
    if rank > m.min(n - 1) {
        return Err(SurrogateError::InvalidArgument(format!("rank {rank} exceeds min(dof, N - 1) = {}", m.min(n - 1))));
    }
    let mean = samples.column_mean();
    let mut centered = samples.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let gx = gram.mul_mat(&centered);
    let mut snapshot = centered.transpose() * &gx;
    snapshot = (&snapshot + snapshot.transpose()) * 0.5;
    let (eig, v) = symmetric_eigen_desc(snapshot)?;
    let eig = eig.map(|e| e.max(0.0));
    let sigma_max = eig[0].sqrt();
    let keep = (0..rank).take_while(|&i| eig[i].sqrt() > 1e-12 * sigma_max && eig[i] > 0.0).count();

    let mut basis = DMatrix::zeros(m, keep);
    for i in 0..keep {
        let col = &centered * v.column(i) / eig[i].sqrt();
        basis.set_column(i, &col);
    }
    if keep > 0 {
        // one re-orthonormalization pass against round-off
        let s = basis.transpose() * gram.mul_mat(&basis);
        let s = (&s + s.transpose()) * 0.5;
        let chol = s
            .cholesky()
            .ok_or_else(|| SurrogateError::EigenFailure("PCA basis Gram is not positive definite".into()))?;
        let l = chol.l();
        let lt_inv = l
            .transpose()
            .try_inverse()
            .ok_or_else(|| SurrogateError::EigenFailure("singular PCA basis Gram".into()))?;
        basis *= lt_inv;
    }
    let captured_energy = eig.rows(0, keep).into_owned();
    let discarded_energy = eig.iter().skip(keep).sum::<f64>();
    let encoder = gram.mul_mat(&basis).transpose();
    Ok(ReducedBasis { mean, basis, encoder, gram_tag, captured_energy, discarded_energy })
}

/// `‖J diag(λ_1^{s̃}, …, λ_{d_in}^{s̃})‖_F` with `λ_i = 1/i`.
pub fn xs_weighted_seminorm(j: &DMatrix<f64>, s_tilde: f64) -> f64 {
    let w = SmoothnessSpec::weights(j.ncols(), s_tilde);
    let mut acc = 0.0;
    for (c, col) in j.column_iter().enumerate() {
        acc += w[c] * w[c] * col.norm_squared();
    }
    acc.sqrt()
}
