//! Tensor-train storage, entry evaluation, dense reconstruction and SVD rounding.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SurrogateError};

/// Three-way core `r0 × m × r1`. Entry `(a, i, b)` lives at `a + r0 (i + m b)`, so
/// the buffer is simultaneously the column-major left unfolding `(r0 m) × r1`
/// and right unfolding `r0 × (m r1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Core {
    pub r0: usize,
    pub m: usize,
    pub r1: usize,
    pub data: Vec<f64>,
}

impl Core {
    pub fn zeros(r0: usize, m: usize, r1: usize) -> Self {
        Self { r0, m, r1, data: vec![0.0; r0 * m * r1] }
    }

    pub fn from_data(r0: usize, m: usize, r1: usize, data: Vec<f64>) -> Result<Self> {
        let len = r0
            .checked_mul(m)
            .and_then(|v| v.checked_mul(r1))
            .ok_or_else(|| SurrogateError::Format("core size overflows".into()))?;
        if data.len() != len {
            return Err(SurrogateError::DimensionMismatch(format!(
                "core {r0}x{m}x{r1} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { r0, m, r1, data })
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[a + self.r0 * (i + self.m * b)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, v: f64) {
        self.data[a + self.r0 * (i + self.m * b)] = v;
    }

    pub fn left_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.r0 * self.m, self.r1, &self.data)
    }

    pub fn right_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.r0, self.m * self.r1, &self.data)
    }

    pub fn from_left_unfolding(r0: usize, m: usize, mat: &DMatrix<f64>) -> Self {
        debug_assert_eq!(mat.nrows(), r0 * m);
        Self { r0, m, r1: mat.ncols(), data: mat.as_slice().to_vec() }
    }

    pub fn from_right_unfolding(m: usize, r1: usize, mat: &DMatrix<f64>) -> Self {
        debug_assert_eq!(mat.ncols(), m * r1);
        Self { r0: mat.nrows(), m, r1, data: mat.as_slice().to_vec() }
    }

    /// Slice `G(:, i, :)` as an `r0 × r1` matrix.
    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.r0, self.r1, |a, b| self.get(a, i, b))
    }

    /// `Σ_i w_i G(:, i, :)`.
    pub fn contract(&self, w: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.r0, self.r1);
        for b in 0..self.r1 {
            for (i, &wi) in w.iter().enumerate() {
                if wi == 0.0 {
                    continue;
                }
                let base = self.r0 * (i + self.m * b);
                for a in 0..self.r0 {
                    out[(a, b)] += wi * self.data[base + a];
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorTrain {
    cores: Vec<Core>,
}

impl TensorTrain {
    /// Checks boundary ranks of one and matching inner ranks.
    pub fn new(cores: Vec<Core>) -> Result<Self> {
        if cores.is_empty() {
            return Err(SurrogateError::InvalidArgument("tensor train needs at least one core".into()));
        }
        if cores[0].r0 != 1 || cores[cores.len() - 1].r1 != 1 {
            return Err(SurrogateError::DimensionMismatch("boundary ranks must be 1".into()));
        }
        for k in 1..cores.len() {
            if cores[k - 1].r1 != cores[k].r0 {
                return Err(SurrogateError::DimensionMismatch(format!(
                    "rank mismatch between cores {} and {k}: {} vs {}",
                    k - 1,
                    cores[k - 1].r1,
                    cores[k].r0
                )));
            }
        }
        if cores.iter().any(|c| c.m == 0) {
            return Err(SurrogateError::DimensionMismatch("empty mode".into()));
        }
        Ok(Self { cores })
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [Core] {
        &mut self.cores
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.m).collect()
    }

    /// Inner ranks `r_0, …, r_{d-1}`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores[..self.cores.len() - 1].iter().map(|c| c.r1).collect()
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    /// Total stored reals, `Σ_k r_{k-1} m_k r_k`.
    pub fn storage(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    pub fn entry(&self, idx: &[usize]) -> f64 {
        let mut v = DVector::from_element(1, 1.0);
        for (core, &i) in self.cores.iter().zip(idx) {
            v = core.slice(i).tr_mul(&v);
        }
        v[0]
    }

    /// Dense tensor, first index fastest. Intended for small test sizes.
    pub fn full(&self) -> Vec<f64> {
        let mut acc = DMatrix::from_element(1, 1, 1.0);
        let mut rows = 1;
        for core in &self.cores {
            // acc: (rows) × r0  →  (rows·m) × r1
            let mut next = DMatrix::zeros(rows * core.m, core.r1);
            for i in 0..core.m {
                let s = acc.clone() * core.slice(i);
                for r in 0..rows {
                    for b in 0..core.r1 {
                        next[(r + rows * i, b)] = s[(r, b)];
                    }
                }
            }
            rows *= core.m;
            acc = next;
        }
        acc.as_slice().to_vec()
    }

    /// Frobenius norm via successive Gram contractions.
    pub fn norm(&self) -> f64 {
        let mut g = DMatrix::from_element(1, 1, 1.0);
        for core in &self.cores {
            let mut next = DMatrix::zeros(core.r1, core.r1);
            for i in 0..core.m {
                let s = core.slice(i);
                next += s.transpose() * &g * s;
            }
            g = next;
        }
        g[(0, 0)].max(0.0).sqrt()
    }

    pub fn scale(&mut self, alpha: f64) {
        self.cores[0].data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Right-to-left QR sweep leaving cores `1..` right-orthogonal.
    pub fn right_orthogonalize(&mut self) {
        for k in (1..self.cores.len()).rev() {
            let core = &self.cores[k];
            let (m, r1) = (core.m, core.r1);
            let qr = core.right_unfolding().transpose().qr();
            let q = qr.q(); // (m r1) × min
            let r = qr.r(); // min × r0
            self.cores[k] = Core::from_right_unfolding(m, r1, &q.transpose());
            let prev = &self.cores[k - 1];
            let left = prev.left_unfolding() * r.transpose();
            self.cores[k - 1] = Core::from_left_unfolding(prev.r0, prev.m, &left);
        }
    }

    /// Largest deviation of `GᵀG` from the identity over the left unfoldings of
    /// cores `0..d-1`.
    pub fn left_orthogonality_defect(&self) -> f64 {
        self.cores[..self.cores.len() - 1]
            .iter()
            .map(|c| {
                let l = c.left_unfolding();
                (l.transpose() * &l - DMatrix::identity(c.r1, c.r1)).amax()
            })
            .fold(0.0, f64::max)
    }

    /// Quasi-optimal recompression with relative Frobenius error at most `rel_tol`.
    pub fn round(&self, rel_tol: f64) -> Result<Self> {
        if !(rel_tol > 0.0 && rel_tol < 1.0) {
            return Err(SurrogateError::InvalidArgument(format!(
                "rounding tolerance must lie in (0, 1), got {rel_tol}"
            )));
        }
        let mut tt = self.clone();
        tt.right_orthogonalize();
        let d = tt.cores.len();
        if d == 1 {
            return Ok(tt);
        }
        let norm = tt.cores[0].data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let delta = rel_tol / ((d - 1) as f64).sqrt() * norm;
        for k in 0..d - 1 {
            let core = &tt.cores[k];
            let (r0, m) = (core.r0, core.m);
            let svd = core.left_unfolding().svd(true, true);
            let (u, s, vt) = match (svd.u, svd.v_t) {
                (Some(u), Some(vt)) => (u, svd.singular_values, vt),
                _ => return Err(SurrogateError::EigenFailure("SVD in TT rounding".into())),
            };
            let keep = truncation_rank(s.as_slice(), delta);
            let u = u.columns(0, keep).into_owned();
            let sv = DMatrix::from_diagonal(&s.rows(0, keep).into_owned()) * vt.rows(0, keep);
            tt.cores[k] = Core::from_left_unfolding(r0, m, &u);
            let next = &tt.cores[k + 1];
            let right = sv * next.right_unfolding();
            tt.cores[k + 1] = Core::from_right_unfolding(next.m, next.r1, &right);
        }
        Ok(tt)
    }
}

/// Smallest rank (at least one) whose discarded tail `sqrt(Σ σ_i²)` is at most `delta`.
pub(crate) fn truncation_rank(s: &[f64], delta: f64) -> usize {
    let mut tail = 0.0;
    let mut keep = s.len();
    while keep > 1 {
        let next = tail + s[keep - 1] * s[keep - 1];
        if next.sqrt() > delta {
            break;
        }
        tail = next;
        keep -= 1;
    }
    keep.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_tt(modes: &[usize], ranks: &[usize], seed: u64) -> TensorTrain {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cores = Vec::new();
        for (k, &m) in modes.iter().enumerate() {
            let r0 = if k == 0 { 1 } else { ranks[k - 1] };
            let r1 = if k + 1 == modes.len() { 1 } else { ranks[k] };
            let data = (0..r0 * m * r1).map(|_| rng.random_range(-1.0..1.0)).collect();
            cores.push(Core::from_data(r0, m, r1, data).unwrap());
        }
        TensorTrain::new(cores).unwrap()
    }

    #[test]
    fn unfoldings_share_layout() {
        let c = Core::from_data(2, 3, 2, (0..12).map(f64::from).collect()).unwrap();
        let l = c.left_unfolding();
        let r = c.right_unfolding();
        for a in 0..2 {
            for i in 0..3 {
                for b in 0..2 {
                    assert_eq!(l[(a + 2 * i, b)], c.get(a, i, b));
                    assert_eq!(r[(a, i + 3 * b)], c.get(a, i, b));
                }
            }
        }
    }

    #[test]
    fn rejects_rank_mismatch() {
        let a = Core::zeros(1, 2, 2);
        let b = Core::zeros(3, 2, 1);
        assert!(TensorTrain::new(vec![a, b]).is_err());
        assert!(TensorTrain::new(vec![Core::zeros(2, 2, 1)]).is_err());
    }

    #[test]
    fn norm_matches_dense() {
        let tt = random_tt(&[3, 4, 2, 3], &[2, 3, 2], 4);
        let dense = tt.full();
        let n = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((tt.norm() - n).abs() < 1e-12 * n);
        // column-major index of (2, 1, 0, 2) with mode sizes (3, 4, 2, 3)
        let flat = 2 + 3 * (1 + 4 * (2 * 2));
        assert!((tt.entry(&[2, 1, 0, 2]) - dense[flat]).abs() < 1e-13);
    }

    #[test]
    fn rounding_shrinks_padded_ranks() {
        let tt = random_tt(&[3, 3, 3], &[2, 2], 9);
        // pad every inner rank with zero directions
        let mut cores = Vec::new();
        for (k, c) in tt.cores().iter().enumerate() {
            let r0 = if k == 0 { 1 } else { c.r0 + 2 };
            let r1 = if k == 2 { 1 } else { c.r1 + 2 };
            let mut p = Core::zeros(r0, c.m, r1);
            for a in 0..c.r0 {
                for i in 0..c.m {
                    for b in 0..c.r1 {
                        p.set(a, i, b, c.get(a, i, b));
                    }
                }
            }
            cores.push(p);
        }
        let padded = TensorTrain::new(cores).unwrap();
        let r = padded.round(1e-12).unwrap();
        assert_eq!(r.ranks(), vec![2, 2]);
        assert!(r.left_orthogonality_defect() < 1e-10);
    }

    #[test]
    fn truncation_rank_keeps_one() {
        assert_eq!(truncation_rank(&[3.0, 0.0, 0.0], 0.1), 1);
        assert_eq!(truncation_rank(&[3.0, 2.0, 1e-9], 1e-6), 2);
        assert_eq!(truncation_rank(&[1.0], 10.0), 1);
    }
}
