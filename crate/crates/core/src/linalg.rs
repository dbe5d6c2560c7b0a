//! Small sparse and banded linear-algebra kernels used by the FEM layer and the
//! reduced-basis code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SurrogateError};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let slot = next[r];
            cols[slot] = c;
            vals[slot] = v;
            next[r] += 1;
        }

        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut acc = 0.0;
                while k < row.len() && row[k].0 == c {
                    acc += row[k].1;
                    k += 1;
                }
                indices.push(c);
                values.push(acc);
            }
            indptr.push(indices.len());
        }
        Self { nrows, ncols, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Self {
        Self { nrows: n, ncols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), values: vec![1.0; n] }
    }

    /// Stores every entry of `dense` whose magnitude is nonzero.
    pub fn from_dense(dense: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for r in 0..dense.nrows() {
            for c in 0..dense.ncols() {
                let v = dense[(r, c)];
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        Self::from_triplets(dense.nrows(), dense.ncols(), &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(col, value)` over one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols, "CSR matvec dimension mismatch");
        DVector::from_iterator(self.nrows, (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum::<f64>()))
    }

    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols, "CSR matmul dimension mismatch");
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for j in 0..x.ncols() {
            let col = x.column(j);
            for r in 0..self.nrows {
                out[(r, j)] = self.row(r).map(|(c, v)| v * col[c]).sum::<f64>();
            }
        }
        out
    }

    /// `aᵀ A b`.
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (0..self.nrows).map(|r| a[r] * self.row(r).map(|(c, v)| v * b[c]).sum::<f64>()).sum()
    }

    pub fn norm_sq(&self, a: &DVector<f64>) -> f64 {
        self.inner(a, a)
    }

    pub fn add(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for m in [self, other] {
            for r in 0..m.nrows {
                triplets.extend(m.row(r).map(|(c, v)| (r, c, v)));
            }
        }
        CsrMatrix::from_triplets(self.nrows, self.ncols, &triplets)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out[(r, c)] += v;
            }
        }
        out
    }

    /// Largest |A_ij − A_ji| relative to the largest |A_ij|.
    pub fn symmetry_defect(&self) -> f64 {
        let mut scale: f64 = 0.0;
        let mut defect: f64 = 0.0;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                scale = scale.max(v.abs());
                defect = defect.max((v - self.get(c, r)).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            defect / scale
        }
    }
}

/// Symmetric positive-definite matrix in lower band storage, factorized in place
/// by Cholesky. Row `i` keeps entries `A[i, i-bw..=i]`.
#[derive(Clone, Debug)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
    factorized: bool,
}

impl BandedSpd {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        Self { n, bw: half_bandwidth, data: vec![0.0; n * (half_bandwidth + 1)], factorized: false }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        // j <= i, i - j <= bw
        i * (self.bw + 1) + (self.bw - (i - j))
    }

    /// Adds `v` to the symmetric pair (i, j)/(j, i); only the lower triangle is stored.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(i - j <= self.bw, "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// `A x` for the unfactorized matrix.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factorized, "matvec on a factorized band matrix");
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..i {
                let a = self.data[self.slot(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.data[self.slot(i, i)] * x[i];
        }
        y
    }

    /// In-place banded Cholesky `A = L Lᵀ`.
    pub fn factorize(&mut self) -> Result<()> {
        let bw = self.bw;
        let w = bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let jlo = j.saturating_sub(bw).max(lo);
                let mut sum = self.data[self.slot(i, j)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for k in jlo..j {
                    sum -= self.data[ri + k] * self.data[rj + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(SurrogateError::SolverFailure(format!("non-positive pivot {sum:e} at row {i}")));
                    }
                    let s = self.slot(i, i);
                    self.data[s] = sum.sqrt();
                } else {
                    let d = self.data[self.slot(j, j)];
                    let s = self.slot(i, j);
                    self.data[s] = sum / d;
                }
            }
        }
        self.factorized = true;
        Ok(())
    }

    /// Solves with the stored factor; `factorize` must have succeeded.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factorized, "solve on an unfactorized band matrix");
        let bw = self.bw;
        let w = bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            let mut sum = b[i];
            for k in lo..i {
                sum -= self.data[ri + k] * b[k];
            }
            b[i] = sum / self.data[ri + i];
        }
        for i in (0..self.n).rev() {
            let x = b[i] / self.data[self.slot(i, i)];
            b[i] = x;
            let lo = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            for k in lo..i {
                b[k] -= self.data[ri + k] * x;
            }
        }
    }
}

/// Dense generalized symmetric-definite eigenproblem `A v = θ B v`.
/// Returns eigenvalues ascending and B-orthonormal eigenvectors as columns.
pub fn generalized_symmetric_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| SurrogateError::EigenFailure("right-hand matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv =
        l.clone().try_inverse().ok_or_else(|| SurrogateError::EigenFailure("singular Cholesky factor".into()))?;
    let mut c = &linv * a * linv.transpose();
    c = (&c + c.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::try_new(c, f64::EPSILON, 10_000)
        .ok_or_else(|| SurrogateError::EigenFailure("symmetric QR iteration".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = linv.transpose() * eig.eigenvectors.select_columns(&order);
    Ok((values, vecs))
}

/// Symmetric eigen-decomposition sorted by descending eigenvalue.
pub fn symmetric_eigen_desc(m: DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let sym = (&m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| SurrogateError::EigenFailure("symmetric QR iteration".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    Ok((values, eig.eigenvectors.select_columns(&order)))
}
