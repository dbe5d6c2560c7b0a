//! Q1 finite elements for `−∇·(e^x ∇y) = 1` on the unit square with homogeneous
//! Dirichlet data, its linearization, and the Matérn-type input eigenbasis.
//!
//! Nodes are numbered lexicographically, row-major: node `(ix, iy)` has index
//! `iy * (n + 1) + ix` and sits at `(ix / n, iy / n)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurrogateError};
use crate::linalg::{generalized_symmetric_eigen, BandedSpd, CsrMatrix};

/// Uniform grid of `n × n` square cells on `[0, 1]²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid2D {
    n_cells_per_side: usize,
}

impl Grid2D {
    pub fn new(n_cells_per_side: usize) -> Result<Self> {
        if n_cells_per_side < 2 {
            return Err(SurrogateError::InvalidArgument(format!(
                "grid needs at least 2 cells per side, got {n_cells_per_side}"
            )));
        }
        Ok(Self { n_cells_per_side })
    }

    pub fn n_cells_per_side(&self) -> usize {
        self.n_cells_per_side
    }

    pub fn nodes_per_side(&self) -> usize {
        self.n_cells_per_side + 1
    }

    pub fn dof_count(&self) -> usize {
        self.nodes_per_side() * self.nodes_per_side()
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n_cells_per_side as f64
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> usize {
        iy * self.nodes_per_side() + ix
    }

    pub fn coords(&self, node: usize) -> (f64, f64) {
        let m = self.nodes_per_side();
        let h = self.spacing();
        ((node % m) as f64 * h, (node / m) as f64 * h)
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let m = self.nodes_per_side();
        let (ix, iy) = (node % m, node / m);
        ix == 0 || iy == 0 || ix + 1 == m || iy + 1 == m
    }

    /// Global node indices of a cell in local order (0,0), (1,0), (0,1), (1,1).
    #[inline]
    fn cell_nodes(&self, cx: usize, cy: usize) -> [usize; 4] {
        [self.node(cx, cy), self.node(cx + 1, cy), self.node(cx, cy + 1), self.node(cx + 1, cy + 1)]
    }

    /// Interior numbering used by the Dirichlet-reduced system.
    #[inline]
    fn interior_index(&self, node: usize) -> Option<usize> {
        let m = self.nodes_per_side();
        let (ix, iy) = (node % m, node / m);
        if ix == 0 || iy == 0 || ix + 1 == m || iy + 1 == m {
            None
        } else {
            Some((iy - 1) * (m - 2) + (ix - 1))
        }
    }

    fn interior_count(&self) -> usize {
        (self.n_cells_per_side - 1) * (self.n_cells_per_side - 1)
    }
}

/// A Q1 nodal field (input log-permeability or solution).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub values: DVector<f64>,
}

impl ScalarField {
    pub fn new(values: DVector<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(grid: &Grid2D) -> Self {
        Self { values: DVector::zeros(grid.dof_count()) }
    }

    pub fn constant(grid: &Grid2D, c: f64) -> Self {
        Self { values: DVector::from_element(grid.dof_count(), c) }
    }

    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            values: DVector::from_iterator(
                grid.dof_count(),
                (0..grid.dof_count()).map(|i| {
                    let (x, y) = grid.coords(i);
                    f(x, y)
                }),
            ),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// 2×2 Gauss rule on the reference cell `[0,1]²` with precomputed Q1 data.
struct Quadrature {
    /// shape[q][a]
    shape: [[f64; 4]; 4],
    /// stiff[q][a][b] = ¼ ∇̂N_a·∇̂N_b at point q (the h-scaling cancels in 2D)
    stiff: [[[f64; 4]; 4]; 4],
}

impl Quadrature {
    fn new() -> Self {
        let g = 0.5 / 3f64.sqrt();
        let pts = [0.5 - g, 0.5 + g];
        let mut shape = [[0.0; 4]; 4];
        let mut stiff = [[[0.0; 4]; 4]; 4];
        let mut q = 0;
        for &v in &pts {
            for &u in &pts {
                let phi = |s: usize, t: f64| if s == 0 { 1.0 - t } else { t };
                let dphi = |s: usize| if s == 0 { -1.0 } else { 1.0 };
                let mut grad = [[0.0; 2]; 4];
                for a in 0..4 {
                    let (sx, sy) = (a & 1, a >> 1);
                    shape[q][a] = phi(sx, u) * phi(sy, v);
                    grad[a] = [dphi(sx) * phi(sy, v), phi(sx, u) * dphi(sy)];
                }
                for a in 0..4 {
                    for b in 0..4 {
                        stiff[q][a][b] = 0.25 * (grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1]);
                    }
                }
                q += 1;
            }
        }
        Self { shape, stiff }
    }

    /// Q1 interpolation of a nodal field at the four Gauss points of a cell.
    #[inline]
    fn at_points(&self, local: &[f64; 4]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for q in 0..4 {
            out[q] = (0..4).map(|a| self.shape[q][a] * local[a]).sum();
        }
        out
    }
}

/// Matrices shared by every solve on a grid.
#[derive(Clone, Debug)]
pub struct FemOperators {
    pub grid: Grid2D,
    /// L²(Ω) Gram matrix.
    pub mass: CsrMatrix,
    /// Unit-coefficient stiffness (no boundary conditions applied).
    pub stiffness_unit: CsrMatrix,
    /// H¹(Ω) Gram, `mass + stiffness_unit`.
    pub h1_gram: CsrMatrix,
    pub dirichlet_dofs: Vec<usize>,
}

/// Assembles mass, unit stiffness and H¹ Gram on `grid`.
pub fn assemble_fem(grid: Grid2D) -> FemOperators {
    let quad = Quadrature::new();
    let h = grid.spacing();
    let n = grid.n_cells_per_side();
    let mut mass_t = Vec::with_capacity(16 * n * n);
    let mut stiff_t = Vec::with_capacity(16 * n * n);
    for cy in 0..n {
        for cx in 0..n {
            let nodes = grid.cell_nodes(cx, cy);
            for a in 0..4 {
                for b in 0..4 {
                    let mut m = 0.0;
                    let mut k = 0.0;
                    for q in 0..4 {
                        m += 0.25 * h * h * quad.shape[q][a] * quad.shape[q][b];
                        k += quad.stiff[q][a][b];
                    }
                    mass_t.push((nodes[a], nodes[b], m));
                    stiff_t.push((nodes[a], nodes[b], k));
                }
            }
        }
    }
    let dofs = grid.dof_count();
    let mass = CsrMatrix::from_triplets(dofs, dofs, &mass_t);
    let stiffness_unit = CsrMatrix::from_triplets(dofs, dofs, &stiff_t);
    let h1_gram = mass.add(&stiffness_unit);
    let dirichlet_dofs = (0..dofs).filter(|&i| grid.is_boundary(i)).collect();
    FemOperators { grid, mass, stiffness_unit, h1_gram, dirichlet_dofs }
}

/// Factorized Dirichlet-reduced system `A(x)` for one input field. Reused by
/// every tangent solve at the same `x`.
#[derive(Clone, Debug)]
pub struct DiffusionSystem {
    grid: Grid2D,
    /// e^x at the Gauss points, `[cell][q]`.
    coeff: Vec<[f64; 4]>,
    factor: BandedSpd,
    rhs: Vec<f64>,
}

impl DiffusionSystem {
    /// Assembles and factorizes `A(x)`.
    pub fn factorize(ops: &FemOperators, x: &ScalarField) -> Result<Self> {
        let (matrix, coeff, rhs) = assemble_system(ops, x)?;
        let mut factor = matrix;
        factor.factorize()?;
        Ok(Self { grid: ops.grid, coeff, factor, rhs })
    }

    /// Forward solution with exact zeros on the boundary.
    pub fn solve(&self) -> ScalarField {
        let mut u = self.rhs.clone();
        self.factor.solve_in_place(&mut u);
        self.scatter(&u)
    }

    /// Directional derivative `z = D𝓖(x)[h]` given the forward solution `y`:
    /// `−∇·(e^x ∇z) = ∇·(h e^x ∇y)`, `z = 0` on the boundary.
    pub fn tangent(&self, y: &ScalarField, h: &ScalarField) -> Result<ScalarField> {
        let rhs = self.tangent_rhs(y, h)?;
        let mut u = rhs;
        self.factor.solve_in_place(&mut u);
        Ok(self.scatter(&u))
    }

    /// Interior right-hand side of the tangent problem, `−K(h e^x) y`.
    pub fn tangent_rhs(&self, y: &ScalarField, h: &ScalarField) -> Result<Vec<f64>> {
        let grid = self.grid;
        if y.len() != grid.dof_count() || h.len() != grid.dof_count() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "tangent solve expects fields of length {}",
                grid.dof_count()
            )));
        }
        if !h.is_finite() {
            return Err(SurrogateError::InvalidArgument("direction field has non-finite entries".into()));
        }
        let quad = Quadrature::new();
        let n = grid.n_cells_per_side();
        let mut rhs = vec![0.0; grid.interior_count()];
        for cy in 0..n {
            for cx in 0..n {
                let nodes = grid.cell_nodes(cx, cy);
                let hl = nodes.map(|i| h.values[i]);
                let yl = nodes.map(|i| y.values[i]);
                let hq = quad.at_points(&hl);
                let kq = self.coeff[cy * n + cx];
                for a in 0..4 {
                    let Some(ia) = grid.interior_index(nodes[a]) else { continue };
                    let mut acc = 0.0;
                    for q in 0..4 {
                        let w = hq[q] * kq[q];
                        for b in 0..4 {
                            acc += w * quad.stiff[q][a][b] * yl[b];
                        }
                    }
                    rhs[ia] -= acc;
                }
            }
        }
        Ok(rhs)
    }

    fn scatter(&self, interior: &[f64]) -> ScalarField {
        let grid = self.grid;
        let mut out = DVector::zeros(grid.dof_count());
        for node in 0..grid.dof_count() {
            if let Some(i) = grid.interior_index(node) {
                out[node] = interior[i];
            }
        }
        ScalarField::new(out)
    }
}

/// Dirichlet-reduced `A(x)`, Gauss-point coefficients and load vector.
fn assemble_system(ops: &FemOperators, x: &ScalarField) -> Result<(BandedSpd, Vec<[f64; 4]>, Vec<f64>)> {
    let grid = ops.grid;
    if x.len() != grid.dof_count() {
        return Err(SurrogateError::DimensionMismatch(format!(
            "input field has {} values, grid has {} nodes",
            x.len(),
            grid.dof_count()
        )));
    }
    if !x.is_finite() {
        return Err(SurrogateError::InvalidArgument("input field has non-finite entries".into()));
    }
    let quad = Quadrature::new();
    let n = grid.n_cells_per_side();
    let h = grid.spacing();
    let mut a = BandedSpd::zeros(grid.interior_count(), n);
    let mut rhs = vec![0.0; grid.interior_count()];
    let mut coeff = Vec::with_capacity(n * n);
    for cy in 0..n {
        for cx in 0..n {
            let nodes = grid.cell_nodes(cx, cy);
            let xl = nodes.map(|i| x.values[i]);
            let kq = quad.at_points(&xl).map(f64::exp);
            if kq.iter().any(|k| !k.is_finite()) {
                return Err(SurrogateError::SolverFailure(format!(
                    "diffusion coefficient overflow in cell ({cx}, {cy})"
                )));
            }
            coeff.push(kq);
            let interior = nodes.map(|i| grid.interior_index(i));
            for ai in 0..4 {
                let Some(ia) = interior[ai] else { continue };
                rhs[ia] += 0.25 * h * h * quad.shape.iter().map(|s| s[ai]).sum::<f64>();
                for bi in 0..=ai {
                    let Some(ib) = interior[bi] else { continue };
                    let v: f64 = (0..4).map(|q| kq[q] * quad.stiff[q][ai][bi]).sum();
                    if ia == ib {
                        a.add(ia, ia, v);
                    } else {
                        a.add(ia, ib, v);
                    }
                }
            }
        }
    }
    Ok((a, coeff, rhs))
}

/// Forward solve `y = 𝓖(x)`.
pub fn solve_diffusion(ops: &FemOperators, x: &ScalarField) -> Result<ScalarField> {
    Ok(DiffusionSystem::factorize(ops, x)?.solve())
}

/// Tangent solve at `(x, y)` in direction `h`. Prefer [`DiffusionSystem::tangent`]
/// when solving for several directions at the same `x`.
pub fn solve_tangent(ops: &FemOperators, x: &ScalarField, y: &ScalarField, h: &ScalarField) -> Result<ScalarField> {
    DiffusionSystem::factorize(ops, x)?.tangent(y, h)
}

/// Relative residual `‖A(x) y − b‖ / ‖b‖` over interior nodes.
pub fn forward_residual(ops: &FemOperators, x: &ScalarField, y: &ScalarField) -> Result<f64> {
    let (a, _, b) = assemble_system(ops, x)?;
    let grid = ops.grid;
    let mut yi = vec![0.0; grid.interior_count()];
    for node in 0..grid.dof_count() {
        if let Some(i) = grid.interior_index(node) {
            yi[i] = y.values[node];
        }
    }
    let ay = a.mul_vec(&yi);
    let num: f64 = ay.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(num / den)
}

/// One Matérn eigenpair: operator eigenvalue `μ` and an L²-normalized nodal function.
#[derive(Clone, Debug)]
pub struct MaternMode {
    pub eigenvalue: f64,
    pub function: ScalarField,
}

/// The `count` mass-orthonormal eigenfunctions of `(γ Id − δΔ)^{-2}` with the
/// largest eigenvalues, natural boundary conditions, sorted descending.
///
/// The Q1 pencil on a tensor grid separates: `M = M₁⊗M₁`, `K = K₁⊗M₁ + M₁⊗K₁`,
/// so 2D eigenpairs are products of 1D pairs with `θ = θ_i + θ_j`.
pub fn matern_eigenbasis(grid: Grid2D, gamma: f64, delta: f64, count: usize) -> Result<Vec<MaternMode>> {
    if !(gamma > 0.0 && delta > 0.0) {
        return Err(SurrogateError::InvalidArgument(format!(
            "Matérn parameters must be positive (gamma = {gamma}, delta = {delta})"
        )));
    }
    if count > grid.dof_count() {
        return Err(SurrogateError::InvalidArgument(format!(
            "requested {count} eigenfunctions, grid has {} nodes",
            grid.dof_count()
        )));
    }
    let m = grid.nodes_per_side();
    let h = grid.spacing();
    let mut m1 = DMatrix::zeros(m, m);
    let mut k1 = DMatrix::zeros(m, m);
    for e in 0..m - 1 {
        for (a, b, mv, kv) in [(0, 0, 2.0, 1.0), (1, 1, 2.0, 1.0), (0, 1, 1.0, -1.0), (1, 0, 1.0, -1.0)] {
            m1[(e + a, e + b)] += mv * h / 6.0;
            k1[(e + a, e + b)] += kv / h;
        }
    }
    let (theta, vecs) = generalized_symmetric_eigen(&k1, &m1)?;

    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            pairs.push((gamma + delta * (theta[i].max(0.0) + theta[j].max(0.0)), i, j));
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.max(p.2).cmp(&q.1.max(q.2))).then(p.2.cmp(&q.2)));

    let modes = pairs
        .into_iter()
        .take(count)
        .map(|(kappa, i, j)| {
            let mut f = DVector::zeros(grid.dof_count());
            for iy in 0..m {
                for ix in 0..m {
                    f[grid.node(ix, iy)] = vecs[(ix, i)] * vecs[(iy, j)];
                }
            }
            // deterministic sign: largest-magnitude entry positive
            let imax = f.iamax();
            if f[imax] < 0.0 {
                f = -f;
            }
            MaternMode { eigenvalue: kappa.powi(-2), function: ScalarField::new(f) }
        })
        .collect();
    Ok(modes)
}
