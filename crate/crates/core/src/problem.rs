//! The desk diffusion problem: grid, FE operators, Matérn input basis, and the
//! counted forward operator that every surrogate is built from.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurrogateError};
use crate::pde::{assemble_fem, matern_eigenbasis, DiffusionSystem, FemOperators, Grid2D, ScalarField};
use crate::reduced_basis::{GramKind, ReducedBasis, SmoothnessSpec};

/// Problem parameters. Defaults are the desk-scale values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// Cells per side of the unit square.
    pub grid: usize,
    pub gamma: f64,
    pub delta: f64,
    /// Input smoothness exponent.
    pub s: f64,
    /// Terms in the generating expansion of the input field.
    pub d_true: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { grid: 32, gamma: 0.1, delta: 0.5, s: 2.0, d_true: 256 }
    }
}

/// Forward operator `𝓖: x ↦ y` with analytic input encoder.
///
/// Encoded input coordinates are `e_i = ⟨x, ψ_i⟩_{L²}`, so a draw from `K^s`
/// has `e_i ∈ [−i^{−s}, i^{−s}]`. Every forward solve bumps a counter.
#[derive(Debug)]
pub struct DiffusionProblem {
    pub config: ProblemConfig,
    pub ops: FemOperators,
    pub spec: SmoothnessSpec,
    /// `dof × d_true`, mass-orthonormal Matérn eigenfunctions.
    pub psi: DMatrix<f64>,
    pub matern_eigenvalues: Vec<f64>,
    forward_solves: AtomicUsize,
    tangent_solves: AtomicUsize,
    cache: Option<Mutex<HashMap<Vec<i64>, DVector<f64>>>>,
}

/// Quantization step for the optional probe cache key.
const CACHE_QUANTUM: f64 = 1e-14;

impl DiffusionProblem {
    pub fn new(config: ProblemConfig) -> Result<Self> {
        let grid = Grid2D::new(config.grid)?;
        let spec = SmoothnessSpec::new(config.s, config.d_true)?;
        let ops = assemble_fem(grid);
        let modes = matern_eigenbasis(grid, config.gamma, config.delta, config.d_true)?;
        let mut psi = DMatrix::zeros(grid.dof_count(), modes.len());
        for (j, m) in modes.iter().enumerate() {
            psi.set_column(j, &m.function.values);
        }
        let matern_eigenvalues = modes.iter().map(|m| m.eigenvalue).collect();
        Ok(Self {
            config,
            ops,
            spec,
            psi,
            matern_eigenvalues,
            forward_solves: AtomicUsize::new(0),
            tangent_solves: AtomicUsize::new(0),
            cache: None,
        })
    }

    /// Turns on memoization of [`probe_full`](Self::probe_full) keyed by the
    /// input quantized to `1e-14`. Cache hits do not count as solves.
    pub fn with_cache(mut self) -> Self {
        self.cache = Some(Mutex::new(HashMap::new()));
        self
    }

    pub fn dof_count(&self) -> usize {
        self.ops.grid.dof_count()
    }

    /// Forward solves since construction or the last reset.
    pub fn n_solves(&self) -> usize {
        self.forward_solves.load(Ordering::Relaxed)
    }

    /// Tangent solves, reported separately from forward solves.
    pub fn n_tangent(&self) -> usize {
        self.tangent_solves.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.forward_solves.store(0, Ordering::Relaxed);
        self.tangent_solves.store(0, Ordering::Relaxed);
    }

    /// Analytic input encoder on the first `d_in` Matérn functions.
    pub fn input_basis(&self, d_in: usize) -> Result<ReducedBasis> {
        if d_in == 0 || d_in > self.psi.ncols() {
            return Err(SurrogateError::InvalidArgument(format!("d_in = {d_in} must lie in 1..={}", self.psi.ncols())));
        }
        ReducedBasis::from_orthonormal(
            DVector::zeros(self.dof_count()),
            self.psi.columns(0, d_in).into_owned(),
            &self.ops.mass,
            GramKind::L2,
        )
    }

    /// Range half-widths `λ_i^s` of the encoded coordinates.
    pub fn half_widths(&self, d_in: usize) -> DVector<f64> {
        SmoothnessSpec::weights(d_in, self.spec.s)
    }

    /// `x = Σ_i e_i ψ_i` for encoded coordinates `e`.
    pub fn field(&self, e: &DVector<f64>) -> Result<ScalarField> {
        if e.len() > self.psi.ncols() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "{} coordinates but only {} basis functions",
                e.len(),
                self.psi.ncols()
            )));
        }
        Ok(ScalarField::new(self.psi.columns(0, e.len()) * e))
    }

    /// Counted forward solve.
    pub fn solve(&self, x: &ScalarField) -> Result<ScalarField> {
        Ok(self.factorize(x)?.solve())
    }

    /// Counted factorization; the returned system serves any number of tangent
    /// solves through [`tangents`](Self::tangents).
    pub fn factorize(&self, x: &ScalarField) -> Result<DiffusionSystem> {
        let sys = DiffusionSystem::factorize(&self.ops, x)?;
        self.forward_solves.fetch_add(1, Ordering::Relaxed);
        Ok(sys)
    }

    /// Tangent solves `D𝓖(x)[h_k]` for every column of `dirs` (`dof × k`).
    pub fn tangents(&self, sys: &DiffusionSystem, y: &ScalarField, dirs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.dof_count(), dirs.ncols());
        for k in 0..dirs.ncols() {
            let h = ScalarField::new(dirs.column(k).into_owned());
            out.set_column(k, &sys.tangent(y, &h)?.values);
        }
        self.tangent_solves.fetch_add(dirs.ncols(), Ordering::Relaxed);
        Ok(out)
    }

    /// Nodal solution at encoded input `e`.
    pub fn probe_full(&self, e: &DVector<f64>) -> Result<DVector<f64>> {
        let Some(cache) = &self.cache else {
            return Ok(self.solve(&self.field(e)?)?.values);
        };
        let key: Vec<i64> = e.iter().map(|v| (v / CACHE_QUANTUM).round() as i64).collect();
        if let Some(hit) = cache.lock().expect("probe cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let y = self.solve(&self.field(e)?)?.values;
        cache.lock().expect("probe cache poisoned").insert(key, y.clone());
        Ok(y)
    }

    /// The coefficient map `g(e) = 𝓓†(𝓖(Σ e_i ψ_i))` for an output basis.
    pub fn probe_operator(&self, e: &DVector<f64>, output: &ReducedBasis) -> Result<DVector<f64>> {
        output.encode_vec(&self.probe_full(e)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DiffusionProblem {
        DiffusionProblem::new(ProblemConfig { grid: 8, s: 2.0, d_true: 20, ..Default::default() }).unwrap()
    }

    #[test]
    fn input_basis_encodes_coordinates() {
        let p = small();
        let b = p.input_basis(6).unwrap();
        let e = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.05, -0.01, 0.02]);
        let x = p.field(&e).unwrap();
        let back = b.encode(&x).unwrap();
        assert!((back - e).amax() < 1e-12);
    }

    #[test]
    fn probe_counts_every_call() {
        let p = small();
        let e = DVector::from_vec(vec![0.1, 0.2]);
        let a = p.probe_full(&e).unwrap();
        let b = p.probe_full(&e).unwrap();
        assert_eq!(a, b);
        assert_eq!(p.n_solves(), 2);
        p.reset_counters();
        assert_eq!(p.n_solves(), 0);
    }

    #[test]
    fn cache_suppresses_repeat_solves() {
        let p = small().with_cache();
        let e = DVector::from_vec(vec![0.1, 0.2]);
        let a = p.probe_full(&e).unwrap();
        let b = p.probe_full(&e).unwrap();
        assert_eq!(a, b);
        assert_eq!(p.n_solves(), 1);
    }

    #[test]
    fn zero_input_gives_nominal_solution() {
        let p = small();
        let y = p.probe_full(&DVector::zeros(3)).unwrap();
        let y0 = crate::pde::solve_diffusion(&p.ops, &ScalarField::zeros(&p.ops.grid)).unwrap();
        assert_eq!(y, y0.values);
    }

    #[test]
    fn rejects_oversized_input() {
        let p = small();
        assert!(p.input_basis(21).is_err());
        assert!(p.field(&DVector::zeros(21)).is_err());
    }
}
