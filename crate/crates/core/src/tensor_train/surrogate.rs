//! Tensor-train collocation surrogate: cores over Leja-node indices, evaluated
//! by per-core barycentric contraction.

use nalgebra::{DMatrix, DVector};

use super::cross::{tt_cross, CrossOptions, CrossResult};
use super::schedule::DegreeSchedule;
use super::tt::TensorTrain;
use crate::error::{Result, SurrogateError};
use crate::sparse_grid::{leja_nodes, NodeFamily};

#[derive(Clone, Debug)]
pub struct TensorTrainSurrogate {
    pub tt: TensorTrain,
    pub schedule: DegreeSchedule,
    nodes: NodeFamily,
    /// Input `c_k ∈ [−w_k, w_k]` is rescaled to `c_k / w_k`.
    pub half_widths: DVector<f64>,
    pub converged: bool,
    pub n_cross: usize,
    pub n_validation: usize,
}

/// Builds the surrogate by cross approximation of `probe` on the collocation
/// grid `(w_1 ξ_{j_1}, …, w_d ξ_{j_d})`.
pub fn build_tt_surrogate<F>(
    probe: F,
    schedule: DegreeSchedule,
    half_widths: DVector<f64>,
    opts: &CrossOptions,
) -> Result<(TensorTrainSurrogate, CrossResult)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let d = schedule.d_in();
    if half_widths.len() != d {
        return Err(SurrogateError::DimensionMismatch(format!(
            "{} half-widths for {d} parametric modes",
            half_widths.len()
        )));
    }
    let nodes = leja_nodes(schedule.nu.iter().copied().max().unwrap_or(0) + 1);
    let modes = schedule.mode_sizes();
    let res = tt_cross(
        |idx: &[usize]| {
            let c = DVector::from_iterator(d, idx.iter().enumerate().map(|(k, &j)| half_widths[k] * nodes.nodes()[j]));
            probe(&c)
        },
        &modes,
        opts,
    )?;
    let sur = TensorTrainSurrogate::from_parts(
        res.tt.clone(),
        schedule,
        half_widths,
        res.converged,
        res.n_cross,
        res.n_validation,
    )?;
    Ok((sur, res))
}

impl TensorTrainSurrogate {
    pub fn from_parts(
        tt: TensorTrain,
        schedule: DegreeSchedule,
        half_widths: DVector<f64>,
        converged: bool,
        n_cross: usize,
        n_validation: usize,
    ) -> Result<Self> {
        let modes = tt.mode_sizes();
        if modes.len() != schedule.d_in() + 1 || modes[1..] != schedule.mode_sizes()[..] {
            return Err(SurrogateError::DimensionMismatch(format!(
                "cores with modes {modes:?} do not match schedule {:?}",
                schedule.nu
            )));
        }
        if half_widths.len() != schedule.d_in() || half_widths.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(SurrogateError::InvalidArgument("half-widths must be positive, one per mode".into()));
        }
        let nodes = leja_nodes(schedule.nu.iter().copied().max().unwrap_or(0) + 1);
        Ok(Self { tt, schedule, nodes, half_widths, converged, n_cross, n_validation })
    }

    pub fn d_in(&self) -> usize {
        self.schedule.d_in()
    }

    pub fn d_out(&self) -> usize {
        self.tt.cores()[0].m
    }

    pub fn storage(&self) -> usize {
        self.tt.storage()
    }

    pub fn n_probes(&self) -> usize {
        self.n_cross + self.n_validation
    }

    fn output_core(&self) -> DMatrix<f64> {
        let c0 = &self.tt.cores()[0];
        DMatrix::from_column_slice(c0.m, c0.r1, &c0.data)
    }

    fn check(&self, c: &DVector<f64>) -> Result<()> {
        if c.len() != self.d_in() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "input has {} coordinates, surrogate expects {}",
                c.len(),
                self.d_in()
            )));
        }
        Ok(())
    }

    /// Contracted parametric cores `M_k = Σ_j 𝓛_j(c_k) G_k(:, j, :)`.
    fn contracted(&self, c: &DVector<f64>, derivative: bool) -> Vec<DMatrix<f64>> {
        let cores = &self.tt.cores()[1..];
        cores
            .iter()
            .enumerate()
            .map(|(k, core)| {
                let l = self.schedule.nu[k];
                let t = c[k] / self.half_widths[k];
                let mut w = vec![0.0; l + 1];
                if derivative {
                    self.nodes.basis_derivative(l, t, &mut w);
                    w.iter_mut().for_each(|v| *v /= self.half_widths[k]);
                } else {
                    self.nodes.basis(l, t, &mut w);
                }
                core.contract(&w)
            })
            .collect()
    }

    /// Reduced state `M_1 ⋯ M_d` (a vector of length `r_0`).
    fn reduced(&self, c: &DVector<f64>) -> DVector<f64> {
        let ms = self.contracted(c, false);
        let mut w = DVector::from_element(1, 1.0);
        for m in ms.iter().rev() {
            w = m * w;
        }
        w
    }

    pub fn eval(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(c)?;
        Ok(self.output_core() * self.reduced(c))
    }

    /// Rows of `inputs` are samples; returns `B × d_out`.
    pub fn eval_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.ncols() != self.d_in() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "batch has {} columns, surrogate expects {}",
                inputs.ncols(),
                self.d_in()
            )));
        }
        let r0 = self.tt.cores()[0].r1;
        let mut states = DMatrix::zeros(inputs.nrows(), r0);
        for b in 0..inputs.nrows() {
            let c = inputs.row(b).transpose();
            states.set_row(b, &self.reduced(&c).transpose());
        }
        Ok(states * self.output_core().transpose())
    }

    /// `d_out × d_in` Jacobian by the product rule over contracted cores.
    pub fn jacobian(&self, c: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(c)?;
        let ms = self.contracted(c, false);
        let ds = self.contracted(c, true);
        let d = ms.len();
        // suffix[k] = M_k ⋯ M_d e
        let mut suffix = vec![DVector::from_element(1, 1.0); d + 1];
        for k in (0..d).rev() {
            suffix[k] = &ms[k] * &suffix[k + 1];
        }
        let r0 = self.tt.cores()[0].r1;
        let mut u = DMatrix::zeros(r0, d);
        let mut prefix = DMatrix::identity(r0, r0);
        for k in 0..d {
            u.set_column(k, &(&prefix * (&ds[k] * &suffix[k + 1])));
            prefix *= &ms[k];
        }
        Ok(self.output_core() * u)
    }
}
