//! Vector-valued Smolyak interpolation `I^Λ = Σ_ν ζ_ν I^ν` with one index set
//! shared by every output component.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::index_set::MultiIndexSet;
use super::nodes::{leja_nodes, NodeFamily};
use crate::error::{Result, SurrogateError};

/// One tensor interpolant `I^ν` with nonzero coefficient. Only coordinates with
/// `ν_k > 0` are stored; the others contribute the constant basis.
#[derive(Clone, Debug, PartialEq)]
struct Term {
    zeta: f64,
    dims: Vec<usize>,
    levels: Vec<usize>,
    /// Row of `values` for every box point, first active coordinate fastest.
    point_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseGridSurrogate {
    index_set: MultiIndexSet,
    nodes: NodeFamily,
    /// Input `c_k` lives in `[−w_k, w_k]` and is mapped to `c_k / w_k ∈ [−1, 1]`.
    half_widths: DVector<f64>,
    /// `|Λ| × d_out`; row `p` holds the probe at the point of `Λ[p]`.
    values: DMatrix<f64>,
    terms: Vec<Term>,
    max_levels: Vec<usize>,
    active_dims: Vec<usize>,
}

/// Probes `probe` once per point of the nested grid (one point per member of
/// `index_set`) and assembles the interpolant.
pub fn build_sg_surrogate<F>(
    probe: F,
    index_set: MultiIndexSet,
    half_widths: DVector<f64>,
) -> Result<SparseGridSurrogate>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let d = index_set.dim();
    if half_widths.len() != d {
        return Err(SurrogateError::DimensionMismatch(format!(
            "{} half-widths for a {d}-dimensional index set",
            half_widths.len()
        )));
    }
    if index_set.is_empty() {
        return Err(SurrogateError::InvalidArgument("empty index set".into()));
    }
    let nodes = leja_nodes(index_set.max_degrees().iter().copied().max().unwrap_or(0) as usize + 1);
    let points: Vec<DVector<f64>> = index_set
        .indices()
        .iter()
        .map(|nu| {
            DVector::from_iterator(d, nu.iter().enumerate().map(|(k, &j)| half_widths[k] * nodes.nodes()[j as usize]))
        })
        .collect();
    let outputs: Vec<DVector<f64>> = points.par_iter().map(&probe).collect::<Result<_>>()?;
    let d_out = outputs[0].len();
    if outputs.iter().any(|o| o.len() != d_out) {
        return Err(SurrogateError::DimensionMismatch("probe returned outputs of varying length".into()));
    }
    let values = DMatrix::from_fn(outputs.len(), d_out, |p, j| outputs[p][j]);
    SparseGridSurrogate::from_parts(index_set, half_widths, values)
}

impl SparseGridSurrogate {
    /// Reassembles a surrogate from stored grid values (rows ordered as `index_set`).
    pub fn from_parts(index_set: MultiIndexSet, half_widths: DVector<f64>, values: DMatrix<f64>) -> Result<Self> {
        let d = index_set.dim();
        if values.nrows() != index_set.len() || half_widths.len() != d {
            return Err(SurrogateError::DimensionMismatch(format!(
                "{} value rows / {} half-widths for |Λ| = {} in dimension {d}",
                values.nrows(),
                half_widths.len(),
                index_set.len()
            )));
        }
        if half_widths.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(SurrogateError::InvalidArgument("half-widths must be positive and finite".into()));
        }
        let max_levels: Vec<usize> = index_set.max_degrees().iter().map(|&v| v as usize).collect();
        let nodes = leja_nodes(max_levels.iter().copied().max().unwrap_or(0) + 1);
        let active_dims = (0..d).filter(|&k| max_levels[k] > 0).collect();
        let mut terms = Vec::new();
        for (pos, zeta) in index_set.smolyak_coefficients() {
            let nu = &index_set.indices()[pos];
            let dims: Vec<usize> = (0..d).filter(|&k| nu[k] > 0).collect();
            let levels: Vec<usize> = dims.iter().map(|&k| nu[k] as usize).collect();
            let mut point_ids = Vec::new();
            let mut digit = vec![0usize; dims.len()];
            let mut probe = vec![0u32; d];
            loop {
                for (a, &k) in dims.iter().enumerate() {
                    probe[k] = digit[a] as u32;
                }
                let id = index_set.position(&probe).ok_or_else(|| {
                    SurrogateError::InvalidArgument(format!("index set is not downward closed below {nu:?}"))
                })?;
                point_ids.push(id);
                if !odometer(&mut digit, &levels) {
                    break;
                }
            }
            terms.push(Term { zeta: zeta as f64, dims, levels, point_ids });
        }
        Ok(Self { index_set, nodes, half_widths, values, terms, max_levels, active_dims })
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    pub fn half_widths(&self) -> &DVector<f64> {
        &self.half_widths
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn node_family(&self) -> &NodeFamily {
        &self.nodes
    }

    pub fn d_in(&self) -> usize {
        self.index_set.dim()
    }

    pub fn d_out(&self) -> usize {
        self.values.ncols()
    }

    /// Number of probe calls used to build it (equals `|Λ|`).
    pub fn n_probes(&self) -> usize {
        self.index_set.len()
    }

    /// Stored reals.
    pub fn storage(&self) -> usize {
        self.values.len()
    }

    /// `Σ_ν ζ_ν` (one for every downward-closed set).
    pub fn coefficient_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.zeta).sum()
    }

    fn basis_tables(&self, c: &[f64], derivative: bool) -> Vec<Vec<Vec<f64>>> {
        let mut tables = vec![Vec::new(); self.d_in()];
        for &k in &self.active_dims {
            let t = c[k] / self.half_widths[k];
            tables[k] = (0..=self.max_levels[k])
                .map(|l| {
                    let mut out = vec![0.0; l + 1];
                    if derivative {
                        self.nodes.basis_derivative(l, t, &mut out);
                        out.iter_mut().for_each(|v| *v /= self.half_widths[k]);
                    } else {
                        self.nodes.basis(l, t, &mut out);
                    }
                    out
                })
                .collect();
        }
        tables
    }

    /// Interpolation weights over the stored points at `c`.
    fn point_weights(&self, c: &[f64], w: &mut [f64]) {
        let tables = self.basis_tables(c, false);
        w.iter_mut().for_each(|v| *v = 0.0);
        let mut digit = Vec::new();
        for term in &self.terms {
            digit.clear();
            digit.resize(term.dims.len(), 0);
            for &id in &term.point_ids {
                let mut p = term.zeta;
                for (a, &k) in term.dims.iter().enumerate() {
                    p *= tables[k][term.levels[a]][digit[a]];
                }
                w[id] += p;
                odometer(&mut digit, &term.levels);
            }
        }
    }

    fn check_input(&self, c: &DVector<f64>) -> Result<()> {
        if c.len() != self.d_in() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "input has {} coordinates, surrogate expects {}",
                c.len(),
                self.d_in()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(c)?;
        let mut w = vec![0.0; self.index_set.len()];
        self.point_weights(c.as_slice(), &mut w);
        Ok(self.values.tr_mul(&DVector::from_vec(w)))
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
        let b = inputs.nrows();
        let np = self.index_set.len();
        let mut weights = DMatrix::zeros(b, np);
        let mut w = vec![0.0; np];
        let mut c = vec![0.0; self.d_in()];
        for r in 0..b {
            for (k, v) in c.iter_mut().enumerate() {
                *v = inputs[(r, k)];
            }
            self.point_weights(&c, &mut w);
            for (p, v) in w.iter().enumerate() {
                weights[(r, p)] = *v;
            }
        }
        Ok(weights * &self.values)
    }

    /// `d_out × d_in` Jacobian of the interpolant.
    pub fn jacobian(&self, c: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(c)?;
        let vals = self.basis_tables(c.as_slice(), false);
        let ders = self.basis_tables(c.as_slice(), true);
        let np = self.index_set.len();
        let mut dw = DMatrix::zeros(self.d_in(), np);
        let mut digit = Vec::new();
        let mut prefix = Vec::new();
        for term in &self.terms {
            let na = term.dims.len();
            digit.clear();
            digit.resize(na, 0);
            for &id in &term.point_ids {
                // prefix products, then a backward sweep with the running suffix
                prefix.clear();
                prefix.push(term.zeta);
                for a in 0..na {
                    let v = vals[term.dims[a]][term.levels[a]][digit[a]];
                    prefix.push(prefix[a] * v);
                }
                let mut suffix = 1.0;
                for a in (0..na).rev() {
                    let k = term.dims[a];
                    let dv = ders[k][term.levels[a]][digit[a]];
                    dw[(k, id)] += prefix[a] * dv * suffix;
                    suffix *= vals[k][term.levels[a]][digit[a]];
                }
                odometer(&mut digit, &term.levels);
            }
        }
        Ok((dw * &self.values).transpose())
    }
}

/// Advances `digit` through the box `Π_a {0..=levels[a]}`, first digit fastest.
/// Returns false after wrapping past the last point.
fn odometer(digit: &mut [usize], levels: &[usize]) -> bool {
    for a in 0..digit.len() {
        if digit[a] < levels[a] {
            digit[a] += 1;
            return true;
        }
        digit[a] = 0;
    }
    false
}
