//! Fully connected coefficient networks `A_L ∘ σ ∘ ⋯ ∘ σ ∘ A_0` with exact input
//! Jacobians and exact parameter gradients of the L² and H¹ objectives.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurrogateError};
use crate::rng;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `x Φ(x)` with the exact Gaussian CDF.
    Gelu,
    Tanh,
}

impl Activation {
    /// `(σ, σ', σ'')` at `x`.
    #[inline]
    pub fn eval3(self, x: f64) -> (f64, f64, f64) {
        match self {
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
                let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
                (x * cdf, cdf + x * pdf, pdf * (2.0 - x * x))
            }
            Activation::Tanh => {
                let t = x.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
        }
    }

    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => x * 0.5 * (1.0 + libm::erf(x * INV_SQRT_2)),
            Activation::Tanh => x.tanh(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `d_{ℓ+1} × d_ℓ`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSurrogate {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Gradient (or any per-parameter quantity) with the network's shape.
pub type ParamSet = Vec<Layer>;

/// Which training objective a loss or gradient refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    L2,
    H1,
}

/// A mini-batch in column layout: sample `k` is column `k`.
pub struct Batch<'a> {
    pub inputs: &'a DMatrix<f64>,
    pub outputs: &'a DMatrix<f64>,
    /// `d_out × (B d_in)`: block `k` is the Jacobian of sample `k`.
    pub jacobians: Option<&'a DMatrix<f64>>,
    /// `λ_i^{2 s̃}` per input coordinate.
    pub jac_weights: Option<&'a DVector<f64>>,
}

impl MlpSurrogate {
    /// Glorot-uniform weights and zero biases for layer widths `dims`.
    pub fn new(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut r = rng::stream(seed, u64::MAX);
        let layers = dims
            .windows(2)
            .map(|p| {
                let a = (6.0 / (p[0] + p[1]) as f64).sqrt();
                Layer { w: DMatrix::from_fn(p[1], p[0], |_, _| r.random_range(-a..a)), b: DVector::zeros(p[1]) }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        check_dims(dims)?;
        let layers =
            dims.windows(2).map(|p| Layer { w: DMatrix::zeros(p[1], p[0]), b: DVector::zeros(p[1]) }).collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(SurrogateError::InvalidArgument("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.b.len() != l.w.nrows() || (i > 0 && layers[i - 1].w.nrows() != l.w.ncols()) {
                return Err(SurrogateError::DimensionMismatch(format!("layer {i} shapes are inconsistent")));
            }
            if l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite()) {
                return Err(SurrogateError::InvalidArgument(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].w.ncols()];
        d.extend(self.layers.iter().map(|l| l.w.nrows()));
        d
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].w.nrows()
    }

    /// `N = Σ_ℓ (d_ℓ d_{ℓ+1} + d_{ℓ+1})`.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        self.layers
            .iter()
            .map(|l| Layer { w: DMatrix::zeros(l.w.nrows(), l.w.ncols()), b: DVector::zeros(l.b.len()) })
            .collect()
    }

    fn check_input(&self, n: usize) -> Result<()> {
        if n != self.d_in() {
            return Err(SurrogateError::DimensionMismatch(format!(
                "input has {n} coordinates, network expects {}",
                self.d_in()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(c.len())?;
        let x = DMatrix::from_column_slice(c.len(), 1, c.as_slice());
        Ok(self.forward_cols(&x).column(0).into_owned())
    }

    /// Rows of `inputs` are samples; returns `B × d_out`.
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(inputs.ncols())?;
        Ok(self.forward_cols(&inputs.transpose()).transpose())
    }

    /// Column-sample forward pass.
    pub fn forward_cols(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * &h;
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            if i < last {
                z.apply(|v| *v = self.activation.value(*v));
            }
            h = z;
        }
        h
    }

    /// `d_out × d_in` input Jacobian `W_L D_{L−1} W_{L−1} ⋯ D_0 W_0`.
    pub fn input_jacobian(&self, c: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(c.len())?;
        let last = self.layers.len() - 1;
        let mut h = c.clone();
        let mut j = DMatrix::identity(c.len(), c.len());
        for (i, l) in self.layers.iter().enumerate() {
            let z = &l.w * &h + &l.b;
            j = &l.w * j;
            if i < last {
                let mut hn = z.clone();
                for r in 0..z.len() {
                    let (s, ds, _) = self.activation.eval3(z[r]);
                    hn[r] = s;
                    j.row_mut(r).scale_mut(ds);
                }
                h = hn;
            } else {
                h = z;
            }
        }
        Ok(j)
    }

    /// Loss of the given objective on a column batch.
    pub fn loss(&self, batch: &Batch<'_>, objective: Objective) -> Result<f64> {
        Ok(self.loss_and_gradient(batch, objective, false)?.0)
    }

    /// Loss and its exact gradient with respect to every weight and bias.
    pub fn param_gradient(&self, batch: &Batch<'_>, objective: Objective) -> Result<(f64, ParamSet)> {
        let (l, g) = self.loss_and_gradient(batch, objective, true)?;
        Ok((l, g.unwrap_or_default()))
    }

    fn loss_and_gradient(
        &self,
        batch: &Batch<'_>,
        objective: Objective,
        want_grad: bool,
    ) -> Result<(f64, Option<ParamSet>)> {
        let x = batch.inputs;
        let y = batch.outputs;
        let bsz = x.ncols();
        if bsz == 0 {
            return Err(SurrogateError::InvalidArgument("empty batch".into()));
        }
        self.check_input(x.nrows())?;
        if y.nrows() != self.d_out() || y.ncols() != bsz {
            return Err(SurrogateError::DimensionMismatch("output batch shape".into()));
        }
        let d_in = self.d_in();
        let d_out = self.d_out();
        let h1 = objective == Objective::H1;
        let (jd, jw) = if h1 {
            let jd = batch
                .jacobians
                .ok_or_else(|| SurrogateError::MissingJacobians("H1 objective needs Jacobian data".into()))?;
            let jw = batch
                .jac_weights
                .ok_or_else(|| SurrogateError::MissingJacobians("H1 objective needs smoothness weights".into()))?;
            if jd.nrows() != d_out || jd.ncols() != bsz * d_in || jw.len() != d_in {
                return Err(SurrogateError::DimensionMismatch("Jacobian batch shape".into()));
            }
            (Some(jd), Some(jw))
        } else {
            (None, None)
        };

        // forward with cached activations and, for H1, stacked input tangents
        let last = self.layers.len() - 1;
        let mut hs: Vec<DMatrix<f64>> = vec![x.clone()];
        let mut ts: Vec<DMatrix<f64>> = Vec::new(); // tangent after each hidden layer
        let mut zdots: Vec<DMatrix<f64>> = Vec::new();
        let mut d1s: Vec<DMatrix<f64>> = Vec::new();
        let mut d2s: Vec<DMatrix<f64>> = Vec::new();
        let mut out = DMatrix::zeros(0, 0);
        let mut jnet = DMatrix::zeros(0, 0);
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * &hs[i];
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            let zdot = if h1 {
                if i == 0 {
                    let mut t = DMatrix::zeros(l.w.nrows(), bsz * d_in);
                    for k in 0..bsz {
                        t.columns_mut(k * d_in, d_in).copy_from(&l.w);
                    }
                    t
                } else {
                    &l.w * &ts[i - 1]
                }
            } else {
                DMatrix::zeros(0, 0)
            };
            if i == last {
                out = z;
                jnet = zdot;
                break;
            }
            let (rows, cols) = z.shape();
            let mut h = DMatrix::zeros(rows, cols);
            let mut d1 = DMatrix::zeros(rows, cols);
            let mut d2 = DMatrix::zeros(rows, cols);
            for c in 0..cols {
                for r in 0..rows {
                    let (s, ds, dds) = self.activation.eval3(z[(r, c)]);
                    h[(r, c)] = s;
                    d1[(r, c)] = ds;
                    d2[(r, c)] = dds;
                }
            }
            if h1 {
                let mut t = zdot.clone();
                for k in 0..bsz {
                    for c in 0..d_in {
                        for r in 0..rows {
                            t[(r, k * d_in + c)] *= d1[(r, k)];
                        }
                    }
                }
                ts.push(t);
            }
            hs.push(h);
            zdots.push(zdot);
            d1s.push(d1);
            d2s.push(d2);
        }

        let resid = &out - y;
        let mut loss = resid.norm_squared() / bsz as f64;
        let mut jres = DMatrix::zeros(0, 0);
        if let (Some(jd), Some(jw)) = (jd, jw) {
            jres = &jnet - jd;
            for k in 0..bsz {
                for c in 0..d_in {
                    let wgt = jw[c];
                    let col = jres.column(k * d_in + c);
                    loss += wgt * col.norm_squared() / bsz as f64;
                }
            }
        }
        if !want_grad {
            return Ok((loss, None));
        }

        let scale = 2.0 / bsz as f64;
        let mut hbar = resid * scale;
        let mut tbar = if h1 {
            let jw = jw.unwrap_or_else(|| unreachable!());
            let mut t = jres * scale;
            for k in 0..bsz {
                for c in 0..d_in {
                    t.column_mut(k * d_in + c).scale_mut(jw[c]);
                }
            }
            t
        } else {
            DMatrix::zeros(0, 0)
        };
        let mut grads = self.zeros_like();
        for i in (0..=last).rev() {
            let l = &self.layers[i];
            // (zbar, zdotbar) are the adjoints of this layer's pre-activations
            let (zbar, zdotbar) = if i == last {
                (hbar.clone(), tbar.clone())
            } else {
                let d1 = &d1s[i];
                let d2 = &d2s[i];
                let mut zbar = hbar.component_mul(d1);
                let mut zdotbar = DMatrix::zeros(0, 0);
                if h1 {
                    let zdot = &zdots[i];
                    let rows = d1.nrows();
                    zdotbar = tbar.clone();
                    for k in 0..bsz {
                        for c in 0..d_in {
                            let col = k * d_in + c;
                            for r in 0..rows {
                                zbar[(r, k)] += tbar[(r, col)] * zdot[(r, col)] * d2[(r, k)];
                                zdotbar[(r, col)] *= d1[(r, k)];
                            }
                        }
                    }
                }
                (zbar, zdotbar)
            };
            let mut gw = &zbar * hs[i].transpose();
            let gb = zbar.column_sum();
            if h1 {
                if i == 0 {
                    for k in 0..bsz {
                        gw += zdotbar.columns(k * d_in, d_in);
                    }
                } else {
                    gw += &zdotbar * ts[i - 1].transpose();
                }
            }
            grads[i] = Layer { w: gw, b: gb };
            if i > 0 {
                hbar = l.w.tr_mul(&zbar);
                if h1 {
                    tbar = l.w.tr_mul(&zdotbar);
                }
            }
        }
        Ok((loss, Some(grads)))
    }

    /// Applies `f(param, other)` elementwise over all parameters.
    pub fn zip_apply(&mut self, other: &ParamSet, mut f: impl FnMut(&mut f64, f64)) {
        for (l, o) in self.layers.iter_mut().zip(other) {
            l.w.zip_apply(&o.w, |a, b| f(a, b));
            l.b.zip_apply(&o.b, |a, b| f(a, b));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(SurrogateError::InvalidArgument(format!("invalid layer widths {dims:?}")));
    }
    Ok(())
}
