//! Mini-batch ADAM training under the L² or derivative-informed H¹ objective.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Batch, MlpSurrogate, Objective, ParamSet};
use crate::error::{Result, SurrogateError};
use crate::reduced_basis::SmoothnessSpec;
use crate::rng;

/// Samples as rows: `inputs` is `n × d_in`, `outputs` is `n × d_out`, and
/// `jacobians[k]` is the `d_out × d_in` Jacobian at sample `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingDataset {
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub jacobians: Option<Vec<DMatrix<f64>>>,
}

impl TrainingDataset {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>, jacobians: Option<Vec<DMatrix<f64>>>) -> Result<Self> {
        let n = inputs.nrows();
        if outputs.nrows() != n {
            return Err(SurrogateError::DimensionMismatch(format!("{n} inputs but {} outputs", outputs.nrows())));
        }
        if let Some(j) = &jacobians {
            if j.len() != n || j.iter().any(|m| m.shape() != (outputs.ncols(), inputs.ncols())) {
                return Err(SurrogateError::DimensionMismatch("Jacobian count or shape".into()));
            }
        }
        Ok(Self { inputs, outputs, jacobians })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn d_in(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.outputs.ncols()
    }

    /// Column-layout batch buffers for the rows `idx`.
    pub fn gather(&self, idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>, Option<DMatrix<f64>>) {
        let (d_in, d_out) = (self.d_in(), self.d_out());
        let x = DMatrix::from_fn(d_in, idx.len(), |r, k| self.inputs[(idx[k], r)]);
        let y = DMatrix::from_fn(d_out, idx.len(), |r, k| self.outputs[(idx[k], r)]);
        let j = self.jacobians.as_ref().map(|js| {
            let mut m = DMatrix::zeros(d_out, idx.len() * d_in);
            for (k, &i) in idx.iter().enumerate() {
                m.columns_mut(k * d_in, d_in).copy_from(&js[i]);
            }
            m
        });
        (x, y, j)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Exponent of the Jacobian weights `λ_i^{s̃}`.
    pub s_tilde: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Piecewise-constant rate: `(first epoch, rate)`, sorted by epoch.
    pub lr_schedule: Vec<(usize, f64)>,
    pub validation_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl TrainConfig {
    /// 1e-3 for the first half of the epochs, 1e-4 for the next 30%, then 1e-5.
    pub fn default_schedule(epochs: usize) -> Vec<(usize, f64)> {
        vec![(0, 1e-3), (epochs / 2, 1e-4), (epochs * 8 / 10, 1e-5)]
    }

    pub fn new(objective: Objective, s_tilde: f64, epochs: usize, seed: u64) -> Self {
        Self {
            objective,
            s_tilde,
            epochs,
            batch_size: 32,
            lr_schedule: Self::default_schedule(epochs),
            validation_fraction: 0.05,
            seed,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        self.lr_schedule
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .map_or(self.lr_schedule.first().map_or(1e-3, |p| p.1), |p| p.1)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(SurrogateError::InvalidArgument(format!(
                "validation fraction must lie in [0, 0.5], got {}",
                self.validation_fraction
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(SurrogateError::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if self.lr_schedule.is_empty() || self.lr_schedule.iter().any(|(_, r)| !(*r > 0.0)) {
            return Err(SurrogateError::InvalidArgument("learning-rate schedule needs positive rates".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: MlpSurrogate,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub wall_seconds: f64,
}

/// Initial network shape for [`train`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

/// Full-set loss of `net` on rows `idx` (mean over samples).
pub fn dataset_loss(
    net: &MlpSurrogate,
    data: &TrainingDataset,
    idx: &[usize],
    objective: Objective,
    s_tilde: f64,
) -> Result<f64> {
    if idx.is_empty() {
        return Ok(f64::NAN);
    }
    let weights = SmoothnessSpec::weights(data.d_in(), 2.0 * s_tilde);
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        let (x, y, j) = data.gather(chunk);
        let b = Batch { inputs: &x, outputs: &y, jacobians: j.as_ref(), jac_weights: Some(&weights) };
        total += net.loss(&b, objective)? * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

struct Adam {
    m: ParamSet,
    v: ParamSet,
    t: i32,
}

impl Adam {
    fn step(&mut self, net: &mut MlpSurrogate, g: &ParamSet, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((layer, gl), (ml, vl)) in net.layers.iter_mut().zip(g).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let upd = |p: &mut f64, gi: f64, mi: &mut f64, vi: &mut f64| {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
            };
            for i in 0..layer.w.len() {
                upd(
                    &mut layer.w.as_mut_slice()[i],
                    gl.w.as_slice()[i],
                    &mut ml.w.as_mut_slice()[i],
                    &mut vl.w.as_mut_slice()[i],
                );
            }
            for i in 0..layer.b.len() {
                upd(&mut layer.b.as_mut_slice()[i], gl.b[i], &mut ml.b.as_mut_slice()[i], &mut vl.b.as_mut_slice()[i]);
            }
        }
    }
}

/// Deterministic train/validation split.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, u64::MAX - 1));
    let mut n_val = (fraction * n as f64).ceil() as usize;
    if fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Trains a fresh network of shape `spec` on `data`. The returned network is
/// the snapshot with the lowest validation loss (training loss when no samples
/// are held out), measured in the training objective.
pub fn train(spec: &NetSpec, data: &TrainingDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut dims = vec![data.d_in()];
    dims.extend(&spec.hidden);
    dims.push(data.d_out());
    let net = MlpSurrogate::new(&dims, spec.activation, cfg.seed)?;
    train_from(net, data, cfg)
}

/// Continues training from an existing network.
pub fn train_from(mut net: MlpSurrogate, data: &TrainingDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(SurrogateError::InvalidArgument("empty training set".into()));
    }
    if net.d_in() != data.d_in() || net.d_out() != data.d_out() {
        return Err(SurrogateError::DimensionMismatch("network and dataset dimensions differ".into()));
    }
    if cfg.objective == Objective::H1 && data.jacobians.is_none() {
        return Err(SurrogateError::MissingJacobians("H1 training needs a dataset with Jacobians".into()));
    }
    let start = Instant::now();
    let (train_idx, val_idx) = split_indices(data.len(), cfg.validation_fraction, cfg.seed);
    let weights = SmoothnessSpec::weights(data.d_in(), 2.0 * cfg.s_tilde);
    let mut adam = Adam { m: net.zeros_like(), v: net.zeros_like(), t: 0 };
    let mut order = train_idx.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, net.clone());

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, epoch as u64));
        let lr = cfg.rate(epoch);
        let mut acc = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y, j) = data.gather(chunk);
            let b = Batch { inputs: &x, outputs: &y, jacobians: j.as_ref(), jac_weights: Some(&weights) };
            let (loss, g) = net.param_gradient(&b, cfg.objective)?;
            if !loss.is_finite() {
                return Err(SurrogateError::TrainingDiverged {
                    epoch,
                    detail: format!("loss became {loss}; lower the learning rate (currently {lr:e})"),
                });
            }
            acc += loss * chunk.len() as f64;
            adam.step(&mut net, &g, lr, cfg);
        }
        let train_loss = acc / order.len() as f64;
        let val_loss =
            if val_idx.is_empty() { f64::NAN } else { dataset_loss(&net, data, &val_idx, cfg.objective, cfg.s_tilde)? };
        if !net.is_finite() {
            return Err(SurrogateError::TrainingDiverged { epoch, detail: "non-finite parameters".into() });
        }
        let score = if val_idx.is_empty() { train_loss } else { val_loss };
        if score < best.0 {
            best = (score, epoch, net.clone());
        }
        trace.push(EpochRecord { epoch, train_loss, val_loss });
    }
    Ok(TrainOutcome {
        net: best.2,
        trace,
        best_epoch: best.1,
        best_val_loss: best.0,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Column-major weights for the H¹ loss, `λ_i^{2 s̃}`.
pub fn jacobian_weights(d_in: usize, s_tilde: f64) -> DVector<f64> {
    SmoothnessSpec::weights(d_in, 2.0 * s_tilde)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_piecewise_constant() {
        let c = TrainConfig::new(Objective::L2, 1.0, 100, 0);
        assert_eq!(c.rate(0), 1e-3);
        assert_eq!(c.rate(49), 1e-3);
        assert_eq!(c.rate(50), 1e-4);
        assert_eq!(c.rate(79), 1e-4);
        assert_eq!(c.rate(80), 1e-5);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (a, b) = split_indices(40, 0.05, 3);
        assert_eq!(b.len(), 2);
        assert_eq!(a.len(), 38);
        let (a2, b2) = split_indices(40, 0.05, 3);
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        let mut all: Vec<_> = a.into_iter().chain(b).collect();
        all.sort();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        assert!(split_indices(10, 0.0, 1).1.is_empty());
    }

    #[test]
    fn bad_config_is_rejected() {
        let data = TrainingDataset::new(DMatrix::zeros(4, 2), DMatrix::zeros(4, 1), None).unwrap();
        let spec = NetSpec { hidden: vec![3], activation: Activation::Tanh };
        let mut cfg = TrainConfig::new(Objective::L2, 0.0, 3, 0);
        cfg.validation_fraction = 0.7;
        assert!(train(&spec, &data, &cfg).is_err());
        let cfg = TrainConfig::new(Objective::H1, 0.0, 3, 0);
        assert!(matches!(train(&spec, &data, &cfg), Err(SurrogateError::MissingJacobians(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let x = DMatrix::from_fn(8, 1, |i, _| i as f64);
        let y = DMatrix::from_fn(8, 1, |i, _| 1e200 * i as f64);
        let data = TrainingDataset::new(x, y, None).unwrap();
        let spec = NetSpec { hidden: vec![], activation: Activation::Tanh };
        let cfg = TrainConfig::new(Objective::L2, 0.0, 5, 0);
        assert!(matches!(train(&spec, &data, &cfg), Err(SurrogateError::TrainingDiverged { .. })));
    }
}
