use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surrogate_core::neural::{
    dataset_loss, jacobian_weights, train, Activation, Batch, Layer, MlpSurrogate, NetSpec, Objective, TrainConfig,
    TrainingDataset,
};

fn perturbed(net: &MlpSurrogate, layer: usize, is_bias: bool, idx: usize, delta: f64) -> MlpSurrogate {
    let mut n = net.clone();
    if is_bias {
        n.layers[layer].b[idx] += delta;
    } else {
        n.layers[layer].w.as_mut_slice()[idx] += delta;
    }
    n
}

fn random_batch(
    rng: &mut ChaCha8Rng,
    d_in: usize,
    d_out: usize,
    b: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let x = DMatrix::from_fn(d_in, b, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(d_out, b, |_, _| rng.random_range(-1.0..1.0));
    let j = DMatrix::from_fn(d_out, b * d_in, |_, _| rng.random_range(-1.0..1.0));
    (x, y, j)
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (d_in, d_out) = (3, 2);
    for (trial, act) in [Activation::Gelu, Activation::Tanh, Activation::Gelu].into_iter().enumerate() {
        let net = MlpSurrogate::new(&[d_in, 8, 8, 8, d_out], act, 100 + trial as u64).unwrap();
        let mut net = net;
        for l in &mut net.layers {
            l.b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let (x, y, j) = random_batch(&mut rng, d_in, d_out, 5);
        let w = jacobian_weights(d_in, 1.0);
        for objective in [Objective::L2, Objective::H1] {
            let batch = Batch { inputs: &x, outputs: &y, jacobians: Some(&j), jac_weights: Some(&w) };
            let (_, g) = net.param_gradient(&batch, objective).unwrap();
            let gmax = g.iter().flat_map(|l| l.w.iter().chain(l.b.iter())).fold(0.0f64, |a, v| a.max(v.abs()));
            let eps = 1e-6;
            for (li, gl) in g.iter().enumerate() {
                for (is_bias, n) in [(false, gl.w.len()), (true, gl.b.len())] {
                    for idx in 0..n {
                        let lp = perturbed(&net, li, is_bias, idx, eps).loss(&batch, objective).unwrap();
                        let lm = perturbed(&net, li, is_bias, idx, -eps).loss(&batch, objective).unwrap();
                        let fd = (lp - lm) / (2.0 * eps);
                        let an = if is_bias { gl.b[idx] } else { gl.w.as_slice()[idx] };
                        let tol = 1e-5 * (an.abs() + 1e-3 * gmax);
                        assert!(
                            (an - fd).abs() <= tol,
                            "{objective:?} {act:?} layer {li} bias {is_bias} idx {idx}: {an} vs {fd}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn forward_matches_matrix_chain_oracle() {
    let net = MlpSurrogate::new(&[4, 6, 5, 3], Activation::Gelu, 3).unwrap();
    let c = DVector::from_vec(vec![0.3, -1.2, 0.8, 0.05]);
    let mut h = c.clone();
    for (i, l) in net.layers.iter().enumerate() {
        let z = &l.w * &h + &l.b;
        h = if i + 1 < net.layers.len() { z.map(|v| 0.5 * v * (1.0 + libm::erf(v / 2f64.sqrt()))) } else { z };
    }
    assert!((net.forward(&c).unwrap() - h).amax() < 1e-13);
    let batch = DMatrix::from_fn(3, 4, |i, k| (i as f64 - 1.0) * 0.4 + k as f64 * 0.1);
    let yb = net.forward_batch(&batch).unwrap();
    for r in 0..3 {
        assert!((yb.row(r).transpose() - net.forward(&batch.row(r).transpose()).unwrap()).amax() < 1e-14);
    }
}

#[test]
fn input_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for act in [Activation::Gelu, Activation::Tanh] {
        let net = MlpSurrogate::new(&[5, 7, 7, 3], act, 4).unwrap();
        for _ in 0..10 {
            let c = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let j = net.input_jacobian(&c).unwrap();
            let h = 1e-6;
            for k in 0..5 {
                let mut p = c.clone();
                let mut m = c.clone();
                p[k] += h;
                m[k] -= h;
                let fd = (net.forward(&p).unwrap() - net.forward(&m).unwrap()) / (2.0 * h);
                for i in 0..3 {
                    assert!((j[(i, k)] - fd[i]).abs() <= 1e-6 * j[(i, k)].abs().max(1e-3));
                }
            }
        }
    }
}

#[test]
fn linear_network_jacobian_is_weight_product() {
    let net = MlpSurrogate::new(&[4, 3], Activation::Gelu, 1).unwrap();
    let j = net.input_jacobian(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
    assert_eq!(j, net.layers[0].w);
    let mut tanh_net = MlpSurrogate::new(&[3, 4, 4, 2], Activation::Tanh, 2).unwrap();
    for l in &mut tanh_net.layers {
        l.b.fill(0.0);
    }
    let j = tanh_net.input_jacobian(&DVector::zeros(3)).unwrap();
    let w = &tanh_net.layers;
    assert!((j - &w[2].w * &w[1].w * &w[0].w).amax() < 1e-15);
}

#[test]
fn loss_hand_cases() {
    let net = MlpSurrogate::zeros(&[2, 3, 1], Activation::Gelu).unwrap();
    let x = DMatrix::from_column_slice(2, 2, &[0.1, 0.2, -0.3, 0.4]);
    let y = DMatrix::from_column_slice(1, 2, &[1.0, 3.0]);
    // two samples, Jacobians (1, 2) and (0, -1)
    let j = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 0.0, -1.0]);
    let w = jacobian_weights(2, 0.0);
    let b = Batch { inputs: &x, outputs: &y, jacobians: Some(&j), jac_weights: Some(&w) };
    assert!((net.loss(&b, Objective::L2).unwrap() - 5.0).abs() < 1e-15);
    // 5 + (1 + 4 + 0 + 1) / 2
    assert!((net.loss(&b, Objective::H1).unwrap() - 8.0).abs() < 1e-15);
    let (_, g) = net
        .param_gradient(
            &Batch { inputs: &x, outputs: &DMatrix::zeros(1, 2), jacobians: None, jac_weights: None },
            Objective::L2,
        )
        .unwrap();
    assert!(g.iter().all(|l| l.w.amax() == 0.0 && l.b.amax() == 0.0));
}

#[test]
fn linear_least_squares_gradient_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = MlpSurrogate::new(&[3, 2], Activation::Tanh, 5).unwrap();
    net.layers[0].b = DVector::from_vec(vec![0.2, -0.1]);
    let x = DMatrix::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(2, 6, |_, _| rng.random_range(-1.0..1.0));
    let (_, g) = net
        .param_gradient(&Batch { inputs: &x, outputs: &y, jacobians: None, jac_weights: None }, Objective::L2)
        .unwrap();
    let l = &net.layers[0];
    let mut r = &l.w * &x - &y;
    for mut c in r.column_iter_mut() {
        c += &l.b;
    }
    let gw = &r * x.transpose() * (2.0 / 6.0);
    let gb = r.column_sum() * (2.0 / 6.0);
    assert!((&g[0].w - gw).amax() < 1e-10);
    assert!((&g[0].b - gb).amax() < 1e-10);
    let _ = Layer { w: g[0].w.clone(), b: g[0].b.clone() };
}

fn linear_data(n: usize, seed: u64) -> TrainingDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_row_slice(2, 3, &[0.5, -0.2, 0.1, 0.3, 0.0, -0.4]);
    let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
    let y = &x * a.transpose();
    TrainingDataset::new(x, y, Some(vec![a; n])).unwrap()
}

#[test]
fn linear_model_is_learned() {
    let data = linear_data(64, 1);
    let spec = NetSpec { hidden: vec![], activation: Activation::Gelu };
    let mut cfg = TrainConfig::new(Objective::L2, 0.0, 500, 3);
    cfg.lr_schedule = vec![(0, 1e-2), (300, 1e-3), (450, 1e-4)];
    let out = train(&spec, &data, &cfg).unwrap();
    assert!(out.trace.last().unwrap().train_loss < 1e-6, "{:?}", out.trace.last());
}

#[test]
fn training_is_bit_reproducible() {
    let data = linear_data(40, 2);
    let spec = NetSpec { hidden: vec![6, 6], activation: Activation::Gelu };
    let cfg = TrainConfig::new(Objective::H1, 1.0, 20, 11);
    let a = train(&spec, &data, &cfg).unwrap();
    let b = train(&spec, &data, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.net, b.net);
}

#[test]
fn returned_snapshot_has_minimal_validation_loss() {
    let data = linear_data(60, 3);
    let spec = NetSpec { hidden: vec![5], activation: Activation::Tanh };
    let mut cfg = TrainConfig::new(Objective::L2, 0.0, 40, 5);
    cfg.validation_fraction = 0.2;
    let out = train(&spec, &data, &cfg).unwrap();
    assert!(out.trace.iter().all(|r| out.best_val_loss <= r.val_loss));
    let (_, val) = surrogate_core::neural::split_indices(60, 0.2, 5);
    let recomputed = dataset_loss(&out.net, &data, &val, Objective::L2, 0.0).unwrap();
    assert!((recomputed - out.best_val_loss).abs() < 1e-12 * out.best_val_loss.max(1e-300));
}

#[test]
fn full_batch_loss_is_permutation_invariant() {
    let data = linear_data(30, 4);
    let net = MlpSurrogate::new(&[3, 4, 2], Activation::Gelu, 6).unwrap();
    let idx: Vec<usize> = (0..30).collect();
    let mut perm = idx.clone();
    perm.reverse();
    perm.swap(3, 17);
    for obj in [Objective::L2, Objective::H1] {
        let a = dataset_loss(&net, &data, &idx, obj, 1.0).unwrap();
        let b = dataset_loss(&net, &data, &perm, obj, 1.0).unwrap();
        assert!((a - b).abs() < 1e-13 * a);
    }
}

#[test]
fn zero_net_loss_scales_quadratically() {
    let data = linear_data(20, 5);
    let net = MlpSurrogate::zeros(&[3, 4, 2], Activation::Gelu).unwrap();
    let idx: Vec<usize> = (0..20).collect();
    let base = dataset_loss(&net, &data, &idx, Objective::L2, 0.0).unwrap();
    let scaled = TrainingDataset::new(data.inputs.clone(), &data.outputs * 3.0, None).unwrap();
    let s = dataset_loss(&net, &scaled, &idx, Objective::L2, 0.0).unwrap();
    assert!((s - 9.0 * base).abs() < 1e-12 * s);
}

#[test]
fn derivative_information_helps_on_quadratic_map() {
    // g(c) = (c1² − c2 c3, c1 + c2²) with exact Jacobians, small sample
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 24;
    let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(n, 2, |i, j| {
        let c = x.row(i);
        if j == 0 {
            c[0] * c[0] - c[1] * c[2]
        } else {
            c[0] + c[1] * c[1]
        }
    });
    let jac: Vec<DMatrix<f64>> = (0..n)
        .map(|i| {
            let c = x.row(i);
            DMatrix::from_row_slice(2, 3, &[2.0 * c[0], -c[2], -c[1], 1.0, 2.0 * c[1], 0.0])
        })
        .collect();
    let data = TrainingDataset::new(x, y, Some(jac)).unwrap();
    // held-out evaluation set
    let m = 200;
    let xt = DMatrix::from_fn(m, 3, |_, _| rng.random_range(-1.0..1.0));
    let yt = DMatrix::from_fn(m, 2, |i, j| {
        let c = xt.row(i);
        if j == 0 {
            c[0] * c[0] - c[1] * c[2]
        } else {
            c[0] + c[1] * c[1]
        }
    });
    let jt: Vec<DMatrix<f64>> = (0..m)
        .map(|i| {
            let c = xt.row(i);
            DMatrix::from_row_slice(2, 3, &[2.0 * c[0], -c[2], -c[1], 1.0, 2.0 * c[1], 0.0])
        })
        .collect();
    let test = TrainingDataset::new(xt, yt, Some(jt)).unwrap();
    let all: Vec<usize> = (0..m).collect();
    let spec = NetSpec { hidden: vec![16, 16], activation: Activation::Gelu };
    let mut h1_losses = Vec::new();
    for obj in [Objective::L2, Objective::H1] {
        let mut cfg = TrainConfig::new(obj, 0.0, 400, 21);
        cfg.lr_schedule = vec![(0, 3e-3), (250, 1e-3), (350, 1e-4)];
        let out = train(&spec, &data, &cfg).unwrap();
        h1_losses.push(dataset_loss(&out.net, &test, &all, Objective::H1, 0.0).unwrap());
    }
    assert!(h1_losses[1] < h1_losses[0], "H1-trained {} vs L2-trained {}", h1_losses[1], h1_losses[0]);
}
