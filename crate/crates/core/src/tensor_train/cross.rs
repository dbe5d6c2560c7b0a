//! Alternating maxvol cross interpolation of a vector-valued tensor
//! `A(i, j_1, …, j_d)` whose leading (output) index is never sampled on its own:
//! one probe of a parametric tuple `(j_1, …, j_d)` returns every `i`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tt::{Core, TensorTrain};
use crate::error::{Result, SurrogateError};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct CrossOptions {
    pub rank_cap: usize,
    /// Maximum number of sweeps; one sweep is a left-to-right and a right-to-left pass.
    pub sweeps: usize,
    /// Held-out random indices for the stopping test; 0 falls back to the
    /// cached probes.
    pub validation_size: usize,
    /// Singular values below `svd_tol · σ_max` are dropped from fibers.
    pub svd_tol: f64,
    /// Maxvol stops once every coefficient is below `1 + maxvol_tol`.
    pub maxvol_tol: f64,
    pub seed: u64,
}

impl Default for CrossOptions {
    fn default() -> Self {
        Self { rank_cap: 8, sweeps: 2, validation_size: 64, svd_tol: 1e-12, maxvol_tol: 1e-2, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct CrossResult {
    pub tt: TensorTrain,
    /// Distinct parametric tuples probed by the sweeps.
    pub n_cross: usize,
    /// Distinct held-out tuples probed for validation (not reused by the sweeps).
    pub n_validation: usize,
    /// Probes spent in each sweep.
    pub probes_per_sweep: Vec<usize>,
    /// Relative error after each sweep.
    pub history: Vec<f64>,
    pub converged: bool,
    /// Parametric tuples at which `tt` reproduces the probe exactly (the
    /// pivots of the first bond).
    pub pivots: Vec<Vec<usize>>,
}

impl CrossResult {
    pub fn n_probes(&self) -> usize {
        self.n_cross + self.n_validation
    }
}

/// Row subset of a tall `n × r` matrix with (locally) maximal volume.
pub fn maxvol(u: &DMatrix<f64>, tol: f64) -> Result<Vec<usize>> {
    let (n, r) = u.shape();
    if r == 0 || r > n {
        return Err(SurrogateError::InvalidArgument(format!("maxvol needs 0 < r <= n, got {n}x{r}")));
    }
    // greedy start: Gaussian elimination with row pivoting
    let mut work = u.clone();
    let mut rows = Vec::with_capacity(r);
    let mut used = vec![false; n];
    for j in 0..r {
        let (mut best, mut arg) = (-1.0, 0);
        for i in 0..n {
            if !used[i] && work[(i, j)].abs() > best {
                best = work[(i, j)].abs();
                arg = i;
            }
        }
        if best <= 0.0 {
            return Err(SurrogateError::SolverFailure("maxvol on a rank-deficient matrix".into()));
        }
        used[arg] = true;
        rows.push(arg);
        let pivot_row = work.row(arg).into_owned();
        let p = pivot_row[j];
        for i in 0..n {
            if !used[i] {
                let f = work[(i, j)] / p;
                for c in j..r {
                    work[(i, c)] -= f * pivot_row[c];
                }
            }
        }
    }
    for _ in 0..200 {
        let sub = DMatrix::from_fn(r, r, |a, b| u[(rows[a], b)]);
        let inv = sub.try_inverse().ok_or_else(|| SurrogateError::SolverFailure("singular maxvol submatrix".into()))?;
        let b = u * inv;
        let (mut best, mut bi, mut bj) = (0.0, 0, 0);
        for j in 0..r {
            for i in 0..n {
                if b[(i, j)].abs() > best {
                    best = b[(i, j)].abs();
                    bi = i;
                    bj = j;
                }
            }
        }
        if best <= 1.0 + tol {
            break;
        }
        rows[bj] = bi;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct LeftIdx {
    out: usize,
    params: Vec<usize>,
}

struct Sampler<'a, F> {
    probe: &'a F,
    cache: HashMap<Vec<usize>, DVector<f64>>,
    d_out: Option<usize>,
}

impl<F> Sampler<'_, F>
where
    F: Fn(&[usize]) -> Result<DVector<f64>> + Sync,
{
    /// Probes every tuple not yet cached (in parallel, order preserved).
    fn fetch(&mut self, tuples: Vec<Vec<usize>>) -> Result<usize> {
        let mut missing = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for t in tuples {
            if !self.cache.contains_key(&t) && seen.insert(t.clone()) {
                missing.push(t);
            }
        }
        let outs: Vec<DVector<f64>> = missing.par_iter().map(|t| (self.probe)(t)).collect::<Result<_>>()?;
        for (t, o) in missing.iter().zip(outs) {
            let d = *self.d_out.get_or_insert(o.len());
            if o.len() != d || d == 0 {
                return Err(SurrogateError::DimensionMismatch("probe returned outputs of varying length".into()));
            }
            if o.iter().any(|v| !v.is_finite()) {
                return Err(SurrogateError::SolverFailure(format!("probe returned non-finite values at {t:?}")));
            }
            self.cache.insert(t.clone(), o);
        }
        Ok(missing.len())
    }

    fn get(&self, t: &[usize]) -> &DVector<f64> {
        &self.cache[t]
    }
}

/// Fiber `A(I, j_k, J)` as the left unfolding `(|I| m) × |J|`; core `k = 0` is
/// the output mode with `I = {∅}`.
fn fiber<F>(
    s: &mut Sampler<'_, F>,
    k: usize,
    left: &[LeftIdx],
    m: usize,
    right: &[Vec<usize>],
) -> Result<(DMatrix<f64>, usize)>
where
    F: Fn(&[usize]) -> Result<DVector<f64>> + Sync,
{
    let tuple = |l: &LeftIdx, j: usize, r: &[usize]| -> Vec<usize> {
        let mut t = l.params.clone();
        if k > 0 {
            t.push(j);
        }
        t.extend_from_slice(r);
        t
    };
    let mut need = Vec::new();
    if k == 0 {
        for r in right {
            need.push(r.clone());
        }
    } else {
        for r in right {
            for j in 0..m {
                for l in left {
                    need.push(tuple(l, j, r));
                }
            }
        }
    }
    let fresh = s.fetch(need)?;
    let rp = left.len();
    let mut c = DMatrix::zeros(rp * m, right.len());
    for (b, r) in right.iter().enumerate() {
        if k == 0 {
            let v = s.get(r);
            for i in 0..m {
                c[(i, b)] = v[i];
            }
        } else {
            for j in 0..m {
                for (a, l) in left.iter().enumerate() {
                    c[(a + rp * j, b)] = s.get(&tuple(l, j, r))[l.out];
                }
            }
        }
    }
    Ok((c, fresh))
}

/// Leading left singular vectors above the relative threshold, at most `cap`.
fn dominant_subspace(c: &DMatrix<f64>, tol: f64, cap: usize) -> Result<DMatrix<f64>> {
    let svd = c.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| SurrogateError::EigenFailure("fiber SVD".into()))?;
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let numerical = s.iter().filter(|&&v| v > tol * smax).count().max(1);
    Ok(u.columns(0, numerical.min(cap)).into_owned())
}

/// `U U[rows]⁻¹`: interpolating core factor equal to the identity on `rows`.
fn interpolating_factor(u: &DMatrix<f64>, rows: &[usize]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let sub = DMatrix::from_fn(r, r, |a, b| u[(rows[a], b)]);
    let inv = sub.try_inverse().ok_or_else(|| SurrogateError::SolverFailure("singular cross submatrix".into()))?;
    Ok(u * inv)
}

fn random_tail(rng: &mut ChaCha8Rng, modes: &[usize]) -> Vec<usize> {
    modes.iter().map(|&m| rng.random_range(0..m)).collect()
}

/// Relative Euclidean error of `tt` over `tuples`, using cached probe values.
fn relative_error<'a>(tt: &TensorTrain, tuples: impl Iterator<Item = (&'a Vec<usize>, &'a DVector<f64>)>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (t, y) in tuples {
        let e = eval_index(tt, t);
        num += (e - y).norm_squared();
        den += y.norm_squared();
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Output vector (the full leading mode) at a parametric index tuple.
pub fn eval_index(tt: &TensorTrain, idx: &[usize]) -> DVector<f64> {
    let cores = tt.cores();
    let mut w = DVector::from_element(1, 1.0);
    for (core, &j) in cores[1..].iter().zip(idx).rev() {
        w = core.slice(j) * w;
    }
    let c0 = &cores[0];
    DMatrix::from_column_slice(c0.m, c0.r1, &c0.data) * w
}

/// Cross approximation of the tensor `A(i, j_1, …, j_d) = probe(j)[i]` with
/// parametric mode sizes `modes`.
pub fn tt_cross<F>(probe: F, modes: &[usize], opts: &CrossOptions) -> Result<CrossResult>
where
    F: Fn(&[usize]) -> Result<DVector<f64>> + Sync,
{
    let d = modes.len();
    if d == 0 || modes.contains(&0) {
        return Err(SurrogateError::InvalidArgument("cross needs at least one nonempty parametric mode".into()));
    }
    if opts.rank_cap == 0 || opts.sweeps == 0 {
        return Err(SurrogateError::InvalidArgument("rank_cap and sweeps must be positive".into()));
    }
    let mut rng = rng::stream(opts.seed, 0);
    let mut s = Sampler { probe: &probe, cache: HashMap::new(), d_out: None };

    let validation: Vec<Vec<usize>> = (0..opts.validation_size).map(|_| random_tail(&mut rng, modes)).collect();
    let n_validation = s.fetch(validation.clone())?;
    let validation_values: Vec<(Vec<usize>, DVector<f64>)> =
        validation.iter().map(|t| (t.clone(), s.get(t).clone())).collect();

    // Bond k sits between core k and core k + 1 (core 0 is the output mode);
    // right[k] holds tuples over modes[k..], nested random to start.
    let mut right: Vec<Vec<Vec<usize>>> = vec![Vec::new(); d];
    for k in (0..d).rev() {
        let m = modes[k];
        let pool: Vec<Vec<usize>> = if k + 1 == d {
            (0..m).map(|j| vec![j]).collect()
        } else {
            let mut p = Vec::new();
            for j in 0..m {
                for t in &right[k + 1] {
                    let mut v = vec![j];
                    v.extend_from_slice(t);
                    p.push(v);
                }
            }
            p
        };
        let take = opts.rank_cap.min(pool.len());
        let mut picks = sample(&mut rng, pool.len(), take).into_vec();
        picks.sort_unstable();
        right[k] = picks.into_iter().map(|i| pool[i].clone()).collect();
    }
    let mut left: Vec<Vec<LeftIdx>> = vec![Vec::new(); d];

    let mut history = Vec::new();
    let mut probes_per_sweep = Vec::new();
    let mut best: Option<(f64, TensorTrain, Vec<Vec<usize>>)> = None;
    let mut converged = false;
    s.fetch(right[0].clone())?;
    let d_out = s.d_out.ok_or_else(|| SurrogateError::InvalidArgument("probe produced no output".into()))?;

    for _sweep in 0..opts.sweeps {
        let mut spent = 0;
        // left-to-right
        for k in 0..d {
            let (lset, m) = if k == 0 {
                (vec![LeftIdx { out: 0, params: vec![] }], d_out)
            } else {
                (left[k - 1].clone(), modes[k - 1])
            };
            let mut jset = right[k].clone();
            if jset.len() < opts.rank_cap {
                for _ in 0..16 {
                    let t = random_tail(&mut rng, &modes[k..]);
                    if !jset.contains(&t) {
                        jset.push(t);
                        break;
                    }
                }
            }
            let (c, fresh) = fiber(&mut s, k, &lset, m, &jset)?;
            spent += fresh;
            let u = dominant_subspace(&c, opts.svd_tol, opts.rank_cap)?;
            let rows = maxvol(&u, opts.maxvol_tol)?;
            let rp = lset.len();
            left[k] = rows
                .iter()
                .map(|&row| {
                    let (a, j) = (row % rp, row / rp);
                    if k == 0 {
                        LeftIdx { out: j, params: vec![] }
                    } else {
                        let mut p = lset[a].params.clone();
                        p.push(j);
                        LeftIdx { out: lset[a].out, params: p }
                    }
                })
                .collect();
        }

        // right-to-left
        let mut cores_rev: Vec<Core> = Vec::with_capacity(d + 1);
        for k in (1..=d).rev() {
            let m = modes[k - 1];
            let mut iset = left[k - 1].clone();
            if iset.len() < opts.rank_cap {
                for _ in 0..16 {
                    let cand =
                        LeftIdx { out: rng.random_range(0..d_out), params: random_tail(&mut rng, &modes[..k - 1]) };
                    if !iset.contains(&cand) {
                        iset.push(cand);
                        break;
                    }
                }
            }
            let jset: Vec<Vec<usize>> = if k == d { vec![vec![]] } else { right[k].clone() };
            let (c, fresh) = fiber(&mut s, k, &iset, m, &jset)?;
            spent += fresh;
            let core = Core::from_left_unfolding(iset.len(), m, &c);
            let ct = core.right_unfolding().transpose(); // (m |J|) × |I|
            let u = dominant_subspace(&ct, opts.svd_tol, opts.rank_cap)?;
            let rows = maxvol(&u, opts.maxvol_tol)?;
            let g = interpolating_factor(&u, &rows)?;
            cores_rev.push(Core::from_right_unfolding(m, jset.len(), &g.transpose()));
            right[k - 1] = rows
                .iter()
                .map(|&col| {
                    let (j, b) = (col % m, col / m);
                    let mut t = vec![j];
                    t.extend_from_slice(&jset[b]);
                    t
                })
                .collect();
        }
        let (c0, fresh) = fiber(&mut s, 0, &[LeftIdx { out: 0, params: vec![] }], d_out, &right[0])?;
        spent += fresh;
        cores_rev.push(Core::from_left_unfolding(1, d_out, &c0));
        cores_rev.reverse();
        let tt = TensorTrain::new(cores_rev)?;
        probes_per_sweep.push(spent);

        let err = if validation_values.is_empty() {
            relative_error(&tt, s.cache.iter())
        } else {
            relative_error(&tt, validation_values.iter().map(|(t, v)| (t, v)))
        };
        let prev = history.last().copied();
        history.push(err);
        if best.as_ref().is_none_or(|(e, _, _)| err <= *e) {
            best = Some((err, tt, right[0].clone()));
        }
        if err < 1e-14 || prev.is_some_and(|p| err > 0.9 * p) {
            converged = true;
            break;
        }
    }
    let n_total = s.cache.len();
    let n_cross = n_total - n_validation;
    let (_, tt, pivots) = best.ok_or_else(|| SurrogateError::InvalidArgument("cross produced no iterate".into()))?;
    Ok(CrossResult { tt, n_cross, n_validation, probes_per_sweep, history, converged, pivots })
}
