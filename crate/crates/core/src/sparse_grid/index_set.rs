//! Downward-closed multi-index sets `Λ ⊂ ℕ₀^d` and Smolyak combination coefficients.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SurrogateError};

/// Hard ceiling on enumerated set sizes.
pub const MAX_INDEX_SET_SIZE: usize = 5_000_000;

/// Anisotropic generator: `Σ_j log(a + j b) ν_j < ℓ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexSetParams {
    pub a: f64,
    pub b: f64,
    pub ell: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiIndexSet {
    dim: usize,
    indices: Vec<Vec<u32>>,
    lookup: HashMap<Vec<u32>, usize>,
    pub params: Option<IndexSetParams>,
}

impl MultiIndexSet {
    /// Validates an explicit list: equal lengths, no duplicates, downward closed.
    pub fn from_indices(dim: usize, indices: Vec<Vec<u32>>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(indices.len());
        for (i, nu) in indices.iter().enumerate() {
            if nu.len() != dim {
                return Err(SurrogateError::DimensionMismatch(format!(
                    "multi-index {nu:?} has length {}, expected {dim}",
                    nu.len()
                )));
            }
            if lookup.insert(nu.clone(), i).is_some() {
                return Err(SurrogateError::InvalidArgument(format!("duplicate multi-index {nu:?}")));
            }
        }
        let set = Self { dim, indices, lookup, params: None };
        if let Some(nu) = set.closure_violation() {
            return Err(SurrogateError::InvalidArgument(format!("index set is not downward closed at {nu:?}")));
        }
        Ok(set)
    }

    fn from_trusted(dim: usize, indices: Vec<Vec<u32>>, params: Option<IndexSetParams>) -> Self {
        let lookup = indices.iter().enumerate().map(|(i, nu)| (nu.clone(), i)).collect();
        Self { dim, indices, lookup, params }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    pub fn position(&self, nu: &[u32]) -> Option<usize> {
        self.lookup.get(nu).copied()
    }

    pub fn contains(&self, nu: &[u32]) -> bool {
        self.lookup.contains_key(nu)
    }

    /// Largest entry per coordinate.
    pub fn max_degrees(&self) -> Vec<u32> {
        let mut m = vec![0; self.dim];
        for nu in &self.indices {
            for (a, &b) in m.iter_mut().zip(nu) {
                *a = (*a).max(b);
            }
        }
        m
    }

    /// First member with a missing backward neighbour, if any.
    pub fn closure_violation(&self) -> Option<&[u32]> {
        let mut probe = vec![0u32; self.dim];
        for nu in &self.indices {
            probe.copy_from_slice(nu);
            for j in 0..self.dim {
                if nu[j] > 0 {
                    probe[j] -= 1;
                    let ok = self.lookup.contains_key(&probe);
                    probe[j] += 1;
                    if !ok {
                        return Some(nu);
                    }
                }
            }
        }
        None
    }

    pub fn is_downward_closed(&self) -> bool {
        self.closure_violation().is_none()
    }

    /// `ζ_{Λ,ν} = Σ_{e ∈ {0,1}^d, ν+e ∈ Λ} (−1)^{|e|}` for every member, as
    /// `(position, ζ)` pairs with zeros dropped.
    pub fn smolyak_coefficients(&self) -> Vec<(usize, i64)> {
        let mut out = Vec::new();
        let mut probe = vec![0u32; self.dim];
        for (p, nu) in self.indices.iter().enumerate() {
            probe.copy_from_slice(nu);
            let forward: Vec<usize> = (0..self.dim)
                .filter(|&j| {
                    probe[j] += 1;
                    let hit = self.lookup.contains_key(&probe);
                    probe[j] -= 1;
                    hit
                })
                .collect();
            let zeta = signed_subset_sum(&self.lookup, &mut probe, &forward, 0, 0);
            if zeta != 0 {
                out.push((p, zeta));
            }
        }
        out
    }
}

/// Sum of `(−1)^{|E|}` over subsets `E` of `dirs[start..]` with `ν + e_E ∈ Λ`,
/// extending the subset already applied to `probe`. Downward closedness lets a
/// failed extension prune every superset.
fn signed_subset_sum(
    lookup: &HashMap<Vec<u32>, usize>,
    probe: &mut [u32],
    dirs: &[usize],
    start: usize,
    depth: usize,
) -> i64 {
    let mut acc = if depth.is_multiple_of(2) { 1 } else { -1 };
    for t in start..dirs.len() {
        let j = dirs[t];
        probe[j] += 1;
        if lookup.contains_key(&*probe) {
            acc += signed_subset_sum(lookup, probe, dirs, t + 1, depth + 1);
        }
        probe[j] -= 1;
    }
    acc
}

/// Enumerates `Λ_{a,b,ℓ} = {ν ∈ ℕ₀^d : Σ_j log(a + j b) ν_j < ℓ}` (j one-based).
pub fn build_index_set(a: f64, b: f64, ell: f64, d: usize) -> Result<MultiIndexSet> {
    if d == 0 {
        return Err(SurrogateError::InvalidArgument("index set dimension must be positive".into()));
    }
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(SurrogateError::InvalidArgument(format!("level ell must be positive and finite, got {ell}")));
    }
    let mut weights = Vec::with_capacity(d);
    for j in 1..=d {
        let w = (a + j as f64 * b).ln();
        if !(w > 0.0) || !w.is_finite() {
            return Err(SurrogateError::UnboundedIndexSet { j, weight: w });
        }
        weights.push(w);
    }
    // suffix minima let the search stop once no later coordinate fits
    let mut suffix_min = vec![f64::INFINITY; d + 1];
    for j in (0..d).rev() {
        suffix_min[j] = suffix_min[j + 1].min(weights[j]);
    }
    let mut out = Vec::new();
    let mut cur = vec![0u32; d];
    enumerate(&weights, &suffix_min, ell, 0, 0.0, &mut cur, &mut out)?;
    Ok(MultiIndexSet::from_trusted(d, out, Some(IndexSetParams { a, b, ell })))
}

fn enumerate(
    w: &[f64],
    suffix_min: &[f64],
    ell: f64,
    k: usize,
    used: f64,
    cur: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
) -> Result<()> {
    if k == w.len() || used + suffix_min[k] >= ell {
        if out.len() >= MAX_INDEX_SET_SIZE {
            return Err(SurrogateError::InvalidArgument(format!("index set exceeds {MAX_INDEX_SET_SIZE} members")));
        }
        out.push(cur.clone());
        return Ok(());
    }
    let mut v = 0u32;
    while used + w[k] * f64::from(v) < ell {
        cur[k] = v;
        enumerate(w, suffix_min, ell, k + 1, used + w[k] * f64::from(v), cur, out)?;
        v += 1;
    }
    cur[k] = 0;
    Ok(())
}

/// Largest `Λ_{a,b,ℓ}` with at most `target` members, found by bisection on `ℓ`.
pub fn index_set_with_size(a: f64, b: f64, d: usize, target: usize) -> Result<MultiIndexSet> {
    if target == 0 {
        return Err(SurrogateError::InvalidArgument("target index set size must be positive".into()));
    }
    let mut lo = 1e-12;
    let mut best = build_index_set(a, b, lo, d)?;
    let mut hi = 1.0;
    loop {
        let s = build_index_set(a, b, hi, d)?;
        if s.len() > target {
            break;
        }
        best = s;
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Ok(best);
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let s = build_index_set(a, b, mid, d)?;
        if s.len() <= target {
            lo = mid;
            best = s;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(set: &MultiIndexSet) -> Vec<Vec<u32>> {
        let mut v = set.indices().to_vec();
        v.sort();
        v
    }

    #[test]
    fn small_sets_match_enumeration() {
        assert_eq!(sorted(&build_index_set(2.0, 1.0, 1.0, 2).unwrap()), vec![vec![0, 0]]);
        assert_eq!(
            sorted(&build_index_set(2.0, 1.0, 2.3, 2).unwrap()),
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![2, 0]]
        );
    }

    #[test]
    fn unbounded_weights_are_rejected() {
        match build_index_set(0.2, 0.2, 3.0, 4) {
            Err(SurrogateError::UnboundedIndexSet { j, weight }) => {
                assert_eq!(j, 1);
                assert!(weight < 0.0);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
        assert!(build_index_set(2.0, 1.0, 0.0, 2).is_err());
    }

    #[test]
    fn explicit_sets_are_validated() {
        assert!(MultiIndexSet::from_indices(2, vec![vec![0, 0], vec![0, 2]]).is_err());
        assert!(MultiIndexSet::from_indices(2, vec![vec![0, 0], vec![0, 0]]).is_err());
        assert!(MultiIndexSet::from_indices(2, vec![vec![0]]).is_err());
        assert!(MultiIndexSet::from_indices(2, vec![vec![0, 0], vec![1, 0]]).is_ok());
    }

    #[test]
    fn coefficients_hand_cases() {
        let s = MultiIndexSet::from_indices(3, vec![vec![0, 0, 0]]).unwrap();
        assert_eq!(s.smolyak_coefficients(), vec![(0, 1)]);

        let s = MultiIndexSet::from_indices(1, (0..5).map(|i| vec![i]).collect()).unwrap();
        assert_eq!(s.smolyak_coefficients(), vec![(4, 1)]);

        let s = MultiIndexSet::from_indices(2, vec![vec![0, 0], vec![1, 0], vec![0, 1]]).unwrap();
        let mut z = s.smolyak_coefficients();
        z.sort();
        assert_eq!(z, vec![(0, -1), (1, 1), (2, 1)]);
    }

    #[test]
    fn bisection_hits_size_bound() {
        let s = index_set_with_size(2.0, 1.0, 5, 40).unwrap();
        assert!(s.len() <= 40 && s.len() > 20);
        assert!(s.is_downward_closed());
    }
}
