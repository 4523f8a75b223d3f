//! Probability allocation under a sampling budget, and the samplers.
//!
//! Given non-negative importance weights `w`, the optimal inclusion
//! probabilities for an unbiased `1/p`-rescaled selection of `r` coordinates
//! solve
//!
//! ```text
//! min Σ wᵢ / pᵢ   s.t.  Σ pᵢ ≤ r,  0 < pᵢ ≤ 1
//! ```
//!
//! whose KKT solution is the water-filling rule `pᵢ = min(1, √wᵢ / √λ)`.
//! Coordinates with `wᵢ = 0` are excluded: they get `pᵢ = 0` and are never
//! drawn, so no `0/0` rescale can occur.

use rand::Rng;

use crate::{Error, Result};

/// Slack allowed on `Σ p` before a hand-built allocation is rejected.
const SUM_TOL: f64 = 1e-6;
/// Slack allowed on an individual `pᵢ ≤ 1`.
const CAP_TOL: f64 = 1e-9;

/// Non-negative, finite importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some((i, &v)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("weight {i} is {v}; weights must be finite and non-negative")));
        }
        Ok(WeightVector(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Inclusion probabilities for a budget of `r` draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityAllocation {
    p: Vec<f64>,
    budget: usize,
    lambda_sqrt: f64,
}

impl ProbabilityAllocation {
    /// Wraps hand-chosen probabilities, checking `pᵢ ∈ [0, 1]` and
    /// `Σ pᵢ = min(r, support)` up to `1e-6`.
    pub fn from_probabilities(p: Vec<f64>, r: usize) -> Result<Self> {
        for (index, &value) in p.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0 + CAP_TOL).contains(&value) {
                return Err(Error::InvalidProbability { index, value });
            }
        }
        let support = p.iter().filter(|&&v| v > 0.0).count();
        let target = r.min(support) as f64;
        let sum: f64 = p.iter().sum();
        if (sum - target).abs() > SUM_TOL {
            return Err(Error::invalid(format!("probabilities sum to {sum}, expected {target}")));
        }
        let p = p.into_iter().map(|v| v.min(1.0)).collect();
        Ok(ProbabilityAllocation { p, budget: r, lambda_sqrt: f64::NAN })
    }

    /// Every coordinate kept with probability one.
    pub fn full(n: usize) -> Self {
        ProbabilityAllocation { p: vec![1.0; n], budget: n, lambda_sqrt: 0.0 }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// `√λ` of the KKT conditions (NaN for hand-built allocations).
    pub fn lambda_sqrt(&self) -> f64 {
        self.lambda_sqrt
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.p.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i)
    }

    pub fn support_size(&self) -> usize {
        self.p.iter().filter(|&&v| v > 0.0).count()
    }

    /// Number of indices a correlated draw returns: `min(r, support)`.
    pub fn draw_count(&self) -> usize {
        self.budget.min(self.support_size())
    }

    /// `Σ wᵢ / pᵢ` over the support.
    pub fn objective(&self, w: &WeightVector) -> f64 {
        self.p.iter().zip(w.as_slice()).filter(|(&p, _)| p > 0.0).map(|(&p, &w)| w / p).sum()
    }
}

/// Selected indices with their unbiasing rescale `1/pᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSample {
    indices: Vec<usize>,
    scales: Vec<f64>,
}

impl IndexSample {
    fn from_selection(indices: Vec<usize>, p: &[f64]) -> Self {
        let scales = indices.iter().map(|&i| 1.0 / p[i]).collect();
        IndexSample { indices, scales }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.scales.iter().copied())
    }

    /// Dense vector of `zᵢ / pᵢ` of length `n`.
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut d = vec![0.0; n];
        for (i, s) in self.iter() {
            d[i] = s;
        }
        d
    }
}

/// Water-filling solution of `min Σ wᵢ/pᵢ` s.t. `Σ pᵢ ≤ r`.
///
/// Sorts `√wᵢ` in decreasing order (ties by index) and scans the number `k`
/// of capped coordinates until the threshold `√λ = S_{k+1} / (r - k)` lies
/// between the `k`-th and `(k+1)`-th largest value.
pub fn pstar_from_weights(w: &WeightVector, r: usize) -> Result<ProbabilityAllocation> {
    if r == 0 {
        return Err(Error::invalid("sampling budget r must be at least 1"));
    }
    let n = w.len();
    let support: Vec<usize> = (0..n).filter(|&i| w.0[i] > 0.0).collect();
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let t: Vec<f64> = w.0.iter().map(|v| v.sqrt()).collect();
    if support.len() <= r {
        let mut p = vec![0.0; n];
        for &i in &support {
            p[i] = 1.0;
        }
        let lambda_sqrt = support.iter().map(|&i| t[i]).fold(f64::INFINITY, f64::min);
        return Ok(ProbabilityAllocation { p, budget: r, lambda_sqrt });
    }

    let mut order = support;
    order.sort_by(|&a, &b| t[b].total_cmp(&t[a]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| t[i]).collect();
    let m = sorted.len();
    // suffix[k] = Σ_{i ≥ k} sorted[i]
    let mut suffix = vec![0.0; m + 1];
    for k in (0..m).rev() {
        suffix[k] = suffix[k + 1] + sorted[k];
    }

    let mut chosen = None;
    let mut fallback = None;
    for k in 0..m {
        if k >= r {
            break;
        }
        let lambda_sqrt = suffix[k] / (r - k) as f64;
        if sorted[k] <= lambda_sqrt {
            fallback.get_or_insert(lambda_sqrt);
            if k == 0 || sorted[k - 1] >= lambda_sqrt {
                chosen = Some(lambda_sqrt);
                break;
            }
        }
    }
    let lambda_sqrt = chosen.or(fallback).ok_or_else(|| Error::invalid("water-filling found no threshold"))?;

    let mut p = vec![0.0; n];
    for &i in &order {
        p[i] = (t[i] / lambda_sqrt).min(1.0);
    }
    Ok(ProbabilityAllocation { p, budget: r, lambda_sqrt })
}

/// Systematic sampling of exactly `min(r, support)` distinct indices with
/// marginals `pᵢ`.
///
/// One uniform `u ∈ (0, 1]` is drawn and the points `u, u+1, …, u+r-1` are
/// located on the cumulative sums of `p`; the last cumulative sum is pinned
/// to `r`. Index `i` is hit iff one of the points falls in its interval of
/// length `pᵢ ≤ 1`, hence exactly once with probability `pᵢ`.
pub fn correlated_exact_r_sample<R: Rng + ?Sized>(alloc: &ProbabilityAllocation, rng: &mut R) -> IndexSample {
    let k = alloc.draw_count();
    if k == 0 {
        return IndexSample { indices: Vec::new(), scales: Vec::new() };
    }
    let target = k as f64;
    let mut cumulative = Vec::with_capacity(alloc.p.len());
    let mut acc = 0.0;
    for &p in &alloc.p {
        acc += p;
        cumulative.push(acc.min(target));
    }
    // pin the last non-excluded cumulative sum (and everything after it) to r
    if let Some(last) = alloc.p.iter().rposition(|&p| p > 0.0) {
        for c in &mut cumulative[last..] {
            *c = target;
        }
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    let mut indices = Vec::with_capacity(k);
    for l in 0..k {
        let point = u + l as f64;
        let j = cumulative.partition_point(|&c| c < point);
        let j = j.min(cumulative.len() - 1);
        if indices.last() != Some(&j) {
            indices.push(j);
        }
    }
    debug_assert_eq!(indices.len(), k, "systematic sampler produced duplicate indices");
    IndexSample::from_selection(indices, &alloc.p)
}

/// Independent `zᵢ ~ Bernoulli(pᵢ)` over the support of the allocation.
pub fn independent_sample<R: Rng + ?Sized>(alloc: &ProbabilityAllocation, rng: &mut R) -> IndexSample {
    let indices = alloc
        .p
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .filter_map(|(i, &p)| (rng.random::<f64>() < p).then_some(i))
        .collect();
    IndexSample::from_selection(indices, &alloc.p)
}

/// I.i.d. Bernoulli mask, `true` with probability `pᵢ` at coordinate `i`.
pub fn independent_bernoulli<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> Vec<bool> {
    p.iter().map(|&pi| rng.random::<f64>() < pi).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn wv(w: &[f64]) -> WeightVector {
        WeightVector::new(w.to_vec()).unwrap()
    }

    #[test]
    fn symmetric_weights_split_evenly() {
        let a = pstar_from_weights(&wv(&[1.0; 4]), 2).unwrap();
        assert_eq!(a.probabilities(), &[0.5; 4]);
    }

    #[test]
    fn saturated_budget_caps_everything() {
        let a = pstar_from_weights(&wv(&[0.3, 5.0, 2.0]), 3).unwrap();
        assert_eq!(a.probabilities(), &[1.0; 3]);
        let a = pstar_from_weights(&wv(&[0.3, 5.0, 2.0]), 7).unwrap();
        assert_eq!(a.probabilities(), &[1.0; 3]);
    }

    #[test]
    fn one_capped_coordinate() {
        // oracle value from a 0.01-lattice search: p = (1, ½, ½), objective 8
        let w = wv(&[4.0, 1.0, 1.0]);
        let a = pstar_from_weights(&w, 2).unwrap();
        assert_eq!(a.probabilities(), &[1.0, 0.5, 0.5]);
        assert_eq!(a.objective(&w), 8.0);
        assert_eq!(a.lambda_sqrt(), 2.0);
    }

    #[test]
    fn zero_weights_are_excluded() {
        let a = pstar_from_weights(&wv(&[0.0, 1.0, 0.0, 1.0]), 1).unwrap();
        assert_eq!(a.probabilities(), &[0.0, 0.5, 0.0, 0.5]);
        let a = pstar_from_weights(&wv(&[0.0, 2.0, 0.0]), 2).unwrap();
        assert_eq!(a.probabilities(), &[0.0, 1.0, 0.0]);
        assert_eq!(a.draw_count(), 1);
        assert!(matches!(pstar_from_weights(&wv(&[0.0, 0.0]), 1), Err(Error::EmptySupport)));
        assert!(pstar_from_weights(&wv(&[1.0]), 0).is_err());
        assert!(WeightVector::new(vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn forced_inclusion() {
        let a = ProbabilityAllocation::from_probabilities(vec![1.0, 1.0, 0.0], 2).unwrap();
        let mut rng = stream(1, 0, 0);
        for _ in 0..1000 {
            let s = correlated_exact_r_sample(&a, &mut rng);
            assert_eq!(s.indices(), &[0, 1]);
            assert_eq!(s.scales(), &[1.0, 1.0]);
        }
    }

    #[test]
    fn hand_built_allocations_are_validated() {
        assert!(matches!(
            ProbabilityAllocation::from_probabilities(vec![1.2, 0.8], 2),
            Err(Error::InvalidProbability { index: 0, .. })
        ));
        assert!(ProbabilityAllocation::from_probabilities(vec![0.5, 0.4], 1).is_err());
        assert!(ProbabilityAllocation::from_probabilities(vec![0.5, 0.5 + 1e-9], 1).is_ok());
    }

    fn frequencies(p: &[f64], r: usize, draws: usize, seed: u64) -> Vec<f64> {
        let a = ProbabilityAllocation::from_probabilities(p.to_vec(), r).unwrap();
        let mut rng = stream(seed, 0, 0);
        let mut hits = vec![0usize; p.len()];
        for _ in 0..draws {
            let s = correlated_exact_r_sample(&a, &mut rng);
            assert_eq!(s.len(), r);
            assert!(s.indices().windows(2).all(|w| w[0] < w[1]));
            for &i in s.indices() {
                hits[i] += 1;
            }
        }
        hits.iter().map(|&h| h as f64 / draws as f64).collect()
    }

    fn within_binomial_band(freq: &[f64], p: &[f64], draws: usize) {
        for (f, &pi) in freq.iter().zip(p) {
            let sigma = (pi * (1.0 - pi) / draws as f64).sqrt();
            assert!((f - pi).abs() <= 4.0 * sigma + 1e-12, "freq {f} vs p {pi} (σ {sigma})");
        }
    }

    #[test]
    fn systematic_marginals_two_coordinates() {
        let p = [0.5, 0.5];
        within_binomial_band(&frequencies(&p, 1, 100_000, 3), &p, 100_000);
    }

    #[test]
    fn systematic_marginals_three_coordinates() {
        let p = [0.7, 0.5, 0.8];
        within_binomial_band(&frequencies(&p, 2, 100_000, 4), &p, 100_000);
    }

    #[test]
    fn bernoulli_masks() {
        let mut rng = stream(2, 0, 0);
        assert!(independent_bernoulli(&[1.0; 50], &mut rng).iter().all(|&b| b));
        assert!(independent_bernoulli(&[0.0; 50], &mut rng).iter().all(|&b| !b));
        let n = 10_000;
        let count = independent_bernoulli(&vec![0.3; n], &mut rng).iter().filter(|&&b| b).count() as f64;
        let sigma = (n as f64 * 0.3 * 0.7).sqrt();
        assert!((count - 3000.0).abs() <= 4.0 * sigma, "{count}");
    }

    #[test]
    fn independent_sample_rescales() {
        let w = wv(&[4.0, 1.0, 1.0, 0.0]);
        let a = pstar_from_weights(&w, 2).unwrap();
        let mut rng = stream(5, 0, 0);
        for _ in 0..200 {
            let s = independent_sample(&a, &mut rng);
            assert!(s.indices().contains(&0));
            assert!(!s.indices().contains(&3));
            for (i, scale) in s.iter() {
                assert_eq!(scale, 1.0 / a.probabilities()[i]);
            }
        }
    }
}
