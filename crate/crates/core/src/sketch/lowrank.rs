use rand::Rng;

use crate::budget::{correlated_exact_r_sample, ProbabilityAllocation};
use crate::linalg::{svd, Svd};
use crate::{DenseMatrix, Error, Result};

/// One draw of the minimum-variance unbiased rank-`r` sketch of `M`.
#[derive(Debug, Clone)]
pub struct LowRankSketchResult {
    pub s: DenseMatrix,
    /// Number of leading singular components kept deterministically.
    pub i0: usize,
    /// Inclusion probability of every singular component.
    pub p: Vec<f64>,
    /// `E‖S‖²_F = Σ_{i≤i₀} σᵢ² + (Σ_{i>i₀} σᵢ)² / (r − i₀)`.
    pub expected_sq_frobenius: f64,
    /// `E‖S − M‖²_F = E‖S‖²_F − ‖M‖²_F`.
    pub expected_sq_error: f64,
}

/// Precomputed SVD and probabilities for repeated draws.
///
/// The leading `i₀` components are always kept, where `i₀` is the smallest
/// index with `σ_{i₀} > Σ_{j>i₀} σⱼ / (r − i₀) ≥ σ_{i₀+1}`; the remaining
/// budget `r − i₀` is spread over the tail with `pᵢ ∝ σᵢ` and sampled
/// systematically, so every draw has rank at most `r`.
#[derive(Debug, Clone)]
pub struct LowRankSketcher {
    svd: Svd,
    i0: usize,
    p: Vec<f64>,
    tail: Option<ProbabilityAllocation>,
    expected_sq_frobenius: f64,
    norm_sq: f64,
}

impl LowRankSketcher {
    pub fn new(m: &DenseMatrix, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidArgument("rank budget r must be at least 1".into()));
        }
        if m.data().iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument("cannot sketch the zero matrix".into()));
        }
        let svd = svd(m)?;
        let sigma = &svd.singular_values;
        let q = sigma.len();
        let norm_sq: f64 = sigma.iter().map(|s| s * s).sum();
        if r >= q {
            return Ok(LowRankSketcher {
                i0: q,
                p: vec![1.0; q],
                tail: None,
                expected_sq_frobenius: norm_sq,
                norm_sq,
                svd,
            });
        }

        // suffix[i] = Σ_{j ≥ i} σⱼ (0-based)
        let mut suffix = vec![0.0; q + 1];
        for i in (0..q).rev() {
            suffix[i] = suffix[i + 1] + sigma[i];
        }
        let i0 = (0..r)
            .find(|&i0| {
                let alpha = suffix[i0] / (r - i0) as f64;
                (i0 == 0 || sigma[i0 - 1] > alpha) && alpha >= sigma[i0]
            })
            .ok_or_else(|| Error::InvalidArgument("no rank threshold found".into()))?;

        let tail_sum = suffix[i0];
        let k = (r - i0) as f64;
        let mut p = vec![1.0; q];
        for i in i0..q {
            p[i] = if tail_sum > 0.0 { (k * sigma[i] / tail_sum).min(1.0) } else { 0.0 };
        }
        let tail = if tail_sum > 0.0 {
            Some(ProbabilityAllocation::from_probabilities(p[i0..].to_vec(), r - i0)?)
        } else {
            None
        };
        let head: f64 = sigma[..i0].iter().map(|s| s * s).sum();
        let expected_sq_frobenius = head + if tail_sum > 0.0 { tail_sum * tail_sum / k } else { 0.0 };
        Ok(LowRankSketcher { svd, i0, p, tail, expected_sq_frobenius, norm_sq })
    }

    pub fn i0(&self) -> usize {
        self.i0
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.svd.singular_values
    }

    pub fn expected_sq_frobenius(&self) -> f64 {
        self.expected_sq_frobenius
    }

    pub fn expected_sq_error(&self) -> f64 {
        (self.expected_sq_frobenius - self.norm_sq).max(0.0)
    }

    /// Draws `S` with `E[S] = M`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DenseMatrix {
        let u = &self.svd.left_vectors;
        let v = &self.svd.right_vectors;
        let sigma = &self.svd.singular_values;
        let mut coef = vec![0.0; sigma.len()];
        coef[..self.i0].copy_from_slice(&sigma[..self.i0]);
        if let Some(tail) = &self.tail {
            for (i, scale) in correlated_exact_r_sample(tail, rng).iter() {
                let idx = self.i0 + i;
                coef[idx] = sigma[idx] * scale;
            }
        }
        let us = DenseMatrix::from_fn(u.rows(), u.cols(), |i, j| u[(i, j)] * coef[j]);
        us.matmul_nt(v)
    }

    pub fn sketch<R: Rng + ?Sized>(&self, rng: &mut R) -> LowRankSketchResult {
        LowRankSketchResult {
            s: self.draw(rng),
            i0: self.i0,
            p: self.p.clone(),
            expected_sq_frobenius: self.expected_sq_frobenius,
            expected_sq_error: self.expected_sq_error(),
        }
    }
}

/// Minimum-variance unbiased sketch of `M` with rank at most `r`.
///
/// `r ≥ min(m, n)` returns `M` itself with zero expected error.
pub fn unbiased_lowrank_sketch<R: Rng + ?Sized>(m: &DenseMatrix, r: usize, rng: &mut R) -> Result<LowRankSketchResult> {
    Ok(LowRankSketcher::new(m, r)?.sketch(rng))
}
