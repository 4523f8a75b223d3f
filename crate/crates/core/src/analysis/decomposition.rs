use rand::Rng;

use crate::sketch::{sketched_input_grad, SketchOperatorSpec};
use crate::stats::RunningStats;
use crate::{DenseMatrix, Error, Result};

/// Chain of linear nodes traversed by backpropagation, listed from the output
/// side: node `l` maps the gradient of node `l-1` (the seed for `l = 0`)
/// through `g ↦ g·W_l`, with `W_l` stored `d_out × d_in` as in a layer.
#[derive(Debug, Clone)]
pub struct LinearChain {
    pub weights: Vec<DenseMatrix>,
    pub sketches: Vec<SketchOperatorSpec>,
}

impl LinearChain {
    pub fn new(weights: Vec<DenseMatrix>, sketches: Vec<SketchOperatorSpec>) -> Result<Self> {
        if weights.is_empty() || weights.len() != sketches.len() {
            return Err(Error::InvalidArgument(format!("{} weights for {} sketches", weights.len(), sketches.len())));
        }
        for (l, pair) in weights.windows(2).enumerate() {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::Shape {
                    context: "LinearChain::new",
                    detail: format!("node {l} emits {} but node {} expects {}", pair[0].cols(), l + 1, pair[1].rows()),
                });
            }
        }
        Ok(LinearChain { weights, sketches })
    }
}

/// Monte-Carlo terms of the variance propagation identity at one node.
#[derive(Debug, Clone)]
pub struct DecompositionLevel {
    /// `E‖ĝ − g‖²` of the batch-averaged gradient.
    pub lhs: RunningStats,
    /// `E‖(1/B) Σ_b (Ĵ − J) ĝ_prev⁽ᵇ⁾‖²`.
    pub local: RunningStats,
    /// `E‖(1/B) Σ_b J (ĝ_prev⁽ᵇ⁾ − g_prev⁽ᵇ⁾)‖²`.
    pub propagated: RunningStats,
    /// Per-draw `lhs − local − propagated`, whose mean is zero.
    pub residual: RunningStats,
}

impl DecompositionLevel {
    fn new() -> Self {
        DecompositionLevel {
            lhs: RunningStats::new(),
            local: RunningStats::new(),
            propagated: RunningStats::new(),
            residual: RunningStats::new(),
        }
    }

    /// `|mean residual| ≤ k·se(residual)`, with rounding slack.
    pub fn holds(&self, k_sigma: f64) -> bool {
        let scale = self.lhs.mean().abs().max(f64::MIN_POSITIVE);
        self.residual.mean().abs() <= k_sigma * self.residual.std_error() + 1e-12 * scale
    }
}

#[derive(Debug, Clone)]
pub struct DecompositionReport {
    pub n_draws: usize,
    pub levels: Vec<DecompositionLevel>,
}

impl DecompositionReport {
    pub fn holds(&self, k_sigma: f64) -> bool {
        self.levels.iter().all(|l| l.holds(k_sigma))
    }
}

/// Runs the sketched chain `n_draws` times from the exact seed `g_seed`
/// (`B × d`, one row per sample) and accumulates, at every node, the squared
/// error of the batch-averaged gradient and its local and propagated parts.
pub fn variance_decomposition_check<R: Rng + ?Sized>(
    chain: &LinearChain,
    g_seed: &DenseMatrix,
    n_draws: usize,
    rng: &mut R,
) -> Result<DecompositionReport> {
    if n_draws < 2 {
        return Err(Error::InvalidArgument("at least two draws are needed".into()));
    }
    if g_seed.cols() != chain.weights[0].rows() {
        return Err(Error::Shape {
            context: "variance_decomposition_check",
            detail: format!("seed is {:?} but node 0 expects {}", g_seed.shape(), chain.weights[0].rows()),
        });
    }
    let mut exact = Vec::with_capacity(chain.weights.len());
    let mut g = g_seed.clone();
    for w in &chain.weights {
        g = g.matmul(w);
        exact.push(g.clone());
    }
    let inv_b = 1.0 / g_seed.rows().max(1) as f64;
    let mean_sq = |m: &DenseMatrix| -> f64 {
        (0..m.cols()).map(|j| (m.col(j).iter().sum::<f64>() * inv_b).powi(2)).sum()
    };

    let mut levels: Vec<DecompositionLevel> = chain.weights.iter().map(|_| DecompositionLevel::new()).collect();
    for _ in 0..n_draws {
        let mut prev_hat = g_seed.clone();
        for (l, (w, spec)) in chain.weights.iter().zip(&chain.sketches).enumerate() {
            let hat = sketched_input_grad(spec, w, &prev_hat, rng, true)?;
            let pushed = prev_hat.matmul(w);
            let lhs = mean_sq(&hat.sub(&exact[l]));
            let local = mean_sq(&hat.sub(&pushed));
            let propagated = mean_sq(&pushed.sub(&exact[l]));
            let lv = &mut levels[l];
            lv.lhs.push(lhs);
            lv.local.push(local);
            lv.propagated.push(propagated);
            lv.residual.push(lhs - local - propagated);
            prev_hat = hat;
        }
    }
    Ok(DecompositionReport { n_draws, levels })
}
