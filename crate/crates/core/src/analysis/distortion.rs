use rand::Rng;

use crate::sketch::{plan_sketch, sketched_input_grad, Budget, GradBatch, SketchKind, SketchOperatorSpec};
use crate::stats::RunningStats;
use crate::{DenseMatrix, Error, Result};

/// Smallest accepted number of Monte-Carlo draws.
pub const MIN_DRAWS: usize = 1000;

/// Monte-Carlo and (where available) closed-form distortion
/// `L = (1/B) Σ_b E‖J·ĝ⁽ᵇ⁾ − J·g⁽ᵇ⁾‖²`.
#[derive(Debug, Clone)]
pub struct DistortionReport {
    pub kind: SketchKind,
    pub budget: Budget,
    pub label: String,
    pub n_draws: usize,
    pub mc_mean: f64,
    pub mc_std_error: f64,
    pub analytic: Option<f64>,
}

impl DistortionReport {
    /// `|mc − analytic| ≤ k·se` (plus rounding slack); `None` without analytic value.
    pub fn agrees(&self, k_sigma: f64) -> Option<bool> {
        self.analytic.map(|a| (self.mc_mean - a).abs() <= k_sigma * self.mc_std_error + 1e-9 * a.abs().max(1e-300))
    }

    /// Signed distance in standard errors.
    pub fn z_score(&self) -> Option<f64> {
        self.analytic.map(|a| if self.mc_std_error > 0.0 { (self.mc_mean - a) / self.mc_std_error } else { 0.0 })
    }
}

/// Estimates the distortion of `spec` applied to the VJP `g ↦ J·g`.
///
/// `j` is `m × n` and `g` holds `B` gradients of dimension `n`; the layer
/// weight seen by the sketch is `W = Jᵀ`.
pub fn estimate_distortion<R: Rng + ?Sized>(
    j: &DenseMatrix,
    g: &GradBatch,
    spec: &SketchOperatorSpec,
    n_draws: usize,
    rng: &mut R,
) -> Result<DistortionReport> {
    if n_draws < MIN_DRAWS {
        return Err(Error::InvalidArgument(format!("n_draws = {n_draws} is below the minimum of {MIN_DRAWS}")));
    }
    if j.cols() != g.dim() {
        return Err(Error::Shape {
            context: "estimate_distortion",
            detail: format!("J is {:?} but gradients have dimension {}", j.shape(), g.dim()),
        });
    }
    let w = j.transpose();
    let g_rows = g.matrix().transpose();
    let exact = g_rows.matmul(&w);
    let inv_b = 1.0 / g.batch_size().max(1) as f64;
    let mut acc = RunningStats::new();
    for _ in 0..n_draws {
        let approx = sketched_input_grad(spec, &w, &g_rows, rng, true)?;
        acc.push(approx.sub(&exact).frobenius_sq() * inv_b);
    }
    Ok(DistortionReport {
        kind: spec.kind,
        budget: spec.budget,
        label: spec.label(),
        n_draws,
        mc_mean: acc.mean(),
        mc_std_error: acc.std_error(),
        analytic: analytic_distortion(j, g, spec)?,
    })
}

/// Closed-form distortion where the cross terms between kept units vanish:
///
/// * independent coordinate sketches: `Σᵢ (JᵀJ)ᵢᵢ Γᵢᵢ (1/pᵢ − 1)`;
/// * rank-constrained sketch: `Σᵢ σᵢ²/pᵢ − Σᵢ σᵢ²` over the eigenvalues;
/// * G-SV: `(1/B) Σᵢ sᵢ² (1/pᵢ − 1) ‖J uᵢ‖²`;
/// * per-sample: `(1/p − 1)(1/B) Σ_b ‖J g⁽ᵇ⁾‖²`;
/// * per-element: `(1/p − 1)(1/B) Σ_b Σ_kl J_kl² g_l⁽ᵇ⁾²`.
///
/// Correlated coordinate sketches have nonzero cross terms and return `None`.
pub fn analytic_distortion(j: &DenseMatrix, g: &GradBatch, spec: &SketchOperatorSpec) -> Result<Option<f64>> {
    let n = g.dim();
    let bsz = g.batch_size().max(1) as f64;
    let w = j.transpose();
    if spec.is_identity(n) || g.is_zero() {
        return Ok(Some(0.0));
    }
    let gm = g.matrix();
    let value = match spec.kind {
        SketchKind::ExactIdentity => 0.0,
        SketchKind::PerSample => {
            let p = spec.budget.fraction(n);
            let jg = j.matmul(gm);
            (1.0 / p - 1.0) * jg.frobenius_sq() / bsz
        }
        SketchKind::PerElement => {
            let p = spec.budget.fraction(n);
            let col_sq: Vec<f64> = (0..n).map(|l| j.col(l).iter().map(|v| v * v).sum()).collect();
            let mut total = 0.0;
            for b in 0..gm.cols() {
                total += gm.col(b).iter().zip(&col_sq).map(|(x, c)| x * x * c).sum::<f64>();
            }
            (1.0 / p - 1.0) * total / bsz
        }
        SketchKind::PerColumn if !spec.correlated => {
            let p = spec.budget.fraction(n);
            let gamma = g.second_moment();
            (0..n).map(|i| gamma[(i, i)] * sq_norm(j.col(i))).sum::<f64>() * (1.0 / p - 1.0)
        }
        SketchKind::RankConstrainedSketch => {
            let plan = plan_sketch(spec, g, &w, &mut NoRng)?;
            weighted_excess(&plan.weights, plan.alloc.probabilities())
        }
        SketchKind::ProxyGsv => {
            let plan = plan_sketch(spec, g, &w, &mut NoRng)?;
            let u = &plan.basis.as_ref().expect("spectral plan has a basis").u;
            let s = crate::linalg::svd(gm)?.singular_values;
            let p = plan.alloc.probabilities();
            let mut total = 0.0;
            for i in 0..u.cols() {
                let ju = j.matvec(u.col(i));
                let e = s[i] * s[i] * sq_norm(&ju);
                total += if p[i] > 0.0 { e * (1.0 / p[i] - 1.0) } else { e };
            }
            total / bsz
        }
        _ if spec.correlated => return Ok(None),
        _ => {
            let plan = plan_sketch(spec, g, &w, &mut NoRng)?;
            let gamma = g.second_moment();
            let a: Vec<f64> = (0..n).map(|i| gamma[(i, i)] * sq_norm(j.col(i))).collect();
            weighted_excess(&a, plan.alloc.probabilities())
        }
    };
    Ok(Some(value))
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `Σ aᵢ (1/pᵢ − 1)`, counting excluded units (`pᵢ = 0`) with their full weight.
fn weighted_excess(a: &[f64], p: &[f64]) -> f64 {
    a.iter().zip(p).map(|(&a, &p)| if p > 0.0 { a / p - a } else { a }).sum()
}

/// Source for the one realization `plan_sketch` draws when only the
/// probabilities are wanted.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        0
    }
    fn next_u64(&mut self) -> u64 {
        0
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        dst.fill(0);
    }
}
