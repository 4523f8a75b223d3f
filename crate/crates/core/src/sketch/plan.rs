use rand::Rng;

use super::{GradBatch, SketchKind, SketchOperatorSpec};
use crate::budget::{
    correlated_exact_r_sample, independent_sample, pstar_from_weights, IndexSample, ProbabilityAllocation, WeightVector,
};
use crate::linalg::{dot, psd_sqrt_and_pinv_sqrt, svd, sym_eig};
use crate::{DenseMatrix, Error, Result};

/// Eigenvalue cut-off per unit of dimension, relative to the largest
/// eigenvalue, for the spectral bases.
const SPECTRAL_RANK_TOL: f64 = 1e-13;
/// A basis direction is active when the batch has a component of at least
/// this size (relative to `√B`) along it.
const ACTIVITY_TOL: f64 = 1e-6;
/// Weight given to active directions whose weight vanishes, relative to the
/// largest weight.
const WEIGHT_FLOOR: f64 = 1e-12;

/// Directions a spectral plan samples from.
///
/// The operator is `T = Σᵢ (zᵢ/pᵢ)·leftᵢ·rightᵢᵀ`; for the rank-constrained
/// sketch `left = Γ^{1/2}U` and `right = Γ^{+1/2}U`, for G-SV both are `U_G`.
#[derive(Debug, Clone)]
pub struct SketchBasis {
    pub u: DenseMatrix,
    pub gamma_sqrt: Option<DenseMatrix>,
    pub gamma_pinv_sqrt: Option<DenseMatrix>,
    pub left: DenseMatrix,
    pub right: DenseMatrix,
}

/// Probabilities, one realization and (for spectral kinds) the basis.
#[derive(Debug, Clone)]
pub struct SketchPlan {
    pub kind: SketchKind,
    pub correlated: bool,
    pub weights: Vec<f64>,
    pub alloc: ProbabilityAllocation,
    pub sample: IndexSample,
    pub basis: Option<SketchBasis>,
    dim: usize,
}

impl SketchPlan {
    /// Output dimension `n` the operator acts on.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// A fresh realization with the same probabilities.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> IndexSample {
        draw(&self.alloc, self.correlated, rng)
    }

    /// `Ĝ = G·Tᵀ` for the practical `B × n` block and the given realization.
    /// With `rescale = false` the `1/pᵢ` factors are dropped.
    pub fn apply_rows(&self, sample: &IndexSample, g_rows: &DenseMatrix, rescale: bool) -> DenseMatrix {
        assert_eq!(g_rows.cols(), self.dim, "gradient block width");
        let b = g_rows.rows();
        let mut out = DenseMatrix::zeros(b, self.dim);
        match &self.basis {
            None => {
                for (j, s) in sample.iter() {
                    let s = if rescale { s } else { 1.0 };
                    for (dst, &src) in out.col_mut(j).iter_mut().zip(g_rows.col(j)) {
                        *dst = s * src;
                    }
                }
            }
            Some(basis) => {
                for (i, s) in sample.iter() {
                    let s = if rescale { s } else { 1.0 };
                    let c = g_rows.matvec(basis.right.col(i));
                    let left = basis.left.col(i);
                    for (j, &l) in left.iter().enumerate() {
                        let f = s * l;
                        if f != 0.0 {
                            for (dst, &ci) in out.col_mut(j).iter_mut().zip(&c) {
                                *dst += f * ci;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn draw<R: Rng + ?Sized>(alloc: &ProbabilityAllocation, correlated: bool, rng: &mut R) -> IndexSample {
    if correlated {
        correlated_exact_r_sample(alloc, rng)
    } else {
        independent_sample(alloc, rng)
    }
}

/// Computes weights, probabilities and one realization for a planned kind.
///
/// `w` is the layer weight `d_out × d_in`. A batch without any nonzero
/// gradient yields an empty-support plan that drops every coordinate.
pub fn plan_sketch<R: Rng + ?Sized>(
    spec: &SketchOperatorSpec,
    g: &GradBatch,
    w: &DenseMatrix,
    rng: &mut R,
) -> Result<SketchPlan> {
    spec.validate()?;
    if !spec.kind.has_plan() {
        return Err(Error::InvalidArgument(format!("{} is not a planned sketch kind", spec.kind)));
    }
    let n = g.dim();
    if w.rows() != n {
        return Err(Error::Shape {
            context: "plan_sketch",
            detail: format!("W has {} rows but G has dimension {n}", w.rows()),
        });
    }
    let (mut weights, active, basis) = match spec.kind {
        SketchKind::RankConstrainedSketch => rank_constrained_weights(g, w)?,
        SketchKind::ProxyGsv => gradient_singular_weights(g, spec.squared)?,
        kind => (coordinate_weights(kind, spec.squared, g, w), g.row_active(), None),
    };
    let r = spec.budget.resolve(weights.len());
    if spec.kind != SketchKind::PerColumn {
        floor_active(&mut weights, &active);
    }

    let alloc = if weights.iter().all(|&v| v == 0.0) {
        ProbabilityAllocation::from_probabilities(vec![0.0; weights.len()], r)?
    } else {
        pstar_from_weights(&WeightVector::new(weights.clone())?, r)?
    };
    let sample = draw(&alloc, spec.correlated, rng);
    Ok(SketchPlan { kind: spec.kind, correlated: spec.correlated, weights, alloc, sample, basis, dim: n })
}

/// Gives active directions with vanishing weight a tiny positive weight so
/// that they stay in the support; without it the sketch would be biased on them.
fn floor_active(weights: &mut [f64], active: &[bool]) {
    let max = weights.iter().copied().fold(0.0, f64::max);
    let floor = if max > 0.0 { WEIGHT_FLOOR * max } else { 1.0 };
    for (w, &a) in weights.iter_mut().zip(active) {
        if a && *w <= 0.0 {
            *w = floor;
        } else if !a {
            *w = 0.0;
        }
    }
}

fn coordinate_weights(kind: SketchKind, squared: bool, g: &GradBatch, w: &DenseMatrix) -> Vec<f64> {
    let n = g.dim();
    let bsz = g.batch_size();
    let m = g.matrix();
    let rows = |f: &dyn Fn(&mut f64, f64)| {
        let mut acc = vec![0.0; n];
        for b in 0..bsz {
            for (a, &v) in acc.iter_mut().zip(m.col(b)) {
                f(a, v);
            }
        }
        acc
    };
    let sq = |v: Vec<f64>| if squared { v.into_iter().map(|x| x * x).collect() } else { v };
    match kind {
        SketchKind::PerColumn => vec![1.0; n],
        SketchKind::ProxyL1 => sq(rows(&|a, v| *a += v.abs())),
        SketchKind::ProxyL2 => sq(rows(&|a, v| *a += v * v).into_iter().map(f64::sqrt).collect()),
        SketchKind::ProxyVar => {
            let inv_b = 1.0 / bsz.max(1) as f64;
            let mean: Vec<f64> = rows(&|a, v| *a += v).into_iter().map(|s| s * inv_b).collect();
            let mut var = vec![0.0; n];
            for b in 0..bsz {
                for ((acc, &v), &mu) in var.iter_mut().zip(m.col(b)).zip(&mean) {
                    *acc += (v - mu) * (v - mu);
                }
            }
            sq(var.into_iter().map(|s| s * inv_b).collect())
        }
        SketchKind::DiagonalSketch => {
            let gamma = g.second_moment();
            (0..n).map(|i| gamma[(i, i)] * w.row(i).iter().map(|x| x * x).sum::<f64>()).collect()
        }
        other => unreachable!("{other} has no coordinate weights"),
    }
}

type Weighted = (Vec<f64>, Vec<bool>, Option<SketchBasis>);

fn rank_constrained_weights(g: &GradBatch, w: &DenseMatrix) -> Result<Weighted> {
    let n = g.dim();
    let tol = SPECTRAL_RANK_TOL * n as f64;
    let roots = psd_sqrt_and_pinv_sqrt(g.second_moment(), Some(tol))?;
    let m = roots.sqrt.matmul(w);
    let raw = m.matmul_nt(&m);
    let a = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (raw[(i, j)] + raw[(j, i)]));
    let eig = sym_eig(&a)?;
    let lmax = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let weights: Vec<f64> = eig.eigenvalues.iter().map(|&l| if l > tol * lmax { l } else { 0.0 }).collect();
    let u = eig.eigenvectors;
    let left = roots.sqrt.matmul(&u);
    let right = roots.pinv_sqrt.matmul(&u);
    let active = activity(g, &right);
    let basis = SketchBasis { u, gamma_sqrt: Some(roots.sqrt), gamma_pinv_sqrt: Some(roots.pinv_sqrt), left, right };
    Ok((weights, active, Some(basis)))
}

fn gradient_singular_weights(g: &GradBatch, squared: bool) -> Result<Weighted> {
    let s = svd(g.matrix())?;
    let smax = s.singular_values.first().copied().unwrap_or(0.0);
    let cut = SPECTRAL_RANK_TOL * (g.dim().max(g.batch_size()) as f64) * smax;
    let weights: Vec<f64> = s
        .singular_values
        .iter()
        .map(|&v| if v > cut { if squared { v * v } else { v } } else { 0.0 })
        .collect();
    let active = weights.iter().map(|&v| v > 0.0).collect();
    let u = s.left_vectors;
    let basis = SketchBasis { u: u.clone(), gamma_sqrt: None, gamma_pinv_sqrt: None, left: u.clone(), right: u };
    Ok((weights, active, Some(basis)))
}

/// `‖rightᵢᵀ G‖ > ACTIVITY_TOL·√B` for every basis direction.
fn activity(g: &GradBatch, right: &DenseMatrix) -> Vec<bool> {
    let threshold = ACTIVITY_TOL * (g.batch_size() as f64).sqrt();
    let m = g.matrix();
    (0..right.cols())
        .map(|i| {
            let r = right.col(i);
            let sq: f64 = (0..m.cols()).map(|b| dot(r, m.col(b)).powi(2)).sum();
            sq.sqrt() > threshold
        })
        .collect()
}

/// Explicit `n × n` operator `R` with `Ĝ = R·G` (theory layout) for one realization.
pub fn operator_matrix(plan: &SketchPlan, realization: &IndexSample) -> DenseMatrix {
    let n = plan.dim;
    match &plan.basis {
        None => {
            let mut d = vec![0.0; n];
            for (i, s) in realization.iter() {
                d[i] = s;
            }
            DenseMatrix::from_diag(&d)
        }
        Some(basis) => {
            let mut scaled = DenseMatrix::zeros(n, basis.left.cols());
            for (i, s) in realization.iter() {
                for (dst, &l) in scaled.col_mut(i).iter_mut().zip(basis.left.col(i)) {
                    *dst = s * l;
                }
            }
            scaled.matmul_nt(&basis.right)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::sketch::Budget;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = stream(seed, 0, 0);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn full_per_column_is_identity() {
        let g = GradBatch::from_columns(random(5, 3, 1));
        let w = random(5, 4, 2);
        let spec = SketchOperatorSpec::new(SketchKind::PerColumn, Budget::Count(5)).with_correlated(true);
        let plan = plan_sketch(&spec, &g, &w, &mut stream(3, 0, 0)).unwrap();
        assert_eq!(plan.alloc.probabilities(), &[1.0; 5]);
        assert_eq!(plan.sample.indices(), &[0, 1, 2, 3, 4]);
        assert_eq!(operator_matrix(&plan, &plan.sample), DenseMatrix::identity(5));
    }

    #[test]
    fn single_support_is_always_selected() {
        let mut m = DenseMatrix::zeros(4, 3);
        for b in 0..3 {
            m[(2, b)] = b as f64 - 0.5;
        }
        let g = GradBatch::from_columns(m);
        let spec = SketchOperatorSpec::new(SketchKind::ProxyL1, Budget::Count(1));
        let mut rng = stream(4, 0, 0);
        let plan = plan_sketch(&spec, &g, &random(4, 2, 5), &mut rng).unwrap();
        assert_eq!(plan.alloc.probabilities(), &[0.0, 0.0, 1.0, 0.0]);
        for _ in 0..100 {
            let s = plan.resample(&mut rng);
            assert_eq!(s.indices(), &[2]);
            assert_eq!(s.scales(), &[1.0]);
        }
    }

    #[test]
    fn diagonal_sketch_weights_match_explicit_loops() {
        let w = random(4, 3, 6);
        let gm = random(4, 2, 7);
        let spec = SketchOperatorSpec::new(SketchKind::DiagonalSketch, Budget::Count(2));
        let plan = plan_sketch(&spec, &GradBatch::from_columns(gm.clone()), &w, &mut stream(8, 0, 0)).unwrap();

        // oracle: a_i = (1/B Σ_b G_ib²) · Σ_k W_ik², entry by entry
        let mut a = vec![0.0; 4];
        for (i, ai) in a.iter_mut().enumerate() {
            let mut gamma_ii = 0.0;
            for b in 0..2 {
                gamma_ii += gm[(i, b)] * gm[(i, b)];
            }
            gamma_ii /= 2.0;
            let mut jtj = 0.0;
            for k in 0..3 {
                jtj += w[(i, k)] * w[(i, k)];
            }
            *ai = gamma_ii * jtj;
        }
        for (x, y) in plan.weights.iter().zip(&a) {
            assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
        let expected = pstar_from_weights(&WeightVector::new(a).unwrap(), 2).unwrap();
        for (x, y) in plan.alloc.probabilities().iter().zip(expected.probabilities()) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert_eq!(plan.sample.len(), 2);

        let r = operator_matrix(&plan, &plan.sample);
        for i in 0..4 {
            for j in 0..4 {
                let v = r[(i, j)];
                if i != j {
                    assert_eq!(v, 0.0);
                } else {
                    let p = plan.alloc.probabilities()[i];
                    assert!(v == 0.0 || (v - 1.0 / p).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn proxy_weights() {
        let gm = DenseMatrix::from_rows(&[&[1.0, -3.0], &[2.0, 2.0], &[0.0, 0.0]]);
        let g = GradBatch::from_columns(gm);
        let w = DenseMatrix::zeros(3, 1);
        assert_eq!(coordinate_weights(SketchKind::ProxyL1, false, &g, &w), vec![4.0, 4.0, 0.0]);
        assert_eq!(coordinate_weights(SketchKind::ProxyL1, true, &g, &w), vec![16.0, 16.0, 0.0]);
        let l2 = coordinate_weights(SketchKind::ProxyL2, true, &g, &w);
        for (a, b) in l2.iter().zip([10.0, 8.0, 0.0]) {
            assert!((a - b).abs() < 1e-12, "{l2:?}");
        }
        assert_eq!(coordinate_weights(SketchKind::ProxyVar, false, &g, &w), vec![4.0, 0.0, 0.0]);
        assert_eq!(coordinate_weights(SketchKind::ProxyVar, true, &g, &w), vec![16.0, 0.0, 0.0]);
    }

    #[test]
    fn active_coordinates_keep_positive_probability() {
        // coordinate 1 has zero batch variance but a nonzero gradient
        let gm = DenseMatrix::from_rows(&[&[1.0, -3.0], &[2.0, 2.0], &[0.0, 0.0]]);
        let spec = SketchOperatorSpec::new(SketchKind::ProxyVar, Budget::Count(1));
        let plan = plan_sketch(&spec, &GradBatch::from_columns(gm), &DenseMatrix::zeros(3, 1), &mut stream(1, 0, 0))
            .unwrap();
        let p = plan.alloc.probabilities();
        assert!(p[0] > 0.99 && p[1] > 0.0 && p[2] == 0.0, "{p:?}");
    }

    #[test]
    fn zero_batch_gives_empty_plan() {
        let g = GradBatch::from_columns(DenseMatrix::zeros(3, 2));
        for kind in [SketchKind::ProxyL1, SketchKind::DiagonalSketch, SketchKind::RankConstrainedSketch, SketchKind::ProxyGsv] {
            let spec = SketchOperatorSpec::new(kind, Budget::Count(1));
            let plan = plan_sketch(&spec, &g, &random(3, 2, 1), &mut stream(1, 0, 0)).unwrap();
            assert!(plan.sample.is_empty(), "{kind}");
            assert_eq!(plan.alloc.support_size(), 0);
        }
    }

    #[test]
    fn rejects_mismatch_and_unplanned_kinds() {
        let g = GradBatch::from_columns(random(3, 2, 1));
        let spec = SketchOperatorSpec::new(SketchKind::ProxyL1, Budget::Count(1));
        assert!(matches!(plan_sketch(&spec, &g, &random(4, 2, 2), &mut stream(1, 0, 0)), Err(Error::Shape { .. })));
        let spec = SketchOperatorSpec::new(SketchKind::PerSample, Budget::Fraction(0.5));
        assert!(plan_sketch(&spec, &g, &random(3, 2, 2), &mut stream(1, 0, 0)).is_err());
    }

    #[test]
    fn spectral_full_selection_projects_onto_batch_span() {
        // B < n: Γ is singular; keeping every direction must reproduce G
        let gm = random(6, 3, 11);
        let w = random(6, 5, 12);
        for kind in [SketchKind::RankConstrainedSketch, SketchKind::ProxyGsv] {
            let spec = SketchOperatorSpec::new(kind, Budget::Count(6));
            let plan = plan_sketch(&spec, &GradBatch::from_columns(gm.clone()), &w, &mut stream(1, 0, 0)).unwrap();
            assert_eq!(plan.sample.len(), plan.alloc.support_size());
            assert_eq!(plan.alloc.support_size(), 3, "{kind}");
            let r = operator_matrix(&plan, &plan.sample);
            assert!(r.matmul(&gm).sub(&gm).max_abs() < 1e-9, "{kind}");
            let rows = plan.apply_rows(&plan.sample, &gm.transpose(), true);
            assert!(rows.sub(&gm.transpose()).max_abs() < 1e-9, "{kind}");
        }
    }

    #[test]
    fn realized_rank_equals_budget() {
        let gm = random(5, 8, 21);
        let w = random(5, 7, 22);
        let mut rng = stream(23, 0, 0);
        for kind in [SketchKind::RankConstrainedSketch, SketchKind::ProxyGsv, SketchKind::ProxyL2] {
            let spec = SketchOperatorSpec::new(kind, Budget::Count(3));
            let plan = plan_sketch(&spec, &GradBatch::from_columns(gm.clone()), &w, &mut rng).unwrap();
            for _ in 0..20 {
                let s = plan.resample(&mut rng);
                let r = operator_matrix(&plan, &s);
                let sv = svd(&r).unwrap().singular_values;
                let rank = sv.iter().filter(|&&x| x > 1e-9 * sv[0]).count();
                assert_eq!(rank, 3, "{kind}");
            }
        }
    }
}
