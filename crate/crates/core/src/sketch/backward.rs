use rand::Rng;

use super::{plan_sketch, GradBatch, SketchKind, SketchOperatorSpec};
use crate::budget::independent_bernoulli;
use crate::{DenseMatrix, DenseVector, Error, Result};

/// Gradients of a linear layer `y = x·Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    /// `B × d_in`; `None` when not requested.
    pub dx: Option<DenseMatrix>,
    /// `d_out × d_in`.
    pub dw: DenseMatrix,
    /// `d_out`.
    pub db: DenseVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardOptions {
    /// Compute `dX` (the first layer of a network does not need it).
    pub input_grad: bool,
    /// Apply the `1/p` rescale. Disabling it yields a deliberately biased
    /// estimator, used to check that the unbiasedness tests can fail.
    pub rescale: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions { input_grad: true, rescale: true }
    }
}

/// `dX = G·W`, `dW = Gᵀ·X`, `db = Σ_b G[b, :]` for the practical layout.
pub fn exact_backward(x: &DenseMatrix, w: &DenseMatrix, g: &DenseMatrix, input_grad: bool) -> LinearGrads {
    LinearGrads { dx: input_grad.then(|| g.matmul(w)), dw: g.matmul_tn(x), db: column_sums(g) }
}

fn column_sums(g: &DenseMatrix) -> DenseVector {
    (0..g.cols()).map(|j| g.col(j).iter().sum()).collect()
}

/// Sketched backward through a linear layer with default options.
///
/// `x` is `B × d_in`, `w` is `d_out × d_in`, `g` is the `B × d_out` output
/// gradient. The expectation over `rng` of `dX` and `dW` is the exact backward.
pub fn apply_sketched_backward<R: Rng + ?Sized>(
    spec: &SketchOperatorSpec,
    x: &DenseMatrix,
    w: &DenseMatrix,
    g: &DenseMatrix,
    rng: &mut R,
) -> Result<LinearGrads> {
    apply_sketched_backward_with(spec, x, w, g, rng, BackwardOptions::default())
}

pub fn apply_sketched_backward_with<R: Rng + ?Sized>(
    spec: &SketchOperatorSpec,
    x: &DenseMatrix,
    w: &DenseMatrix,
    g: &DenseMatrix,
    rng: &mut R,
    opts: BackwardOptions,
) -> Result<LinearGrads> {
    check_shapes(x, w, g)?;
    match prepare(spec, w, g, rng, opts.rescale)? {
        Prepared::Exact => Ok(exact_backward(x, w, g, opts.input_grad)),
        Prepared::Output(gh) => Ok(exact_backward(x, w, &gh, opts.input_grad)),
        Prepared::Elements { p, scale } => {
            let dx = opts.input_grad.then(|| g.matmul(&element_mask(w, p, scale, rng)));
            let dw = g.matmul_tn(&element_mask(x, p, scale, rng));
            Ok(LinearGrads { dx, dw, db: column_sums(g) })
        }
    }
}

/// Sketched `dX` alone (`B × d_in`); same draws as the `dX` of
/// [`apply_sketched_backward`].
pub fn sketched_input_grad<R: Rng + ?Sized>(
    spec: &SketchOperatorSpec,
    w: &DenseMatrix,
    g: &DenseMatrix,
    rng: &mut R,
    rescale: bool,
) -> Result<DenseMatrix> {
    if g.cols() != w.rows() {
        return Err(Error::Shape {
            context: "sketched_input_grad",
            detail: format!("W {:?}, G {:?}", w.shape(), g.shape()),
        });
    }
    Ok(match prepare(spec, w, g, rng, rescale)? {
        Prepared::Exact => g.matmul(w),
        Prepared::Output(gh) => gh.matmul(w),
        Prepared::Elements { p, scale } => g.matmul(&element_mask(w, p, scale, rng)),
    })
}

enum Prepared {
    Exact,
    /// Sketched output gradient `Ĝ`.
    Output(DenseMatrix),
    /// Per-element masking of `W` and `X`.
    Elements { p: f64, scale: f64 },
}

fn prepare<R: Rng + ?Sized>(
    spec: &SketchOperatorSpec,
    w: &DenseMatrix,
    g: &DenseMatrix,
    rng: &mut R,
    rescale: bool,
) -> Result<Prepared> {
    spec.validate()?;
    let d_out = w.rows();
    if spec.is_identity(d_out) || g.data().iter().all(|&v| v == 0.0) {
        return Ok(Prepared::Exact);
    }
    let inv = |p: f64| if rescale { 1.0 / p } else { 1.0 };
    let masked = |keep: &dyn Fn(usize, usize) -> bool, scale: f64| {
        DenseMatrix::from_fn(g.rows(), g.cols(), |b, j| if keep(b, j) { scale * g[(b, j)] } else { 0.0 })
    };
    Ok(match spec.kind {
        SketchKind::ExactIdentity => Prepared::Exact,
        SketchKind::PerElement => {
            let p = spec.budget.fraction(d_out);
            Prepared::Elements { p, scale: inv(p) }
        }
        SketchKind::PerSample => {
            let p = spec.budget.fraction(d_out);
            let keep = independent_bernoulli(&vec![p; g.rows()], rng);
            Prepared::Output(masked(&|b, _| keep[b], inv(p)))
        }
        SketchKind::PerColumn if !spec.correlated => {
            let p = spec.budget.fraction(d_out);
            let keep = independent_bernoulli(&vec![p; d_out], rng);
            Prepared::Output(masked(&|_, j| keep[j], inv(p)))
        }
        _ => {
            let plan = plan_sketch(spec, &GradBatch::from_rows(g), w, rng)?;
            Prepared::Output(plan.apply_rows(&plan.sample, g, rescale))
        }
    })
}

fn element_mask<R: Rng + ?Sized>(m: &DenseMatrix, p: f64, scale: f64, rng: &mut R) -> DenseMatrix {
    let mut out = m.clone();
    for v in out.data_mut() {
        *v = if rng.random::<f64>() < p { scale * *v } else { 0.0 };
    }
    out
}

fn check_shapes(x: &DenseMatrix, w: &DenseMatrix, g: &DenseMatrix) -> Result<()> {
    if x.rows() != g.rows() || x.cols() != w.cols() || g.cols() != w.rows() {
        return Err(Error::Shape {
            context: "apply_sketched_backward",
            detail: format!("X {:?}, W {:?}, G {:?}", x.shape(), w.shape(), g.shape()),
        });
    }
    Ok(())
}
