//! Reverse-mode differentiation for ReLU MLPs trained with softmax
//! cross-entropy, with optionally sketched linear-layer VJPs.
//!
//! Batches are row-major in the mathematical sense: an input block is
//! `B × d_in` and every layer computes `y = x·Wᵀ + b`. ReLU follows every
//! layer except the last.

use rand::Rng;

use crate::rng::{layer_stream, stream, LANE_INIT};
use crate::sketch::{apply_sketched_backward_with, exact_backward, BackwardOptions, SketchOperatorSpec};
use crate::{DenseMatrix, DenseVector, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    /// `d_out × d_in`.
    pub w: DenseMatrix,
    pub b: DenseVector,
    /// Sketch used in sketched backward mode; `None` keeps the layer exact.
    pub sketch: Option<SketchOperatorSpec>,
}

impl LinearLayer {
    pub fn new(w: DenseMatrix, b: DenseVector) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(Error::shape("LinearLayer::new", format!("W has {} rows, b has {}", w.rows(), b.len())));
        }
        w.check_finite()?;
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite bias"));
        }
        Ok(LinearLayer { w, b, sketch: None })
    }

    /// Kaiming-uniform weights `U(±√(6/d_in))` and biases `U(±1/√d_in)`.
    pub fn kaiming_uniform<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / d_in as f64).sqrt();
        let w = DenseMatrix::from_fn(d_out, d_in, |_, _| rng.random_range(-bound..bound));
        let bb = 1.0 / (d_in as f64).sqrt();
        let b = (0..d_out).map(|_| rng.random_range(-bb..bb)).collect();
        LinearLayer { w, b, sketch: None }
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w.rows()
    }

    /// `x·Wᵀ + b`.
    pub fn forward(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut y = x.matmul_nt(&self.w);
        for (j, &bj) in self.b.iter().enumerate() {
            for v in y.col_mut(j) {
                *v += bj;
            }
        }
        y
    }
}

/// Linear layers with ReLU in between and a softmax cross-entropy head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<LinearLayer>,
}

impl MlpModel {
    pub fn new(layers: Vec<LinearLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::shape(
                    "MlpModel::new",
                    format!("layer {l} outputs {} but layer {} expects {}", pair[0].d_out(), l + 1, pair[1].d_in()),
                ));
            }
        }
        Ok(MlpModel { layers })
    }

    /// Kaiming-uniform MLP with widths `dims = [d_in, h₁, …, classes]`.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("invalid layer widths {dims:?}")));
        }
        let mut rng = stream(seed, LANE_INIT, 0);
        Self::new(dims.windows(2).map(|d| LinearLayer::kaiming_uniform(d[0], d[1], &mut rng)).collect())
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("non-empty").d_out()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.rows() * l.w.cols() + l.b.len()).sum()
    }

    /// Sets the sketch of every listed layer.
    pub fn set_sketch(&mut self, layers: &[usize], spec: Option<SketchOperatorSpec>) -> Result<()> {
        for &l in layers {
            let n = self.layers.len();
            self.layers.get_mut(l).ok_or_else(|| Error::invalid(format!("layer {l} out of range (model has {n})")))?.sketch =
                spec;
        }
        Ok(())
    }

    /// Forward pass retaining every layer input.
    pub fn forward(&self, x: &DenseMatrix) -> Result<ForwardCache> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape("MlpModel::forward", format!("input has {} features, model expects {}", x.cols(), self.input_dim())));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&h);
            inputs.push(h);
            if l < last {
                z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = z;
        }
        Ok(ForwardCache { inputs, logits: h })
    }

    /// Fraction of rows whose arg-max logit matches the label.
    pub fn accuracy(&self, x: &DenseMatrix, labels: &[u8]) -> Result<f64> {
        let logits = self.forward(x)?.logits;
        let correct = (0..logits.rows()).filter(|&i| argmax_row(&logits, i) == labels[i] as usize).count();
        Ok(correct as f64 / labels.len().max(1) as f64)
    }
}

fn argmax_row(m: &DenseMatrix, i: usize) -> usize {
    let mut best = 0;
    for j in 1..m.cols() {
        if m[(i, j)] > m[(i, best)] {
            best = j;
        }
    }
    best
}

/// Inputs of every layer (post-activation) and the final logits.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub inputs: Vec<DenseMatrix>,
    pub logits: DenseMatrix,
}

/// Mean cross-entropy of `softmax(logits)` and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &DenseMatrix, labels: &[u8]) -> Result<(f64, DenseMatrix)> {
    let (b, c) = logits.shape();
    if labels.len() != b {
        return Err(Error::shape("softmax_cross_entropy", format!("{b} logit rows, {} labels", labels.len())));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y as usize >= c) {
        return Err(Error::invalid(format!("label {y} at row {i} exceeds {c} classes")));
    }
    let mut grad = DenseMatrix::zeros(b, c);
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for i in 0..b {
        let max = (0..c).map(|j| logits[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..c).map(|j| (logits[(i, j)] - max).exp()).sum();
        let log_z = max + sum.ln();
        let y = labels[i] as usize;
        loss += log_z - logits[(i, y)];
        for j in 0..c {
            let p = (logits[(i, j)] - log_z).exp();
            grad[(i, j)] = (p - if j == y { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    Ok((loss * inv_b, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardMode {
    Exact,
    /// Sketch every layer that carries a spec, drawing from
    /// `layer_stream(seed, layer, step)`.
    Sketched { seed: u64, step: u64 },
    /// Sketched mode without the `1/p` rescale; a deliberately biased
    /// estimator for fault-injection checks.
    #[doc(hidden)]
    SketchedUnscaled { seed: u64, step: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub dw: DenseMatrix,
    pub db: DenseVector,
}

/// Gradients of one backward pass.
#[derive(Debug, Clone)]
pub struct BackwardState {
    pub loss: f64,
    /// Exact loss gradient w.r.t. the logits (`B × classes`).
    pub seed_grad: DenseMatrix,
    pub grads: Vec<LayerGrads>,
    /// Gradient w.r.t. the output of every layer, after the ReLU mask for
    /// hidden layers (`output_grads[l]` is what layer `l` backpropagates).
    pub output_grads: Vec<DenseMatrix>,
}

/// Backward recursion from the loss down to the first layer.
pub fn backward(model: &MlpModel, cache: &ForwardCache, labels: &[u8], mode: BackwardMode) -> Result<BackwardState> {
    let n = model.layers.len();
    if cache.inputs.len() != n {
        return Err(Error::invalid(format!("forward cache holds {} layers, model has {n}", cache.inputs.len())));
    }
    let (loss, seed_grad) = softmax_cross_entropy(&cache.logits, labels)?;
    let mut grads = Vec::with_capacity(n);
    let mut output_grads = Vec::with_capacity(n);
    let mut g = seed_grad.clone();
    for l in (0..n).rev() {
        let layer = &model.layers[l];
        let x = &cache.inputs[l];
        let need_dx = l > 0;
        let sketched = match (mode, layer.sketch) {
            (BackwardMode::Exact, _) | (_, None) => None,
            (BackwardMode::Sketched { seed, step }, Some(spec)) => Some((spec, seed, step, true)),
            (BackwardMode::SketchedUnscaled { seed, step }, Some(spec)) => Some((spec, seed, step, false)),
        };
        let lg = match sketched {
            None => exact_backward(x, &layer.w, &g, need_dx),
            Some((spec, seed, step, rescale)) => {
                let mut rng = layer_stream(seed, l, step);
                let opts = BackwardOptions { input_grad: need_dx, rescale };
                apply_sketched_backward_with(&spec, x, &layer.w, &g, &mut rng, opts)?
            }
        };
        output_grads.push(g);
        grads.push(LayerGrads { dw: lg.dw, db: lg.db });
        if let Some(mut dx) = lg.dx {
            // ReLU between layer l-1 and l: x > 0 exactly where the pre-activation was positive
            for (d, &xi) in dx.data_mut().iter_mut().zip(x.data()) {
                if xi <= 0.0 {
                    *d = 0.0;
                }
            }
            g = dx;
        } else {
            g = DenseMatrix::zeros(0, 0);
        }
    }
    grads.reverse();
    output_grads.reverse();
    Ok(BackwardState { loss, seed_grad, grads, output_grads })
}

/// Global ℓ2 norm over all parameter gradients.
pub fn global_norm(grads: &[LayerGrads]) -> f64 {
    grads.iter().map(|g| g.dw.frobenius_sq() + g.db.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

/// Plain SGD step `θ ← θ − lr·c·∇`, where `c = min(1, clip/‖∇‖)` rescales the
/// global gradient norm to at most `clip_norm`. Returns the pre-clip norm.
pub fn sgd_step(model: &mut MlpModel, grads: &[LayerGrads], lr: f64, clip_norm: Option<f64>) -> Result<f64> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if grads.len() != model.layers.len() {
        return Err(Error::invalid(format!("{} gradient blocks for {} layers", grads.len(), model.layers.len())));
    }
    for (layer, g) in grads.iter().enumerate() {
        if !g.dw.is_finite() || g.db.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { layer });
        }
    }
    let norm = global_norm(grads);
    let mut scale = 1.0;
    if let Some(c) = clip_norm {
        if norm > c {
            scale = c / norm;
        }
    }
    let step = lr * scale;
    for (layer, g) in model.layers.iter_mut().zip(grads) {
        for (w, &d) in layer.w.data_mut().iter_mut().zip(g.dw.data()) {
            *w -= step * d;
        }
        for (b, &d) in layer.b.iter_mut().zip(&g.db) {
            *b -= step * d;
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{Budget, SketchKind};

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = stream(seed, 0, 0);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_layer_forwards_input() {
        let model = MlpModel::new(vec![LinearLayer::new(DenseMatrix::identity(3), vec![0.0; 3]).unwrap()]).unwrap();
        let x = random(2, 3, 1);
        assert_eq!(model.forward(&x).unwrap().logits, x);
    }

    #[test]
    fn relu_blocks_negative_preactivations() {
        let l1 = LinearLayer::new(DenseMatrix::identity(2), vec![-10.0, -10.0]).unwrap();
        let l2 = LinearLayer::new(DenseMatrix::from_rows(&[&[1.0, 1.0]]), vec![0.5]).unwrap();
        let model = MlpModel::new(vec![l1, l2]).unwrap();
        let c = model.forward(&random(3, 2, 2)).unwrap();
        assert_eq!(c.inputs[1], DenseMatrix::zeros(3, 2));
        assert_eq!(c.logits, DenseMatrix::from_rows(&[&[0.5], &[0.5], &[0.5]]));
    }

    #[test]
    fn two_layer_forward_matches_straight_line_oracle() {
        let model = MlpModel::init(&[4, 5, 3], 9).unwrap();
        let x = random(3, 4, 3);
        let logits = model.forward(&x).unwrap().logits;
        let (a, b) = (&model.layers()[0], &model.layers()[1]);
        for s in 0..3 {
            let mut h = [0.0; 5];
            for (i, hi) in h.iter_mut().enumerate() {
                let mut z = a.b[i];
                for k in 0..4 {
                    z += a.w[(i, k)] * x[(s, k)];
                }
                *hi = if z > 0.0 { z } else { 0.0 };
            }
            for o in 0..3 {
                let mut z = b.b[o];
                for (i, hi) in h.iter().enumerate() {
                    z += b.w[(o, i)] * hi;
                }
                assert!((logits[(s, o)] - z).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let model = MlpModel::init(&[4, 3], 1).unwrap();
        assert!(model.forward(&random(2, 5, 1)).is_err());
        assert!(MlpModel::new(vec![LinearLayer::kaiming_uniform(3, 4, &mut stream(1, 0, 0)), LinearLayer::kaiming_uniform(5, 2, &mut stream(1, 0, 0))]).is_err());
        let cache = model.forward(&random(2, 4, 1)).unwrap();
        assert!(backward(&MlpModel::init(&[4, 3, 3], 1).unwrap(), &cache, &[0, 1], BackwardMode::Exact).is_err());
    }

    #[test]
    fn softmax_gradient_rows_sum_to_zero() {
        let logits = DenseMatrix::from_rows(&[&[1000.0, 0.0, -1000.0], &[0.0, 0.0, 0.0]]);
        let (loss, g) = softmax_cross_entropy(&logits, &[0, 2]).unwrap();
        assert!(loss.is_finite());
        assert!((loss - 0.5 * 3f64.ln()).abs() < 1e-12);
        for i in 0..2 {
            assert!(g.row(i).iter().sum::<f64>().abs() < 1e-15);
        }
        assert!(softmax_cross_entropy(&logits, &[0, 3]).is_err());
    }

    fn loss_of(model: &MlpModel, x: &DenseMatrix, y: &[u8]) -> f64 {
        softmax_cross_entropy(&model.forward(x).unwrap().logits, y).unwrap().0
    }

    #[test]
    fn exact_backward_matches_finite_differences() {
        let model = MlpModel::init(&[5, 6, 4, 3], 21).unwrap();
        let x = random(4, 5, 22);
        let y = [0u8, 2, 1, 2];
        let st = backward(&model, &model.forward(&x).unwrap(), &y, BackwardMode::Exact).unwrap();
        let mut rng = stream(23, 0, 0);
        for (l, g) in st.grads.iter().enumerate() {
            for _ in 0..10 {
                let (i, j) = (rng.random_range(0..g.dw.rows()), rng.random_range(0..g.dw.cols()));
                let w0 = model.layers()[l].w[(i, j)];
                let h = 1e-5 * w0.abs().max(1.0);
                let mut plus = model.clone();
                plus.layers_mut()[l].w[(i, j)] = w0 + h;
                let mut minus = model.clone();
                minus.layers_mut()[l].w[(i, j)] = w0 - h;
                let fd = (loss_of(&plus, &x, &y) - loss_of(&minus, &x, &y)) / (2.0 * h);
                let an = g.dw[(i, j)];
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-6), "layer {l} ({i},{j}): {fd} vs {an}");
            }
        }
    }

    #[test]
    fn full_budget_sketched_mode_is_exact() {
        let mut model = MlpModel::init(&[5, 6, 4, 3], 3).unwrap();
        for kind in SketchKind::ALL {
            model.set_sketch(&[0, 1, 2], Some(SketchOperatorSpec::new(kind, Budget::Fraction(1.0)))).unwrap();
            let x = random(4, 5, 4);
            let c = model.forward(&x).unwrap();
            let e = backward(&model, &c, &[0, 1, 2, 0], BackwardMode::Exact).unwrap();
            let s = backward(&model, &c, &[0, 1, 2, 0], BackwardMode::Sketched { seed: 1, step: 0 }).unwrap();
            assert_eq!(e.grads, s.grads, "{kind}");
            assert_eq!(e.seed_grad, s.seed_grad);
        }
    }

    #[test]
    fn sgd_step_cases() {
        let mut model = MlpModel::init(&[2, 1], 1).unwrap();
        let before = model.clone();
        let zero = vec![LayerGrads { dw: DenseMatrix::zeros(1, 2), db: vec![0.0] }];
        sgd_step(&mut model, &zero, 0.1, Some(1.0)).unwrap();
        assert_eq!(model, before);

        // global norm 10 clipped to 1: effective gradient scaled by 0.1
        let g = vec![LayerGrads { dw: DenseMatrix::from_rows(&[&[6.0, 0.0]]), db: vec![8.0] }];
        let norm = sgd_step(&mut model, &g, 0.5, Some(1.0)).unwrap();
        assert_eq!(norm, 10.0);
        let w = &model.layers()[0];
        assert!((w.w[(0, 0)] - (before.layers()[0].w[(0, 0)] - 0.5 * 0.6)).abs() < 1e-15);
        assert!((w.b[0] - (before.layers()[0].b[0] - 0.5 * 0.8)).abs() < 1e-15);

        let bad = vec![LayerGrads { dw: DenseMatrix::zeros(1, 2), db: vec![f64::NAN] }];
        assert!(matches!(sgd_step(&mut model, &bad, 0.1, Some(1.0)), Err(Error::NonFiniteGradient { layer: 0 })));
        assert!(sgd_step(&mut model, &zero, 0.0, None).is_err());
    }

    #[test]
    fn quadratic_step() {
        // loss ½θ², gradient θ: one unclipped step gives θ₁ = θ₀ − ηθ₀
        let mut model = MlpModel::new(vec![LinearLayer::new(DenseMatrix::from_rows(&[&[2.0]]), vec![0.0]).unwrap()]).unwrap();
        let g = vec![LayerGrads { dw: DenseMatrix::from_rows(&[&[2.0]]), db: vec![0.0] }];
        sgd_step(&mut model, &g, 0.25, None).unwrap();
        assert_eq!(model.layers()[0].w[(0, 0)], 1.5);
    }
}
