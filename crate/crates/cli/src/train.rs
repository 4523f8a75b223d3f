//! One SGD training run of an MLP classifier.

use vjpsketch::autodiff::{backward, sgd_step, BackwardMode, MlpModel};
use vjpsketch::data::{shuffled_indices, Dataset};
use vjpsketch::{Error, SketchOperatorSpec};

/// Everything that determines a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    /// Layer widths from input to classes, e.g. `[784, 64, 64, 10]`.
    pub dims: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Sketch applied to the VJPs of `layers`; `None` trains exactly.
    pub sketch: Option<SketchOperatorSpec>,
    pub layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent in `[0, 100]`.
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Non-finite loss or gradient at the given optimizer step.
    Diverged { step: u64 },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    pub status: RunStatus,
    pub model: MlpModel,
}

impl TrainOutcome {
    /// Best validation accuracy over completed epochs and the epoch reaching it.
    pub fn best(&self) -> Option<(f64, usize)> {
        self.epochs.iter().fold(None, |best, e| match best {
            Some((acc, _)) if acc >= e.val_accuracy => best,
            _ => Some((e.val_accuracy, e.epoch)),
        })
    }

    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Trains from `MlpModel::init(dims, seed)` with the per-epoch permutation
/// `shuffled_indices(n, seed, epoch)`; sketch draws at optimizer step `t` come
/// from `layer_stream(seed, layer, t)`. A diverged run stops early and is
/// reported through [`RunStatus`], not as an error.
pub fn train(spec: &RunSpec, train_set: &Dataset, val_set: &Dataset) -> vjpsketch::Result<TrainOutcome> {
    if spec.batch_size == 0 || train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument("empty batch size or dataset".into()));
    }
    if spec.dims.first() != Some(&train_set.dim()) {
        return Err(Error::InvalidArgument(format!("model input {:?} but data dimension {}", spec.dims.first(), train_set.dim())));
    }
    let mut model = MlpModel::init(&spec.dims, spec.seed)?;
    if let Some(sketch) = spec.sketch {
        model.set_sketch(&spec.layers, Some(sketch))?;
    }
    let mode = |step| match spec.sketch {
        Some(_) => BackwardMode::Sketched { seed: spec.seed, step },
        None => BackwardMode::Exact,
    };
    let (val_x, val_y) = val_set.to_matrix();
    let mut epochs = Vec::with_capacity(spec.epochs);
    let mut step = 0u64;
    for epoch in 0..spec.epochs {
        let order = shuffled_indices(train_set.len(), spec.seed, epoch as u64);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(spec.batch_size) {
            let (x, y) = train_set.batch(chunk);
            let cache = model.forward(&x)?;
            let state = backward(&model, &cache, &y, mode(step))?;
            let diverged = !state.loss.is_finite()
                || match sgd_step(&mut model, &state.grads, spec.lr, spec.clip_norm) {
                    Ok(_) => false,
                    Err(Error::NonFiniteGradient { .. }) => true,
                    Err(e) => return Err(e),
                };
            if diverged {
                return Ok(TrainOutcome { epochs, status: RunStatus::Diverged { step }, model });
            }
            loss_sum += state.loss;
            batches += 1;
            step += 1;
        }
        let val_accuracy = 100.0 * model.accuracy(&val_x, &val_y)?;
        epochs.push(EpochRecord { epoch, train_loss: loss_sum / batches as f64, val_accuracy });
    }
    Ok(TrainOutcome { epochs, status: RunStatus::Completed, model })
}
