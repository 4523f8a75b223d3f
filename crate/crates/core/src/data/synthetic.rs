use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::rng::stream;
use crate::{Error, Result};

/// Class-conditional gaussian blobs.
///
/// Class `k` has mean `separation/2 · uₖ` for a random unit vector `uₖ` and
/// identity covariance; sample `i` belongs to class `i mod n_classes`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub separation: f64,
}

impl SyntheticSpec {
    pub fn new(n_samples: usize, dim: usize, n_classes: usize, seed: u64) -> Self {
        SyntheticSpec { n_samples, dim, n_classes, seed, separation: 8.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=10).contains(&self.n_classes) {
            return Err(Error::invalid(format!("n_classes must be in 2..=10, got {}", self.n_classes)));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be at least 1"));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::invalid(format!("invalid separation {}", self.separation)));
        }
        Ok(())
    }
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream(spec.seed, 0, 0);
    let means: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| 0.5 * spec.separation * x / norm).collect()
        })
        .collect();
    let mut images = Vec::with_capacity(spec.n_samples * spec.dim);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let k = i % spec.n_classes;
        labels.push(k as u8);
        images.extend(means[k].iter().map(|&m| m + rng.sample::<f64, _>(StandardNormal)));
    }
    if spec.n_samples == 0 {
        return Ok(Dataset { images, labels, rows: 1, cols: spec.dim });
    }
    Dataset::new(images, labels, 1, spec.dim)
}
