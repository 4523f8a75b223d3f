//! Datasets: MNIST-style IDX files and synthetic gaussian blobs.

mod idx;
mod synthetic;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx, IdxImages, IMAGES_MAGIC, LABELS_MAGIC};
pub use synthetic::{make_synthetic, SyntheticSpec};

use rand::seq::SliceRandom;

use crate::rng::{stream, LANE_SHUFFLE};
use crate::{DenseMatrix, Error, Result};

/// Images as row-major `f64` rows with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f64>,
    labels: Vec<u8>,
    rows: usize,
    cols: usize,
}

impl Dataset {
    /// `images` holds `labels.len()` rows of `rows·cols` values each.
    pub fn new(images: Vec<f64>, labels: Vec<u8>, rows: usize, cols: usize) -> Result<Self> {
        let dim = rows * cols;
        if dim == 0 || images.len() != labels.len() * dim {
            return Err(Error::shape(
                "Dataset::new",
                format!("{} values for {} samples of {rows}x{cols}", images.len(), labels.len()),
            ));
        }
        if images.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite pixel value"));
        }
        Ok(Dataset { images, labels, rows, cols })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Features per sample.
    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    /// Image shape `(rows, cols)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.images[i * d..(i + 1) * d]
    }

    /// `1 + max label`.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    /// Samples `indices` gathered into a `len × dim` matrix and their labels.
    pub fn batch(&self, indices: &[usize]) -> (DenseMatrix, Vec<u8>) {
        let d = self.dim();
        let x = DenseMatrix::from_fn(indices.len(), d, |r, c| self.images[indices[r] * d + c]);
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// All samples as one matrix.
    pub fn to_matrix(&self) -> (DenseMatrix, Vec<u8>) {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Samples `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let d = self.dim();
        Dataset {
            images: self.images[start * d..end * d].to_vec(),
            labels: self.labels[start..end].to_vec(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    /// First `len - n_val` samples for training, last `n_val` for validation.
    pub fn split_last(&self, n_val: usize) -> Result<(Dataset, Dataset)> {
        if n_val == 0 || n_val >= self.len() {
            return Err(Error::invalid(format!("cannot hold out {n_val} of {} samples", self.len())));
        }
        let cut = self.len() - n_val;
        Ok((self.slice(0, cut), self.slice(cut, self.len())))
    }
}

/// Seeded permutation of `0..n` for `epoch`.
pub fn shuffled_indices(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, LANE_SHUFFLE, epoch));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_and_batch() {
        let ds = Dataset::new((0..12).map(f64::from).collect(), vec![0, 1, 2, 1, 0, 1], 1, 2).unwrap();
        assert_eq!(ds.num_classes(), 3);
        let (tr, va) = ds.split_last(2).unwrap();
        assert_eq!((tr.len(), va.len()), (4, 2));
        assert_eq!(va.image(0), &[8.0, 9.0]);
        let (x, y) = ds.batch(&[5, 0]);
        assert_eq!(x, DenseMatrix::from_rows(&[&[10.0, 11.0], &[0.0, 1.0]]));
        assert_eq!(y, vec![1, 0]);
        assert!(ds.split_last(6).is_err());
        assert!(Dataset::new(vec![0.0; 3], vec![0, 1], 1, 2).is_err());
    }

    #[test]
    fn shuffle_is_a_seeded_bijection() {
        let a = shuffled_indices(100, 7, 0);
        assert_eq!(a, shuffled_indices(100, 7, 0));
        assert_ne!(a, shuffled_indices(100, 7, 1));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }
}
