//! Shared fixtures for the benchmarks.

use rand::Rng;
use vjpsketch::rng::stream;
use vjpsketch::DenseMatrix;

/// Uniform `[-1, 1)` matrix from a fixed stream.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = stream(seed, 0, 0);
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Symmetric `n × n` matrix `(A + Aᵀ)/2`.
pub fn random_symmetric(n: usize, seed: u64) -> DenseMatrix {
    let a = random_matrix(n, n, seed);
    DenseMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}
