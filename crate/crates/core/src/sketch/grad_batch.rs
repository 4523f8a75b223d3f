use std::sync::OnceLock;

use crate::DenseMatrix;

/// Batch of output gradients `G = [g⁽¹⁾ … g⁽ᴮ⁾]`, `d_out × B`.
#[derive(Debug, Clone)]
pub struct GradBatch {
    g: DenseMatrix,
    gamma: OnceLock<DenseMatrix>,
}

impl GradBatch {
    /// Wraps `G` with one column per sample.
    pub fn from_columns(g: DenseMatrix) -> Self {
        GradBatch { g, gamma: OnceLock::new() }
    }

    /// Builds the batch from the practical `B × d_out` block (one row per sample).
    pub fn from_rows(g_rows: &DenseMatrix) -> Self {
        Self::from_columns(g_rows.transpose())
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.g
    }

    pub fn dim(&self) -> usize {
        self.g.rows()
    }

    pub fn batch_size(&self) -> usize {
        self.g.cols()
    }

    pub fn is_zero(&self) -> bool {
        self.g.data().iter().all(|&v| v == 0.0)
    }

    /// `Γ = (1/B)·G·Gᵀ`, computed on first use.
    pub fn second_moment(&self) -> &DenseMatrix {
        self.gamma.get_or_init(|| {
            let b = self.batch_size().max(1) as f64;
            let n = self.dim();
            let raw = self.g.matmul_nt(&self.g);
            DenseMatrix::from_fn(n, n, |i, j| 0.5 * (raw[(i, j)] + raw[(j, i)]) / b)
        })
    }

    /// Whether coordinate `j` has a nonzero gradient in some sample.
    pub(crate) fn row_active(&self) -> Vec<bool> {
        let mut active = vec![false; self.dim()];
        for b in 0..self.batch_size() {
            for (a, &v) in active.iter_mut().zip(self.g.col(b)) {
                *a |= v != 0.0;
            }
        }
        active
    }
}
