use super::eig::two_cols;
use super::{axpy, dot, norm, DenseMatrix};
use crate::Result;

const MAX_SWEEPS: usize = 100;

/// Thin SVD `M = Σ σᵢ uᵢ vᵢᵀ` with `q = min(m, n)` triples.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    /// `m × q`, orthonormal columns.
    pub left_vectors: DenseMatrix,
    /// `n × q`, orthonormal columns.
    pub right_vectors: DenseMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let u = &self.left_vectors;
        let us = DenseMatrix::from_fn(u.rows(), u.cols(), |i, j| u[(i, j)] * self.singular_values[j]);
        us.matmul_nt(&self.right_vectors)
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Columns of a working copy are rotated pairwise until mutually orthogonal;
/// their norms are the singular values. Wide inputs are handled through the
/// transpose.
pub fn svd(m: &DenseMatrix) -> Result<Svd> {
    m.check_finite()?;
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose());
        return Ok(Svd { singular_values: t.singular_values, left_vectors: t.right_vectors, right_vectors: t.left_vectors });
    }
    Ok(svd_tall(m))
}

fn svd_tall(m: &DenseMatrix) -> Svd {
    let (rows, n) = m.shape();
    let mut u = m.clone();
    let mut v = DenseMatrix::identity(n);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (up, uq) = two_cols(&mut u, p, q);
                let alpha = dot(up, up);
                let beta = dot(uq, uq);
                let gamma = dot(up, uq);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(up, uq, c, s);
                let (vp, vq) = two_cols(&mut v, p, q);
                rotate_pair(vp, vq, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = (0..n).map(|j| norm(u.col(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    let singular_values: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();
    let right_vectors = v.select_cols(&order);

    let smax = singular_values.first().copied().unwrap_or(0.0);
    let tiny = (rows.max(n) as f64) * f64::EPSILON * smax;
    let mut left = DenseMatrix::zeros(rows, n);
    let mut filled = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        if singular_values[k] > tiny && singular_values[k] > 0.0 {
            let s = singular_values[k];
            for (dst, src) in left.col_mut(k).iter_mut().zip(u.col(j)) {
                *dst = src / s;
            }
            filled.push(k);
        }
    }
    complete_orthonormal(&mut left, &filled);
    Svd { singular_values, left_vectors: left, right_vectors }
}

fn rotate_pair(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let xa = *a;
        let yb = *b;
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills the columns of `q` not listed in `filled` with unit vectors
/// orthogonal to everything already present (Gram-Schmidt on the standard basis).
fn complete_orthonormal(q: &mut DenseMatrix, filled: &[usize]) {
    let (rows, cols) = q.shape();
    let mut done: Vec<usize> = filled.to_vec();
    let mut candidate = 0;
    for k in 0..cols {
        if filled.contains(&k) {
            continue;
        }
        while candidate < rows {
            let mut e = vec![0.0; rows];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &d in &done {
                    let proj = dot(q.col(d), &e);
                    axpy(-proj, q.col(d), &mut e);
                }
            }
            let nrm = norm(&e);
            if nrm > 1e-8 {
                for (dst, x) in q.col_mut(k).iter_mut().zip(&e) {
                    *dst = x / nrm;
                }
                done.push(k);
                break;
            }
        }
    }
}
