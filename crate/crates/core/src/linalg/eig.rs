use super::DenseMatrix;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-12;

/// Eigendecomposition `A = Q diag(λ) Qᵀ` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Orthogonal matrix whose columns are the matching eigenvectors.
    pub eigenvectors: DenseMatrix,
}

impl SymEig {
    pub fn reconstruct(&self) -> DenseMatrix {
        let q = &self.eigenvectors;
        let ql = DenseMatrix::from_fn(q.rows(), q.cols(), |i, j| q[(i, j)] * self.eigenvalues[j]);
        ql.matmul_nt(q)
    }
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Each rotation zeroes one off-diagonal pair `(p, q)`; sweeps repeat until
/// the off-diagonal mass falls below machine precision relative to `‖A‖_F`.
pub fn sym_eig(a: &DenseMatrix) -> Result<SymEig> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    a.check_finite()?;
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let n = a.rows();
    // symmetrize exactly so the rotations see a truly symmetric input
    let mut w = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = DenseMatrix::identity(n);
    let total = w.frobenius_sq();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n).flat_map(|j| (0..j).map(move |i| (i, j))).map(|(i, j)| w[(i, j)] * w[(i, j)]).sum();
        if off <= (f64::EPSILON * f64::EPSILON) * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = w[(p, p)];
                let aqq = w[(q, q)];
                // negligible relative to both diagonal entries: drop it
                if apq.abs() <= f64::EPSILON * 1e-2 * (app.abs().min(aqq.abs())) {
                    w[(p, q)] = 0.0;
                    w[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut w, &mut v, p, q, c, s, app, aqq, apq, t);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag = w.diag();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| diag[i]).collect();
    let eigenvectors = v.select_cols(&order);
    Ok(SymEig { eigenvalues, eigenvectors })
}

#[allow(clippy::too_many_arguments)]
fn rotate(w: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64, app: f64, aqq: f64, apq: f64, t: f64) {
    let n = w.rows();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = w[(k, p)];
        let akq = w[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        w[(k, p)] = new_kp;
        w[(p, k)] = new_kp;
        w[(k, q)] = new_kq;
        w[(q, k)] = new_kq;
    }
    w[(p, p)] = app - t * apq;
    w[(q, q)] = aqq + t * apq;
    w[(p, q)] = 0.0;
    w[(q, p)] = 0.0;

    let (vp, vq) = two_cols(v, p, q);
    for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Mutable views of two distinct columns.
pub(super) fn two_cols(m: &mut DenseMatrix, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let rows = m.rows();
    let (head, tail) = m.data_mut().split_at_mut(q * rows);
    (&mut head[p * rows..(p + 1) * rows], &mut tail[..rows])
}
