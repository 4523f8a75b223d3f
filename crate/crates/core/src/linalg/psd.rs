use super::{sym_eig, DenseMatrix};
use crate::{Error, Result};

/// Relative eigenvalue cut-off per unit of dimension: eigenvalues below
/// `DEFAULT_RANK_TOL · n · λ_max` are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// `A^{1/2}`, the pseudo-inverse square root `A^{+1/2}` and `dim range(A)`.
#[derive(Debug, Clone)]
pub struct PsdRoots {
    pub sqrt: DenseMatrix,
    pub pinv_sqrt: DenseMatrix,
    pub range_dim: usize,
}

/// Square root and pseudo-inverse square root of a PSD matrix.
///
/// `rank_tol` is relative to `λ_max`; `None` uses `DEFAULT_RANK_TOL · n`.
/// Eigenvalues in `[-rank_tol·λ_max, rank_tol·λ_max)` are zeroed, anything
/// more negative is an error.
pub fn psd_sqrt_and_pinv_sqrt(a: &DenseMatrix, rank_tol: Option<f64>) -> Result<PsdRoots> {
    let e = sym_eig(a)?;
    let n = a.rows();
    let tol = rank_tol.unwrap_or(DEFAULT_RANK_TOL * n as f64);
    let lmax = e.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let threshold = tol * lmax;
    if let Some(&lmin) = e.eigenvalues.last() {
        if lmin < -threshold {
            return Err(Error::NotPsd { eigenvalue: lmin, threshold });
        }
    }
    let q = &e.eigenvectors;
    let mut root = Vec::with_capacity(n);
    let mut inv_root = Vec::with_capacity(n);
    let mut range_dim = 0;
    for &lam in &e.eigenvalues {
        if lam > threshold && lam > 0.0 {
            let s = lam.sqrt();
            root.push(s);
            inv_root.push(1.0 / s);
            range_dim += 1;
        } else {
            root.push(0.0);
            inv_root.push(0.0);
        }
    }
    let sqrt = DenseMatrix::from_fn(n, n, |i, j| q[(i, j)] * root[j]).matmul_nt(q);
    let pinv_sqrt = DenseMatrix::from_fn(n, n, |i, j| q[(i, j)] * inv_root[j]).matmul_nt(q);
    Ok(PsdRoots { sqrt, pinv_sqrt, range_dim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_roots() {
        let r = psd_sqrt_and_pinv_sqrt(&DenseMatrix::identity(3), None).unwrap();
        assert!(r.sqrt.sub(&DenseMatrix::identity(3)).max_abs() < 1e-15);
        assert!(r.pinv_sqrt.sub(&DenseMatrix::identity(3)).max_abs() < 1e-15);
        assert_eq!(r.range_dim, 3);
    }

    #[test]
    fn singular_diagonal() {
        let r = psd_sqrt_and_pinv_sqrt(&DenseMatrix::from_diag(&[4.0, 0.0]), Some(1e-10)).unwrap();
        assert_eq!(r.sqrt, DenseMatrix::from_diag(&[2.0, 0.0]));
        assert_eq!(r.pinv_sqrt, DenseMatrix::from_diag(&[0.5, 0.0]));
        assert_eq!(r.range_dim, 1);
    }

    #[test]
    fn negative_eigenvalue_is_rejected() {
        let err = psd_sqrt_and_pinv_sqrt(&DenseMatrix::from_diag(&[1.0, -0.5]), None).unwrap_err();
        assert!(matches!(err, Error::NotPsd { .. }));
    }

    #[test]
    fn batch_second_moment_projects_onto_gradient_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = DenseMatrix::from_fn(8, 4, |_, _| rng.random_range(-1.0..1.0));
        let gamma = g.matmul_nt(&g).scaled(0.25);
        let r = psd_sqrt_and_pinv_sqrt(&gamma, None).unwrap();
        assert_eq!(r.range_dim, 4);
        assert!(r.sqrt.matmul(&r.sqrt).sub(&gamma).frobenius_norm() <= 1e-8 * gamma.frobenius_norm());

        // oracle: projector U₄U₄ᵀ from the left singular vectors of G
        let u = svd(&g).unwrap().left_vectors;
        let projector = u.matmul_nt(&u);
        let product = r.sqrt.matmul(&r.pinv_sqrt);
        assert!(product.sub(&projector).max_abs() < 1e-8, "{:?}", product.sub(&projector));
    }
}
