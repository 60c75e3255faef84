//! Dense and sparse linear-algebra kernels used by the rest of the toolkit.
//!
//! Everything here is self-contained: compressed sparse rows for symmetric
//! matrices, an envelope Cholesky factorization with reverse Cuthill-McKee
//! ordering, a dense symmetric/generalized eigensolver, and the Lanczos
//! condition-number estimate recovered from conjugate-gradient coefficients.

mod dense;
mod factor;
mod lanczos;
mod sparse;

pub use dense::{
    dense_generalized_eig, dense_generalized_eig_psd, sym_eig_full, sym_eig_lowest,
    sym_eigenvalues, DenseCholesky, DenseSymMatrix, GeneralizedEig,
};
pub use factor::FactorizedSpd;
pub use lanczos::lanczos_cond_estimate;
pub use sparse::{SparseSymBuilder, SparseSymMatrix};

/// Euclidean dot product in deterministic index order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
