//! Dense real and complex matrices and the decompositions the Koopman
//! pipeline relies on. Everything here is a pure function of its inputs.

mod eig;
mod matrix;
mod serial;
mod solve;
mod svd;

pub use eig::{eig, matexp_eigs, principal_angle, spectral_order, EigResult, MAX_EIGVEC_CONDITION};
pub use matrix::{CMatrix, Matrix, RMatrix, Scalar, ScalarKind, C64};
pub use solve::{inverse, solve, Lu};
pub use svd::{numerical_rank, pinv, svd, svd_truncated, SvdResult, ThinSvd, REL_TOL};

pub(crate) use eig::phase_pivot;

/// Matrix product. Fails on inner-dimension mismatch.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> crate::Result<Matrix<T>> {
    a.matmul(b)
}
