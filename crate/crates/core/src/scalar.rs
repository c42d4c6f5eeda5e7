//! Scalar abstraction shared by the numerical modules.
//!
//! Everything that touches matrices is generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. Linear algebra comes from nalgebra's
//! `RealField` except the real Schur factorization and the symmetric
//! eigensolver, which go to LAPACK;
//! conversions to and from configuration values go through
//! num-traits.

use std::fmt::{Debug, Display};

use nalgebra::{DMatrix, RealField};
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point type usable by every solver in this crate.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal or configuration value.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 value representable in scalar type")
    }

    /// Lossy conversion back to `f64`, used for reporting and hashing.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// A tolerance of `requested` clamped from below to a small multiple of
    /// machine epsilon, so that `f64` tolerances remain meaningful for `f32`.
    #[inline]
    fn tol(requested: f64) -> Self {
        let floor = 64.0 * Self::default_epsilon().as_f64();
        Self::lit(requested.max(floor))
    }

    fn infinity() -> Self;

    /// Real Schur factorization `A = U S Uᵀ`, `(U, S)`.
    fn real_schur(a: &DMatrix<Self>) -> Option<(DMatrix<Self>, DMatrix<Self>)>;

    /// Eigenvalues in ascending order and eigenvectors of a symmetric matrix.
    fn symmetric_eigen(a: &DMatrix<Self>) -> Option<(Vec<Self>, DMatrix<Self>)>;
}

impl Scalar for f32 {
    fn infinity() -> Self {
        f32::INFINITY
    }

    fn real_schur(a: &DMatrix<Self>) -> Option<(DMatrix<Self>, DMatrix<Self>)> {
        crate::lapack::real_schur_f32(a)
    }

    fn symmetric_eigen(a: &DMatrix<Self>) -> Option<(Vec<Self>, DMatrix<Self>)> {
        crate::lapack::symmetric_eigen_f32(a)
    }
}

impl Scalar for f64 {
    fn infinity() -> Self {
        f64::INFINITY
    }

    fn real_schur(a: &DMatrix<Self>) -> Option<(DMatrix<Self>, DMatrix<Self>)> {
        crate::lapack::real_schur_f64(a)
    }

    fn symmetric_eigen(a: &DMatrix<Self>) -> Option<(Vec<Self>, DMatrix<Self>)> {
        crate::lapack::symmetric_eigen_f64(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_floor_depends_on_precision() {
        assert_eq!(<f64 as Scalar>::tol(1e-9), 1e-9);
        assert!(<f32 as Scalar>::tol(1e-9) > 1e-6);
    }
}
