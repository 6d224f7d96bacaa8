//! Element type abstraction: f32 for speed (the default), f64 for the
//! finite-difference verification suite.

use std::fmt::{Debug, Display};

/// Floating-point element of [`Tensor`](super::Tensor).
///
/// `f32` is the working precision for models and training; `f64` exists so
/// gradient checks can run at tight tolerances.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// C = alpha * A @ B + beta * C, row-major with explicit strides.
    ///
    /// # Safety
    /// The pointers must reference buffers that cover every element the
    /// m/k/n extents and strides address.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(x: f64) -> Self {
        num_traits::NumCast::from(x).expect("f64 -> scalar")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar -> f64")
    }

    fn from_f32(x: f32) -> Self {
        Self::from_f64(x as f64)
    }

    fn as_f32(self) -> f32 {
        self.as_f64() as f32
    }
}

impl Scalar for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Shorthand numeric cast used throughout op kernels.
#[inline]
pub fn s<S: Scalar>(x: f64) -> S {
    S::from_f64(x)
}
