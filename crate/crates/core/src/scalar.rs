//! Scalar abstraction for the numeric core: f32 or f64.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the core numerics are generic over.
///
/// `gemm` routes dense matrix products through an optimized kernel; this is
/// what convolution and the dense layers sit on.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// C = alpha * A(m,k) B(k,n) + beta * C, with explicit row/col strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
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

    fn of_f64(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 conversion")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("f64 conversion")
    }

    fn of_usize(x: usize) -> Self {
        <Self as FromPrimitive>::from_usize(x).expect("usize conversion")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            #[inline]
            fn gemm(
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
                unsafe { $gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);
