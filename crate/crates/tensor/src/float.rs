use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Scalar element type of a [`Tensor`](crate::Tensor).
///
/// Implemented for `f32` (the training default) and `f64` (used by the
/// gradient verification harness).
pub trait Float:
    num_traits::Float
    + num_traits::FloatConst
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Bytes per element in little-endian serialization.
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c <- a * b + beta * c` for an `m x k` by `k x n` product with
    /// arbitrary non-negative row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );
}

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_float {
    ($t:ty, $gemm:path, $bytes:expr) => {
        impl Float for $t {
            const BYTES: usize = $bytes;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                assert!(a.len() >= extent(m, k, rsa, csa), "gemm: lhs buffer too short");
                assert!(b.len() >= extent(k, n, rsb, csb), "gemm: rhs buffer too short");
                assert!(c.len() >= extent(m, n, rsc, csc), "gemm: output buffer too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: extents checked above; strides are non-negative and
                // the output does not alias either input (distinct borrows).
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }
        }
    };
}

impl_float!(f32, matrixmultiply::sgemm, 4);
impl_float!(f64, matrixmultiply::dgemm, 8);
