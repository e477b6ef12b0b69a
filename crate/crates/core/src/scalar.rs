//! Scalar abstraction shared by the tensor, autograd and model code.
//!
//! Everything numeric in the crate is generic over [`Scalar`], which is
//! implemented for `f32` (training) and `f64` (gradient checks, oracles).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Element type tag used by the checkpoint container.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    const DTYPE: DType;

    /// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
    ///
    /// `a` is `m x k` (or `k x m` when `trans_a`), `b` is `k x n` (or `n x k`
    /// when `trans_b`), `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("scalar conversion")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar conversion")
    }
}

fn gemm_strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Strides of the logical (untransposed-view) matrix over a row-major buffer.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! check_gemm {
    ($m:expr, $k:expr, $n:expr, $a:expr, $b:expr, $c:expr) => {
        assert!($a.len() >= $m * $k, "gemm: lhs too short");
        assert!($b.len() >= $k * $n, "gemm: rhs too short");
        assert!($c.len() >= $m * $n, "gemm: out too short");
    };
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        trans_a: bool,
        b: &[f32],
        trans_b: bool,
        beta: f32,
        c: &mut [f32],
    ) {
        check_gemm!(m, k, n, a, b, c);
        if m == 0 || n == 0 {
            return;
        }
        let (rsa, csa) = gemm_strides(m, k, trans_a);
        let (rsb, csb) = gemm_strides(k, n, trans_b);
        // SAFETY: buffer lengths are checked above and the strides describe
        // dense row-major (or transposed) views that stay in bounds.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        trans_a: bool,
        b: &[f64],
        trans_b: bool,
        beta: f64,
        c: &mut [f64],
    ) {
        check_gemm!(m, k, n, a, b, c);
        if m == 0 || n == 0 {
            return;
        }
        let (rsa, csa) = gemm_strides(m, k, trans_a);
        let (rsb, csb) = gemm_strides(k, n, trans_b);
        // SAFETY: see the f32 implementation.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}
