//! Minimal neural-network substrate: flat tensors, layers with explicit
//! backward passes, and an Adam optimizer.
//!
//! Everything is generic over [`Real`] so training runs in `f32` while
//! gradient checks run the same code in `f64`. All reductions accumulate in
//! a fixed order, so results are bitwise reproducible for a given seed
//! regardless of thread scheduling.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod gru;
pub mod layers;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Scalar element type for the network: `f32` or `f64`.
pub trait Real:
    Copy
    + Send
    + Sync
    + PartialOrd
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;

    /// `c[m x n] = alpha * a[m x k] . b[k x n] + beta * c` with explicit strides.
    ///
    /// # Safety
    /// Pointers must cover the strided extents; aliasing between `c` and the
    /// inputs is not allowed.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
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
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn tanh(self) -> Self {
        f32::tanh(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    unsafe fn gemm_raw(
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

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    unsafe fn gemm_raw(
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

/// Whether an operand is used transposed in [`gemm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// Row-major gemm with optional transposes:
/// `c[m x n] = alpha * op(a) . op(b) + beta * c`.
///
/// `a` is stored `m x k` when `Op::N`, `k x m` when `Op::T` (and likewise for
/// `b` with `k x n` / `n x k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    op_a: Op,
    op_b: Op,
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    if m == 0 || n == 0 || k == 0 {
        if beta.to_f64() == 0.0 {
            c.fill(T::ZERO);
        }
        return;
    }
    unsafe {
        T::gemm_raw(
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

/// One named parameter tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value: vec![T::ZERO; len],
            grad: vec![T::ZERO; len],
        }
    }

    /// Uniform init in `[-bound, bound]`, drawn in a deterministic order.
    pub fn uniform(name: &str, shape: &[usize], bound: f64, rng: &mut ChaCha20Rng) -> Self {
        let mut p = Param::zeros(name, shape);
        for v in p.value.iter_mut() {
            *v = T::from_f64(rng.gen_range(-bound..bound));
        }
        p
    }

    pub fn filled(name: &str, shape: &[usize], fill: f64) -> Self {
        let mut p = Param::zeros(name, shape);
        p.value.fill(T::from_f64(fill));
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::ZERO);
    }
}

/// Anything that owns parameters and can hand them to a visitor in a stable
/// order (used by the optimizer, checkpointing, and gradient checks).
pub trait ParamVisitor<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_plain() {
        // (2x3) . (3x2)
        let a = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f32, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f32; 4];
        gemm(Op::N, Op::N, 2, 3, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn gemm_transposed_a() {
        // a stored (3x2), logical a^T is (2x3)
        let a_stored = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f64; 4];
        gemm(Op::T, Op::N, 2, 3, 2, 1.0, &a_stored, &b, 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn gemm_transposed_b_accumulates() {
        // b stored (2x3), logical b^T is (3x2); beta = 1 accumulates.
        let a = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b_stored = [7.0f32, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c = [1.0f32; 4];
        gemm(Op::N, Op::T, 2, 3, 2, 1.0, &a, &b_stored, 1.0, &mut c);
        assert_eq!(c, [59.0, 65.0, 140.0, 155.0]);
    }

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-12);
        assert!(sigmoid(20.0f32) > 0.999);
        assert!(sigmoid(-20.0f32) < 0.001);
    }
}
