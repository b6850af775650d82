use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating-point element type for the network math (f32 for training and
/// inference, f64 for gradient verification).
pub trait Real:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = a * b + beta * c` on row-major slices. `a` is `m x k` (or `k x m`
    /// when `a_t`), `b` is `k x n` (or `n x k` when `b_t`), `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]);

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }

    /// Exponential used by the activations.
    #[inline(always)]
    fn act_exp(self) -> Self {
        self.exp()
    }

    #[inline(always)]
    fn act_tanh(self) -> Self {
        self.tanh()
    }

    fn sigmoid_in_place(xs: &mut [Self]) {
        xs.iter_mut().for_each(|x| *x = sigmoid(*x));
    }

    fn tanh_in_place(xs: &mut [Self]) {
        xs.iter_mut().for_each(|x| *x = x.act_tanh());
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path $(, $extra:item)*) => {
        impl Real for $t {
            fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]) {
                assert!(a.len() >= m * k, "gemm: lhs too short");
                assert!(b.len() >= k * n, "gemm: rhs too short");
                assert!(c.len() >= m * n, "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: the asserts above keep every strided access in bounds.
                unsafe {
                    $gemm(
                        m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
            $($extra)*
        }
    };
}

impl_real!(
    f32,
    matrixmultiply::sgemm,
    #[inline(always)]
    fn act_exp(self) -> Self {
        exp_f32(self)
    },
    #[inline(always)]
    fn act_tanh(self) -> Self {
        2.0 / (1.0 + exp_f32(-2.0 * self)) - 1.0
    }
);
impl_real!(f64, matrixmultiply::dgemm);

#[inline(always)]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).act_exp())
}

/// Branch-free single-precision exponential (Cody-Waite reduction and a
/// degree-6 polynomial, ~2 ulp) that the compiler can vectorize.
#[inline(always)]
pub fn exp_f32(x: f32) -> f32 {
    const SHIFTER: f32 = 12_582_912.0; // 1.5 * 2^23
    let x = x.clamp(-87.3, 88.3);
    let t = x * std::f32::consts::LOG2_E + SHIFTER;
    let k = t - SHIFTER;
    let r = x - k * 0.693_359_4 - k * -2.121_944_4e-4;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 0.166_666_65;
    p = p * r + 0.5;
    let y = p * r * r + r + 1.0;
    let ki = t.to_bits() as i32 - SHIFTER.to_bits() as i32;
    y * f32::from_bits(((ki + 127) << 23) as u32)
}
