use rand::Rng;
use rand_distr::StandardNormal;

/// Floating-point scalar the pipeline is generic over.
///
/// Implemented for `f32` and `f64`. Experiment artifacts are stored as 32-bit
/// floats, so `f32` is the working type for runs; `f64` is available for
/// high-precision checks and is used internally for norm/energy accumulation
/// regardless of the working type.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + rustfft::FftNum
    + std::iter::Sum
    + std::fmt::Display
    + std::fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn of_f32(x: f32) -> Self;
    fn as_f32(self) -> f32;
    /// Draw one sample from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn of_f32(x: f32) -> Self {
        x
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for f64 {
    #[inline]
    fn of_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn of_f32(x: f32) -> Self {
        x as f64
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

/// Sum of squares accumulated in f64.
pub fn sum_sq<T: Scalar>(xs: &[T]) -> f64 {
    xs.iter().map(|&x| {
        let v = x.as_f64();
        v * v
    }).sum()
}

/// L2 norm accumulated in f64.
pub fn l2_norm<T: Scalar>(xs: &[T]) -> f64 {
    sum_sq(xs).sqrt()
}
