//! Seeded weight initializers. The caller owns the PRNG.

use rand::Rng;

use crate::tensor::Tensor;

/// He/Kaiming uniform: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<f64> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Conv weight `[out, in, k, k]`, fan-in `in·k·k`.
pub fn conv_weight<R: Rng + ?Sized>(out_c: usize, in_c: usize, k: usize, rng: &mut R) -> Tensor<f64> {
    kaiming_uniform(&[out_c, in_c, k, k], in_c * k * k, rng)
}

/// Dense weight `[out, in]`, fan-in `in`.
pub fn dense_weight<R: Rng + ?Sized>(out_f: usize, in_f: usize, rng: &mut R) -> Tensor<f64> {
    kaiming_uniform(&[out_f, in_f], in_f, rng)
}
