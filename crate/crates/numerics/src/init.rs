//! Weight initialisers.

use rand::Rng;

use crate::tensor::Tensor;

/// Uniform He initialisation, `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn he_uniform<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// Uniform fan-in scaled initialisation multiplied by `gain`, used for output heads.
pub fn scaled_uniform<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, fan_in: usize, gain: f64, rng: &mut R) -> Tensor {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}
