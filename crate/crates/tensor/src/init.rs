use rand::Rng;

use crate::tensor::Tensor;

/// Glorot/Xavier uniform: `U(−l, l)` with `l = √(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..limit))
}

pub fn uniform<R: Rng>(shape: &[usize], low: f64, high: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(low..high))
}
