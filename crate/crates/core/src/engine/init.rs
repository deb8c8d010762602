use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

/// Standard deviation of the normal initializer for embedding tables
/// (variance 0.01).
pub const EMBEDDING_STD: f64 = 0.1;

/// Uniform in `±1/sqrt(fan_in)`.
pub fn uniform_fan_in<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

pub fn normal<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std is positive");
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| dist.sample(rng)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
