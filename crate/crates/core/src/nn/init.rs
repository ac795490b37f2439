use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::params::Mat;

pub fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), bound: f64) -> Mat {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Mat::from_shape_simple_fn(shape, || dist.sample(rng))
}

pub fn normal(rng: &mut ChaCha8Rng, shape: (usize, usize), std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("finite std");
    Mat::from_shape_simple_fn(shape, || dist.sample(rng))
}

/// Glorot-scaled normal for a `(fan_in × fan_out)` weight.
pub fn xavier(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Mat {
    normal(rng, shape, (2.0 / (shape.0 + shape.1) as f64).sqrt())
}

pub fn zeros(shape: (usize, usize)) -> Mat {
    Mat::zeros(shape)
}

pub fn ones(shape: (usize, usize)) -> Mat {
    Mat::ones(shape)
}
