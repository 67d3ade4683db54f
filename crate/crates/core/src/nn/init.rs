//! Seeded weight initialization.
//!
//! Each tensor draws from a stream derived from the global seed and the
//! parameter name, so initialization does not depend on construction
//! order and is reproducible across runs.

use ndarray::{Array, Dimension, ShapeBuilder};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng;

/// He (Kaiming) normal: std = sqrt(2 / fan_in).
pub fn he_normal<D, Sh>(shape: Sh, fan_in: usize, seed: u64, name: &str) -> Array<f64, D>
where
    D: Dimension,
    Sh: ShapeBuilder<Dim = D>,
{
    let mut stream = rng::derive_stream(seed, &["init", name]);
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
    Array::from_shape_simple_fn(shape, || normal.sample(&mut stream))
}

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
pub fn uniform_fan_in<D, Sh>(shape: Sh, fan_in: usize, seed: u64, name: &str) -> Array<f64, D>
where
    D: Dimension,
    Sh: ShapeBuilder<Dim = D>,
{
    let mut stream = rng::derive_stream(seed, &["init", name]);
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array::from_shape_simple_fn(shape, || stream.gen_range(-bound..bound))
}
