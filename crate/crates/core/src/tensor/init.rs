use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Scalar, Tensor};

/// Generator used for every seeded draw in the crate.
pub type LabRng = ChaCha8Rng;

/// Name recorded in run reports so experiments can be replayed.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9), normals via rand_distr ziggurat";

pub fn seeded_rng(seed: u64) -> LabRng {
    LabRng::seed_from_u64(seed)
}

pub fn normal_tensor<T: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

pub fn uniform_tensor<T: Scalar, R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(lo..hi)))
}
