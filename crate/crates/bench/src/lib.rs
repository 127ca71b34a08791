//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voxalign::autodiff::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::uniform(shape.to_vec(), 1.0, &mut rng(seed))
}
