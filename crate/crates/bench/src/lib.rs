//! Seeded inputs shared by the benchmarks under `benches/`.

use fastfashion_core::nn::Tensor;
use fastfashion_core::ImageBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_map(channels: usize, height: usize, width: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_shape_simple_fn((channels, height, width), || rng.random_range(-1.0..1.0))
}

pub fn random_image(size: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::from_fn(size, size, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
}

/// `n` points in `dim` dimensions around `k` well separated centers.
pub fn blobs(n: usize, dim: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    (0..n)
        .map(|i| centers[i % k].iter().map(|c| c + rng.random_range(-0.5..0.5)).collect())
        .collect()
}
