//! Shared fixtures for the criterion benchmarks.

use dustlab_core::tensor::Tensor;

/// Deterministic pseudo-random tensor without pulling in an RNG.
pub fn fixture(shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|i| (((i * 2654435761) >> 7) % 1000) as f32 / 1000.0).collect();
    Tensor::from_vec(shape, data).expect("fixture")
}
