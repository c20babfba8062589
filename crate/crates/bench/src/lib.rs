//! Criterion benchmarks for the convolution kernels, network passes and the
//! acoustic solver. Run with `cargo bench -p sparsepat-bench`.

use sparsepat::Tensor;

/// Deterministic pseudo-random tensor for benchmark inputs.
pub fn filled(shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |i| ((i * 2_654_435_761) % 1000) as f32 / 1000.0 - 0.5)
}
