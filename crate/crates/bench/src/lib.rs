//! Fixtures shared by the benchmarks.

use deepfusion::data::{gen_synthetic, SyntheticOptions};
use deepfusion::{EmbeddingTable, Example, ModelConfig, Tensor};

/// Deterministic pseudo-random tensor in `[-1, 1)`.
pub fn filled(shape: &[usize], salt: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n as u64)
        .map(|i| {
            let x = (i ^ salt).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 11;
            x as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// `n` synthetic examples prepared for `cfg`, with their word vectors.
pub fn examples(n: usize, cfg: &ModelConfig) -> (Vec<Example>, EmbeddingTable) {
    let data = gen_synthetic(&SyntheticOptions {
        n,
        seed: 1,
        embed_dim: cfg.text.embed_dim,
        ..Default::default()
    })
    .expect("synthetic data");
    (data.examples(cfg).expect("examples"), data.embeddings)
}
