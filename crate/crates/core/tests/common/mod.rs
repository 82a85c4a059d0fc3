//! Independent oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use deepfusion::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Uniform in [-1, 1] but at least `margin` away from zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced `1/n` apart in random order, so no two entries are
/// within a finite-difference step of each other.
pub fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        data.swap(i, j);
    }
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Scalar probe `Σ wᵢ·xᵢ` with fixed pseudo-random weights.
pub fn probe(graph: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let n = graph.value(x).len();
    let weights = uniform(&mut rng(seed), &[n, 1], -1.0, 1.0);
    let w = graph.constant(weights);
    let row = graph.reshape(x, &[1, n])?;
    let out = graph.matmul(row, w)?;
    graph.reshape(out, &[1])
}

/// Six-deep nested-loop cross-correlation.
pub fn conv2d_oracle(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(c_out * oh * ow);
    for o in 0..c_out {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias.data()[o];
                for c in 0..c_in {
                    for i in 0..kh {
                        for j in 0..kw {
                            let iy = (y * stride + i) as isize - pad as isize;
                            let ix = (x * stride + j) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += input.get(&[c, iy as usize, ix as usize]).unwrap()
                                * kernel.get(&[o, c, i, j]).unwrap();
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out).unwrap()
}

/// Brute-force per-window maximum.
pub fn maxpool_oracle(input: &Tensor, window: usize, stride: usize) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::new();
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for i in 0..window {
                    for j in 0..window {
                        best = best.max(input.get(&[ch, y * stride + i, x * stride + j]).unwrap());
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).unwrap()
}

/// Windowed text convolution by direct dot products over `rows` (n×k):
/// `c_i = f(w · x_{i:i+h-1} + b)`.
pub fn text_feature_map_oracle(
    rows: &[Vec<f64>],
    weights: &[f64],
    bias: f64,
    width: usize,
    f: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let n = rows.len();
    let k = rows[0].len();
    (0..=n - width)
        .map(|i| {
            let mut acc = bias;
            for r in 0..width {
                for d in 0..k {
                    acc += weights[r * k + d] * rows[i + r][d];
                }
            }
            f(acc)
        })
        .collect()
}

pub fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len(), "length mismatch");
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "element {i}: got {a}, expected {e} (tol {tol})"
        );
    }
}

/// Synthetic examples for `cfg`, with texts cut to `max_tokens` to keep
/// finite-difference checks fast.
pub fn synthetic_examples(
    n: usize,
    seed: u64,
    cfg: &deepfusion::ModelConfig,
    max_tokens: usize,
) -> (Vec<deepfusion::Example>, deepfusion::EmbeddingTable) {
    let ds = deepfusion::data::gen_synthetic(&deepfusion::data::SyntheticOptions {
        n,
        seed,
        embed_dim: cfg.text.embed_dim,
        ..Default::default()
    })
    .unwrap();
    let mut examples = ds.examples(cfg).unwrap();
    for ex in &mut examples {
        ex.tokens.truncate(max_tokens);
    }
    (examples, ds.embeddings)
}

/// Checks the gradient of one example's loss with respect to every parameter.
pub fn fusion_grad_check(
    model: &deepfusion::FusionModel,
    example: &deepfusion::Example,
    table: &deepfusion::EmbeddingTable,
    eps: f64,
    tol: f64,
) -> deepfusion::GradCheckReport {
    let mut inputs = Vec::new();
    model.params.for_each(&mut |_, t| inputs.push(t.clone()));
    deepfusion::grad_check(
        |g, vars| {
            let bound = model.params.replace_with(vars.iter().copied())?;
            model.sample_loss(g, &bound, example, table)
        },
        &inputs,
        eps,
        tol,
    )
    .unwrap()
}
