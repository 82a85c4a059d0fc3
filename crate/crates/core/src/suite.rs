//! Randomised gradient-check suite over every differentiable operation and
//! the tiny end-to-end model.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, ElementwiseRule, GradCheckReport, Graph, LrnParams, Var};
use crate::data::{gen_synthetic, SyntheticOptions};
use crate::error::Result;
use crate::model::{FusionModel, Modality, ModelConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOptions {
    pub trials: usize,
    /// Seeds the random operation cases.
    pub seed: u64,
    /// Seeds the synthetic examples of the end-to-end checks.
    pub data_seed: u64,
    /// Seeds the weights and biases of the end-to-end models.
    pub model_seed: u64,
    pub eps: f64,
    pub tol: f64,
    /// Tokens kept per sentence in the end-to-end checks.
    pub max_tokens: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 0,
            data_seed: 43,
            model_seed: 103,
            eps: 1e-3,
            tol: 1e-4,
            max_tokens: 8,
        }
    }
}

/// Worst result over all trials of one case.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub trials: usize,
    pub failed: usize,
    pub max_rel_error: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.failed == 0
    }
}

type Case = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + Sync>;

struct Logistic;

impl ElementwiseRule for Logistic {
    fn name(&self) -> &'static str {
        "logistic"
    }
    fn value(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }
    fn derivative(&self, _x: f64, y: f64) -> f64 {
        y * (1.0 - y)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect())
        .expect("shape matches data")
}

/// Entries `1/n` apart in random order, keeping pooling winners stable under
/// a small step.
fn spread(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
    for i in (1..n).rev() {
        data.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// `Σ wᵢ·xᵢ` with weights fixed by `seed`.
fn probe(graph: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let n = graph.value(x).len();
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(seed), &[n, 1], -1.0, 1.0);
    let w = graph.constant(w);
    let row = graph.reshape(x, &[1, n])?;
    let out = graph.matmul(row, w)?;
    graph.reshape(out, &[1])
}

fn op_case(name: &str, r: &mut ChaCha8Rng) -> (Vec<Tensor>, Case) {
    let salt: u64 = r.gen();
    match name {
        "relu" => {
            let n = r.gen_range(1..10);
            (vec![uniform(r, &[n], -1.0, 1.0)], Box::new(move |g, v| {
                let y = g.relu(v[0]);
                probe(g, y, salt)
            }))
        }
        "tanh" => {
            let n = r.gen_range(1..10);
            (vec![uniform(r, &[n], -2.0, 2.0)], Box::new(move |g, v| {
                let y = g.tanh(v[0]);
                probe(g, y, salt)
            }))
        }
        "map" => {
            let n = r.gen_range(1..10);
            (vec![uniform(r, &[n], -3.0, 3.0)], Box::new(move |g, v| {
                let y = g.map(v[0], Arc::new(Logistic));
                probe(g, y, salt)
            }))
        }
        "add" => {
            let shape = [r.gen_range(1..4), r.gen_range(1..4)];
            (vec![uniform(r, &shape, -1.0, 1.0), uniform(r, &shape, -1.0, 1.0)], Box::new(move |g, v| {
                let y = g.add(v[0], v[1])?;
                let y = g.tanh(y);
                probe(g, y, salt)
            }))
        }
        "scale" => {
            let n = r.gen_range(1..8);
            let s = r.gen_range(-3.0..3.0);
            (vec![uniform(r, &[n], -1.0, 1.0)], Box::new(move |g, v| {
                let y = g.scale(v[0], s);
                let y = g.tanh(y);
                probe(g, y, salt)
            }))
        }
        "sum" => {
            let shape = [r.gen_range(1..4), r.gen_range(1..5)];
            (vec![uniform(r, &shape, -1.0, 1.0)], Box::new(|g, v| {
                let t = g.tanh(v[0]);
                let s = g.sum(t);
                let s = g.tanh(s);
                Ok(g.sum(s))
            }))
        }
        "mean" => {
            let k = r.gen_range(1..5);
            let parts = (0..k).map(|_| uniform(r, &[1], -1.0, 1.0)).collect();
            (parts, Box::new(|g, v| {
                let t: Vec<Var> = v.iter().map(|&x| g.tanh(x)).collect();
                let m = g.mean(&t)?;
                let m = g.tanh(m);
                Ok(g.sum(m))
            }))
        }
        "reshape" => {
            let (a, b) = (r.gen_range(1..4), r.gen_range(1..4));
            (vec![uniform(r, &[a, b], -1.0, 1.0)], Box::new(move |g, v| {
                let y = g.reshape(v[0], &[b, a])?;
                let y = g.tanh(y);
                let y = g.flatten(y)?;
                probe(g, y, salt)
            }))
        }
        "matmul" => {
            let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
            (vec![uniform(r, &[m, k], -1.0, 1.0), uniform(r, &[k, n], -1.0, 1.0)], Box::new(move |g, v| {
                let y = g.matmul(v[0], v[1])?;
                probe(g, y, salt)
            }))
        }
        "conv2d" => {
            let (c, o) = (r.gen_range(1..4), r.gen_range(1..4));
            let (h, w) = (r.gen_range(3..7), r.gen_range(3..7));
            let (kh, kw) = (r.gen_range(1..4), r.gen_range(1..4));
            let (stride, pad) = (r.gen_range(1..3), r.gen_range(0..2));
            let inputs = vec![
                uniform(r, &[c, h, w], -1.0, 1.0),
                uniform(r, &[o, c, kh, kw], -1.0, 1.0),
                uniform(r, &[o], -1.0, 1.0),
            ];
            (inputs, Box::new(move |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
                probe(g, y, salt)
            }))
        }
        "maxpool2d" => {
            let c = r.gen_range(1..4);
            let (h, w) = (r.gen_range(2..7), r.gen_range(2..7));
            let window = r.gen_range(1..=h.min(w).min(3));
            let stride = r.gen_range(1..3);
            (vec![spread(r, &[c, h, w])], Box::new(move |g, v| {
                let y = g.maxpool2d(v[0], window, stride)?;
                probe(g, y, salt)
            }))
        }
        "lrn" => {
            let c = r.gen_range(1..7);
            let params = LrnParams {
                depth_radius: r.gen_range(1..3),
                k: r.gen_range(1.0..2.0),
                alpha: r.gen_range(1e-4..0.5),
                beta: r.gen_range(0.5..1.0),
            };
            (vec![uniform(r, &[c, 2, 3], -2.0, 2.0)], Box::new(move |g, v| {
                let y = g.lrn(v[0], params)?;
                probe(g, y, salt)
            }))
        }
        "concat" => {
            let rows = r.gen_range(1..4);
            let axis = r.gen_range(0..2);
            let parts = (0..r.gen_range(2..4))
                .map(|_| {
                    let w = r.gen_range(1..4);
                    let shape = if axis == 0 { [w, rows] } else { [rows, w] };
                    uniform(r, &shape, -1.0, 1.0)
                })
                .collect();
            (parts, Box::new(move |g, v| {
                let y = g.concat(v, axis)?;
                probe(g, y, salt)
            }))
        }
        "softmax" => {
            let n = r.gen_range(2..6);
            (vec![uniform(r, &[n], -3.0, 3.0)], Box::new(move |g, v| {
                let y = g.softmax(v[0])?;
                probe(g, y, salt)
            }))
        }
        "softmax_cross_entropy" => {
            let n = r.gen_range(2..6);
            let label = r.gen_range(0..n);
            (vec![uniform(r, &[n], -3.0, 3.0)], Box::new(move |g, v| g.softmax_cross_entropy(v[0], label)))
        }
        "triple_pool" => {
            let shape = [r.gen_range(1..4), r.gen_range(1..7)];
            (vec![spread(r, &shape)], Box::new(move |g, v| {
                let y = g.triple_pool(v[0])?;
                probe(g, y, salt)
            }))
        }
        other => unreachable!("no gradient case for `{other}`"),
    }
}

pub const OPS: [&str; 16] = [
    "relu",
    "tanh",
    "map",
    "add",
    "scale",
    "sum",
    "mean",
    "reshape",
    "matmul",
    "conv2d",
    "maxpool2d",
    "lrn",
    "concat",
    "softmax",
    "softmax_cross_entropy",
    "triple_pool",
];

fn tally(name: String, reports: &[GradCheckReport]) -> SuiteEntry {
    SuiteEntry {
        name,
        trials: reports.len(),
        failed: reports.iter().filter(|r| !r.passed()).count(),
        max_rel_error: reports.iter().map(|r| r.max_rel_error()).fold(0.0, f64::max),
    }
}

/// Zero biases put every pre-activation fed only by zero padding or a dead
/// region exactly on a ReLU kink, where the loss has no derivative at all.
/// Small random biases move the check to a generic point.
pub fn with_random_biases(mut model: FusionModel, seed: u64) -> FusionModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    model.params.for_each_mut(&mut |name, t| {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    });
    model
}

/// Runs `opts.trials` random cases per operation, then checks the tiny fused,
/// image-only and text-only models on two synthetic examples each.
pub fn gradcheck_suite(opts: &SuiteOptions) -> Result<Vec<SuiteEntry>> {
    let mut entries = Vec::new();
    for (k, name) in OPS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
        let reports = (0..opts.trials)
            .map(|_| {
                let (inputs, f) = op_case(name, &mut rng);
                grad_check(|g, v| f(g, v), &inputs, opts.eps, opts.tol)
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push(tally(name.to_string(), &reports));
    }

    for modality in [Modality::Fused, Modality::ImageOnly, Modality::TextOnly] {
        let cfg = ModelConfig::tiny().with_modality(modality);
        let data = gen_synthetic(&SyntheticOptions {
            n: 2,
            seed: opts.data_seed,
            embed_dim: cfg.text.embed_dim,
            ..Default::default()
        })?;
        let model = with_random_biases(FusionModel::new(cfg.clone(), opts.model_seed)?, opts.model_seed);
        let mut inputs = Vec::new();
        model.params.for_each(&mut |_, t| inputs.push(t.clone()));
        let mut reports = Vec::new();
        for mut ex in data.examples(&cfg)? {
            ex.tokens.truncate(opts.max_tokens);
            let report = grad_check(
                |g, vars| {
                    let bound = model.params.replace_with(vars.iter().copied())?;
                    model.sample_loss(g, &bound, &ex, &data.embeddings)
                },
                &inputs,
                opts.eps,
                opts.tol,
            )?;
            reports.push(report);
        }
        let name = match modality {
            Modality::Fused => "model/fused",
            Modality::ImageOnly => "model/image-only",
            Modality::TextOnly => "model/text-only",
        };
        entries.push(tally(name.to_string(), &reports));
    }
    Ok(entries)
}
