use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embedding::{SentenceMatrix, DEFAULT_EMBED_DIM, MAX_SENTENCE_LEN};
use crate::autodiff::kernels::bounded_mean;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::init::glorot_uniform;
use crate::tensor::Tensor;

/// Nonlinearity applied to each windowed filter response.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Tanh,
    Relu,
    Identity,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Identity => x,
        }
    }

    fn record(self, graph: &mut Graph, x: Var) -> Var {
        match self {
            Nonlinearity::Tanh => graph.tanh(x),
            Nonlinearity::Relu => graph.relu(x),
            Nonlinearity::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextConfig {
    pub embed_dim: usize,
    pub max_len: usize,
    /// Window widths in ascending order.
    pub widths: Vec<usize>,
    pub filters_per_width: usize,
    pub nonlinearity: Nonlinearity,
}

impl TextConfig {
    pub fn full() -> Self {
        Self {
            embed_dim: DEFAULT_EMBED_DIM,
            max_len: MAX_SENTENCE_LEN,
            widths: vec![3, 4, 5],
            filters_per_width: 100,
            nonlinearity: Nonlinearity::Tanh,
        }
    }

    pub fn tiny() -> Self {
        Self {
            filters_per_width: 2,
            ..Self::full()
        }
    }

    /// Length of the pooled text representation: three pools per filter.
    pub fn output_len(&self) -> usize {
        3 * self.widths.len() * self.filters_per_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.filters_per_width == 0 || self.widths.is_empty() {
            return Err(Error::InvalidArgument(
                "text config needs a positive dimension, filter count and at least one width".into(),
            ));
        }
        if self.widths.windows(2).any(|w| w[0] >= w[1]) || self.widths[0] == 0 {
            return Err(Error::InvalidArgument(format!(
                "text widths must be positive and strictly ascending, got {:?}",
                self.widths
            )));
        }
        if *self.widths.last().unwrap() > self.max_len {
            return Err(Error::InvalidArgument(format!(
                "widest window {} exceeds max length {}",
                self.widths.last().unwrap(),
                self.max_len
            )));
        }
        Ok(())
    }
}

/// Filters of one window width: `weight` is `[F × width·k]`, `bias` is `[F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank<T> {
    pub width: usize,
    pub weight: T,
    pub bias: T,
}

/// Learnable parameters of the text branch, one bank per window width.
#[derive(Clone, Debug, PartialEq)]
pub struct TextBranch<T> {
    pub banks: Vec<FilterBank<T>>,
}

impl<T> TextBranch<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> TextBranch<U> {
        TextBranch {
            banks: self
                .banks
                .iter()
                .map(|b| FilterBank {
                    width: b.width,
                    weight: f(&format!("{prefix}.w{}.weight", b.width), &b.weight),
                    bias: f(&format!("{prefix}.w{}.bias", b.width), &b.bias),
                })
                .collect(),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        for b in &mut self.banks {
            f(&format!("{prefix}.w{}.weight", b.width), &mut b.weight);
            f(&format!("{prefix}.w{}.bias", b.width), &mut b.bias);
        }
    }
}

impl TextBranch<Tensor> {
    /// Glorot-uniform filters, zero biases.
    pub fn init(cfg: &TextConfig, rng: &mut impl Rng) -> Self {
        let f = cfg.filters_per_width;
        let k = cfg.embed_dim;
        let banks = cfg
            .widths
            .iter()
            .map(|&h| FilterBank {
                width: h,
                weight: glorot_uniform(&[f, h * k], h * k, f * h * k, rng),
                bias: Tensor::zeros(&[f]),
            })
            .collect();
        Self { banks }
    }

    pub fn zeros(cfg: &TextConfig) -> Self {
        let f = cfg.filters_per_width;
        Self {
            banks: cfg
                .widths
                .iter()
                .map(|&h| FilterBank {
                    width: h,
                    weight: Tensor::zeros(&[f, h * cfg.embed_dim]),
                    bias: Tensor::zeros(&[f]),
                })
                .collect(),
        }
    }
}

/// Records the feature maps of one bank: `[F × L]` where `L = n − h + 1`
/// over the true length `n`, or one padded window when `n < h`.
fn record_feature_maps(
    graph: &mut Graph,
    sentence: &SentenceMatrix,
    bank: &FilterBank<Var>,
    nonlinearity: Nonlinearity,
) -> Result<Var> {
    let h = bank.width;
    let k = sentence.dim();
    let weight_shape = graph.value(bank.weight).shape().to_vec();
    let filters = weight_shape[0];
    if weight_shape != [filters, h * k] || graph.value(bank.bias).shape() != [filters] {
        return Err(Error::shape(
            "text filters",
            format!(
                "width {h} expects weight [F, {}] and bias [F], got {:?} and {:?}",
                h * k,
                weight_shape,
                graph.value(bank.bias).shape()
            ),
        ));
    }
    if h > sentence.max_len() {
        return Err(Error::shape(
            "text filters",
            format!("window {h} exceeds sentence capacity {}", sentence.max_len()),
        ));
    }
    let rows = sentence.len().max(h);
    let input = Tensor::new(vec![1, rows, k], sentence.leading_rows(rows).to_vec())?;
    let input = graph.constant(input);
    let kernel = graph.reshape(bank.weight, &[filters, 1, h, k])?;
    let conv = graph.conv2d(input, kernel, bank.bias, 1, 0)?;
    let activated = nonlinearity.record(graph, conv);
    graph.reshape(activated, &[filters, rows - h + 1])
}

/// The textual representation: `[max, mean, min]` of every filter's feature
/// map, concatenated by ascending width and then by filter index.
///
/// Word vectors enter the graph as constants, so they never receive gradient.
pub fn encode_text(
    graph: &mut Graph,
    sentence: &SentenceMatrix,
    branch: &TextBranch<Var>,
    cfg: &TextConfig,
) -> Result<Var> {
    if sentence.dim() != cfg.embed_dim {
        return Err(Error::shape(
            "encode_text",
            format!(
                "sentence dimension {} does not match configured {}",
                sentence.dim(),
                cfg.embed_dim
            ),
        ));
    }
    let pooled = branch
        .banks
        .iter()
        .map(|bank| {
            let maps = record_feature_maps(graph, sentence, bank, cfg.nonlinearity)?;
            graph.triple_pool(maps)
        })
        .collect::<Result<Vec<_>>>()?;
    graph.concat(&pooled, 0)
}

/// Feature maps `c` for every filter (ascending width, then filter index).
pub fn text_feature_maps(
    sentence: &SentenceMatrix,
    branch: &TextBranch<Tensor>,
    nonlinearity: Nonlinearity,
) -> Result<Vec<Vec<f64>>> {
    let mut graph = Graph::new();
    let bound = branch.map("text", &mut |_, t| graph.constant(t.clone()));
    let mut maps = Vec::new();
    for bank in &bound.banks {
        let v = record_feature_maps(&mut graph, sentence, bank, nonlinearity)?;
        let t = graph.value(v);
        let len = t.shape()[1];
        maps.extend(t.data().chunks(len).map(<[f64]>::to_vec));
    }
    Ok(maps)
}

/// `[max(c), mean(c), min(c)]`.
pub fn triple_pool(c: &[f64]) -> Result<[f64; 3]> {
    if c.is_empty() {
        return Err(Error::InvalidArgument("triple_pool of an empty feature map".into()));
    }
    let max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = c.iter().copied().fold(f64::INFINITY, f64::min);
    Ok([max, bounded_mean(c, min, max), min])
}
