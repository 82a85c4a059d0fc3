//! The fusion classifier: image and text representations are concatenated
//! (image block first) and passed through FC → ReLU → FC → ReLU → FC → softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::image::{encode_image, ConvStackConfig, ImageBranch, ImageTensor};
use crate::init::glorot_uniform;
use crate::tensor::Tensor;
use crate::text::{encode_text, EmbeddingTable, TextBranch, TextConfig};

pub const NUM_CLASSES: usize = 2;

/// Which branches feed the classifier head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Fused,
    ImageOnly,
    TextOnly,
}

impl Modality {
    pub fn uses_image(self) -> bool {
        matches!(self, Modality::Fused | Modality::ImageOnly)
    }

    pub fn uses_text(self) -> bool {
        matches!(self, Modality::Fused | Modality::TextOnly)
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Modality::Fused),
            "image-only" | "image" => Ok(Modality::ImageOnly),
            "text-only" | "text" => Ok(Modality::TextOnly),
            other => Err(Error::InvalidArgument(format!(
                "unknown modality `{other}` (expected fused, image-only or text-only)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub modality: Modality,
    pub image: ConvStackConfig,
    pub text: TextConfig,
    /// Output widths of FC1 and FC2; FC3 always produces the two logits.
    pub hidden: [usize; 2],
}

impl ModelConfig {
    pub fn full() -> Self {
        Self {
            modality: Modality::Fused,
            image: ConvStackConfig::full(),
            text: TextConfig::full(),
            hidden: [256, 64],
        }
    }

    pub fn tiny() -> Self {
        Self {
            modality: Modality::Fused,
            image: ConvStackConfig::tiny(),
            text: TextConfig::tiny(),
            hidden: [16, 8],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset `{other}` (expected `full` or `tiny`)"
            ))),
        }
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.modality.uses_image() {
            self.image.validate()?;
        }
        if self.modality.uses_text() {
            self.text.validate()?;
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Width of the fused vector, i.e. the FC1 input width.
    pub fn fused_len(&self) -> Result<usize> {
        let image = if self.modality.uses_image() {
            self.image.output_len()?
        } else {
            0
        };
        let text = if self.modality.uses_text() {
            self.text.output_len()
        } else {
            0
        };
        Ok(image + text)
    }

    fn fc_dims(&self) -> Result<[(usize, usize); 3]> {
        let [h1, h2] = self.hidden;
        Ok([(self.fused_len()?, h1), (h1, h2), (h2, NUM_CLASSES)])
    }
}

/// Fully-connected layer: `weight` is `[out × in]`, `bias` is `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head<T> {
    pub layers: Vec<Dense<T>>,
}

/// All learnable tensors of a model. Instantiated with [`Tensor`] for stored
/// parameters and gradients, and with [`Var`] once bound into a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<T> {
    pub image: Option<ImageBranch<T>>,
    pub text: Option<TextBranch<T>>,
    pub head: Head<T>,
}

impl<T> FusionParams<T> {
    /// Maps every tensor in canonical order, passing its qualified name.
    pub fn map<U>(&self, f: &mut dyn FnMut(&str, &T) -> U) -> FusionParams<U> {
        FusionParams {
            image: self.image.as_ref().map(|b| b.map("image", f)),
            text: self.text.as_ref().map(|b| b.map("text", f)),
            head: Head {
                layers: self
                    .head
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(i, d)| Dense {
                        weight: f(&format!("head.fc{}.weight", i + 1), &d.weight),
                        bias: f(&format!("head.fc{}.bias", i + 1), &d.bias),
                    })
                    .collect(),
            },
        }
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut T)) {
        if let Some(b) = self.image.as_mut() {
            b.for_each_mut("image", f);
        }
        if let Some(b) = self.text.as_mut() {
            b.for_each_mut("text", f);
        }
        for (i, d) in self.head.layers.iter_mut().enumerate() {
            f(&format!("head.fc{}.weight", i + 1), &mut d.weight);
            f(&format!("head.fc{}.bias", i + 1), &mut d.bias);
        }
    }

    pub fn for_each(&self, f: &mut dyn FnMut(&str, &T)) {
        self.map(&mut |name, t| f(name, t));
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each(&mut |n, _| names.push(n.to_owned()));
        names
    }

    /// Rebuilds the same structure from values yielded in canonical order.
    pub fn replace_with<U: Clone>(
        &self,
        values: impl IntoIterator<Item = U>,
    ) -> Result<FusionParams<U>> {
        let mut it = values.into_iter();
        let mut missing = None;
        let out = self.map(&mut |name, _| match it.next() {
            Some(v) => Some(v),
            None => {
                missing.get_or_insert_with(|| name.to_owned());
                None
            }
        });
        if let Some(name) = missing {
            return Err(Error::MissingTensor(name));
        }
        Ok(out.map(&mut |_, v| v.clone().expect("checked above")))
    }
}

impl FusionParams<Tensor> {
    /// Shapes every tensor must have for `cfg`, in canonical order.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            image: cfg
                .modality
                .uses_image()
                .then(|| ImageBranch::zeros(&cfg.image)),
            text: cfg.modality.uses_text().then(|| TextBranch::zeros(&cfg.text)),
            head: Head {
                layers: cfg
                    .fc_dims()?
                    .iter()
                    .map(|&(i, o)| Dense {
                        weight: Tensor::zeros(&[o, i]),
                        bias: Tensor::zeros(&[o]),
                    })
                    .collect(),
            },
        })
    }

    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = cfg
            .modality
            .uses_image()
            .then(|| ImageBranch::init(&cfg.image, &mut rng));
        let text = cfg
            .modality
            .uses_text()
            .then(|| TextBranch::init(&cfg.text, &mut rng));
        let layers = cfg
            .fc_dims()?
            .iter()
            .map(|&(i, o)| Dense {
                weight: glorot_uniform(&[o, i], i, o, &mut rng),
                bias: Tensor::zeros(&[o]),
            })
            .collect();
        Ok(Self {
            image,
            text,
            head: Head { layers },
        })
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, t| n += t.len());
        n
    }

    pub fn is_finite(&self) -> bool {
        let mut finite = true;
        self.for_each(&mut |_, t| finite &= t.is_finite());
        finite
    }

    /// Adds each leaf into `graph` as a differentiable parameter.
    pub fn bind(&self, graph: &mut Graph) -> FusionParams<Var> {
        self.map(&mut |_, t| graph.param(t.clone()))
    }

    /// L2 norm over every tensor whose name starts with `prefix`.
    pub fn norm_with_prefix(&self, prefix: &str) -> f64 {
        let mut sq = 0.0;
        self.for_each(&mut |name, t| {
            if name.starts_with(prefix) {
                sq += t.data().iter().map(|v| v * v).sum::<f64>();
            }
        });
        sq.sqrt()
    }
}

/// A preprocessed input pair with its label (0 negative, 1 positive).
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub image: ImageTensor,
    pub tokens: Vec<String>,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub p_neg: f64,
    pub p_pos: f64,
}

/// Concatenates the visual and textual representations, image block first.
pub fn fuse(graph: &mut Graph, visual: Var, textual: Var) -> Result<Var> {
    for (what, v) in [("visual", visual), ("textual", textual)] {
        if graph.value(v).ndim() != 1 {
            return Err(Error::shape(
                "fuse",
                format!(
                    "{what} representation must be one-dimensional, got {:?}",
                    graph.value(v).shape()
                ),
            ));
        }
    }
    graph.concat(&[visual, textual], 0)
}

/// FC1 → ReLU → FC2 → ReLU → FC3, returning the two class logits.
pub fn head_logits(graph: &mut Graph, x: Var, head: &Head<Var>) -> Result<Var> {
    let width = graph.value(x).len();
    let mut h = graph.reshape(x, &[width, 1])?;
    for (i, layer) in head.layers.iter().enumerate() {
        let expected = graph.value(layer.weight).shape()[1];
        let actual = graph.value(h).shape()[0];
        if expected != actual {
            return Err(Error::shape(
                "head",
                format!("fc{} expects width {expected}, got {actual}", i + 1),
            ));
        }
        let out = graph.value(layer.bias).len();
        let z = graph.matmul(layer.weight, h)?;
        let b = graph.reshape(layer.bias, &[out, 1])?;
        h = graph.add(z, b)?;
        if i + 1 < head.layers.len() {
            h = graph.relu(h);
        }
    }
    let n = graph.value(h).len();
    graph.reshape(h, &[n])
}

/// The class distribution `[p_neg, p_pos]` for a fused vector.
pub fn forward(graph: &mut Graph, x: Var, head: &Head<Var>) -> Result<Var> {
    let logits = head_logits(graph, x, head)?;
    graph.softmax(logits)
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub params: FusionParams<Tensor>,
}

impl FusionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = FusionParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let params = FusionParams::zeros(&config)?;
        Ok(Self { config, params })
    }

    /// Records the full pipeline for one example and returns the logits.
    pub fn logits(
        &self,
        graph: &mut Graph,
        bound: &FusionParams<Var>,
        example: &Example,
        table: &EmbeddingTable,
    ) -> Result<Var> {
        let cfg = &self.config;
        let visual = match &bound.image {
            Some(branch) => {
                if example.image.side() != cfg.image.input_side {
                    return Err(Error::shape(
                        "encode_image",
                        format!(
                            "image side {} does not match configured {}",
                            example.image.side(),
                            cfg.image.input_side
                        ),
                    ));
                }
                let img = graph.constant(example.image.tensor().clone());
                Some(encode_image(graph, img, branch, &cfg.image)?)
            }
            None => None,
        };
        let textual = match &bound.text {
            Some(branch) => {
                let sentence = table.embed_sentence(&example.tokens, cfg.text.max_len);
                Some(encode_text(graph, &sentence, branch, &cfg.text)?)
            }
            None => None,
        };
        let x = match (visual, textual) {
            (Some(v), Some(t)) => fuse(graph, v, t)?,
            (Some(v), None) => v,
            (None, Some(t)) => t,
            (None, None) => {
                return Err(Error::InvalidArgument("model has no input branch".into()))
            }
        };
        head_logits(graph, x, &bound.head)
    }

    /// Cross-entropy of one example.
    pub fn sample_loss(
        &self,
        graph: &mut Graph,
        bound: &FusionParams<Var>,
        example: &Example,
        table: &EmbeddingTable,
    ) -> Result<Var> {
        if example.label >= NUM_CLASSES {
            return Err(Error::Index {
                op: "sample_loss",
                index: example.label,
                size: NUM_CLASSES,
            });
        }
        let logits = self.logits(graph, bound, example, table)?;
        graph.softmax_cross_entropy(logits, example.label)
    }

    /// Mean cross-entropy over a non-empty batch, recorded in one graph.
    pub fn batch_loss(
        &self,
        graph: &mut Graph,
        bound: &FusionParams<Var>,
        batch: &[Example],
        table: &EmbeddingTable,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("batch_loss of an empty batch".into()));
        }
        let losses = batch
            .iter()
            .map(|ex| self.sample_loss(graph, bound, ex, table))
            .collect::<Result<Vec<_>>>()?;
        graph.mean(&losses)
    }

    /// Mean loss and mean parameter gradients over a batch.
    ///
    /// Examples are differentiated independently (in parallel) and summed in
    /// batch order, so the result does not depend on thread scheduling.
    pub fn batch_gradients(
        &self,
        batch: &[Example],
        table: &EmbeddingTable,
    ) -> Result<(f64, FusionParams<Tensor>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("batch_gradients of an empty batch".into()));
        }
        let per_example = batch
            .par_iter()
            .map(|ex| {
                let mut graph = Graph::new();
                let bound = self.params.bind(&mut graph);
                let loss = self.sample_loss(&mut graph, &bound, ex, table)?;
                graph.backward(loss)?;
                let value = graph.value(loss).data()[0];
                let grads = bound.map(&mut |_, v| graph.grad(*v).expect("bound as param").clone());
                Ok((value, grads))
            })
            .collect::<Result<Vec<_>>>()?;

        let scale = 1.0 / batch.len() as f64;
        let mut iter = per_example.into_iter();
        let (mut loss_sum, mut total) = iter.next().expect("non-empty batch");
        for (loss, grads) in iter {
            loss_sum += loss;
            let mut flat = Vec::new();
            grads.for_each(&mut |_, t| flat.push(t.clone()));
            let mut flat = flat.into_iter();
            total.for_each_mut(&mut |_, acc| {
                let g = flat.next().expect("same structure");
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v;
                }
            });
        }
        total.for_each_mut(&mut |_, t| t.data_mut().iter_mut().for_each(|v| *v *= scale));
        Ok((loss_sum * scale, total))
    }

    /// Most probable label; ties go to label 0.
    pub fn predict(&self, example: &Example, table: &EmbeddingTable) -> Result<Prediction> {
        let mut graph = Graph::new();
        let bound = self.params.map(&mut |_, t| graph.constant(t.clone()));
        let logits = self.logits(&mut graph, &bound, example, table)?;
        let probs = graph.softmax(logits)?;
        let p = graph.value(probs).data();
        let l = graph.value(logits).data();
        Ok(Prediction {
            label: usize::from(l[1] > l[0]),
            p_neg: p[0],
            p_pos: p[1],
        })
    }

    pub fn predict_all(&self, examples: &[Example], table: &EmbeddingTable) -> Result<Vec<Prediction>> {
        examples.par_iter().map(|ex| self.predict(ex, table)).collect()
    }
}
