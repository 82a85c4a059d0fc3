use rand::Rng;

use super::config::ConvStackConfig;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::init::glorot_uniform;
use crate::tensor::Tensor;

/// One convolutional layer: `kernel` is `[C_out × C_in × k × k]`, `bias` is `[C_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub kernel: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBranch<T> {
    pub layers: Vec<ConvLayer<T>>,
}

impl<T> ImageBranch<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> ImageBranch<U> {
        ImageBranch {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| ConvLayer {
                    kernel: f(&format!("{prefix}.conv{}.kernel", i + 1), &l.kernel),
                    bias: f(&format!("{prefix}.conv{}.bias", i + 1), &l.bias),
                })
                .collect(),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("{prefix}.conv{}.kernel", i + 1), &mut l.kernel);
            f(&format!("{prefix}.conv{}.bias", i + 1), &mut l.bias);
        }
    }
}

impl ImageBranch<Tensor> {
    pub fn init(cfg: &ConvStackConfig, rng: &mut impl Rng) -> Self {
        let layers = cfg
            .layers
            .iter()
            .zip(cfg.in_channels())
            .map(|(l, c_in)| {
                let area = l.kernel * l.kernel;
                ConvLayer {
                    kernel: glorot_uniform(
                        &[l.out_channels, c_in, l.kernel, l.kernel],
                        c_in * area,
                        l.out_channels * area,
                        rng,
                    ),
                    bias: Tensor::zeros(&[l.out_channels]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(cfg: &ConvStackConfig) -> Self {
        let layers = cfg
            .layers
            .iter()
            .zip(cfg.in_channels())
            .map(|(l, c_in)| ConvLayer {
                kernel: Tensor::zeros(&[l.out_channels, c_in, l.kernel, l.kernel]),
                bias: Tensor::zeros(&[l.out_channels]),
            })
            .collect();
        Self { layers }
    }
}

/// Runs conv → ReLU → optional LRN → optional max pool for each layer and
/// flattens the final pooled output into the visual representation.
pub fn encode_image(
    graph: &mut Graph,
    image: Var,
    branch: &ImageBranch<Var>,
    cfg: &ConvStackConfig,
) -> Result<Var> {
    if branch.layers.len() != cfg.layers.len() {
        return Err(Error::shape(
            "encode_image",
            format!(
                "{} parameter layers for {} configured layers",
                branch.layers.len(),
                cfg.layers.len()
            ),
        ));
    }
    let mut x = image;
    for (i, (spec, layer)) in cfg.layers.iter().zip(&branch.layers).enumerate() {
        let in_layer = |e: Error| match e {
            Error::Shape { detail, .. } => Error::Shape {
                op: "image layer",
                detail: format!("layer {}: {detail}", i + 1),
            },
            other => other,
        };
        let expected = [spec.out_channels, graph.value(x).shape()[0], spec.kernel, spec.kernel];
        if graph.value(layer.kernel).shape() != expected {
            return Err(in_layer(Error::shape(
                "conv2d",
                format!(
                    "kernel {:?} does not match configured {expected:?}",
                    graph.value(layer.kernel).shape()
                ),
            )));
        }
        x = graph
            .conv2d(x, layer.kernel, layer.bias, spec.stride, spec.pad)
            .map_err(in_layer)?;
        x = graph.relu(x);
        if spec.lrn {
            x = graph.lrn(x, cfg.lrn).map_err(in_layer)?;
        }
        if let Some(pool) = spec.pool {
            x = graph.maxpool2d(x, pool.window, pool.stride).map_err(in_layer)?;
        }
    }
    graph.flatten(x)
}
