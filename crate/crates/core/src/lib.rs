//! Deep fusion convolutional network for joint visual-textual sentiment
//! classification.
//!
//! An image branch (five convolutional layers with ReLU, local response
//! normalisation and max pooling) and a text branch (multi-width windowed
//! convolution over frozen word vectors followed by max/mean/min pooling) are
//! concatenated into one fused feature vector. Three fully-connected layers
//! and a two-way softmax turn it into a sentiment distribution, trained with
//! cross-entropy by mini-batch SGD.
//!
//! Everything runs on the small reverse-mode engine in [`autodiff`].

pub mod autodiff;
pub mod data;
pub mod error;
pub mod image;
pub mod model;
pub mod suite;
mod init;
pub mod text;
pub mod train;
pub mod tensor;

pub use autodiff::{grad_check, GradCheckReport, Graph, LrnParams, Var};
pub use data::{Checkpoint, Manifest, Sample};
pub use error::{Error, Result};
pub use image::{ConvStackConfig, ImageTensor, RgbImage};
pub use model::{Example, FusionModel, FusionParams, Modality, ModelConfig, Prediction};
pub use tensor::Tensor;
pub use text::{EmbeddingTable, TextConfig};
pub use train::{MetricsReport, Precision, TrainConfig, TrainHistory};
