//! Image branch: resizing and normalisation, and the five-layer
//! convolutional stack whose last pooled output is the visual representation.

mod config;
mod encoder;
mod preprocess;

pub use config::{ConvLayerSpec, ConvStackConfig, PoolSpec, NUM_CONV_LAYERS};
pub use encoder::{encode_image, ConvLayer, ImageBranch};
pub use preprocess::{preprocess_image, resize_bilinear, ImageTensor, RgbImage};
