use serde::{Deserialize, Serialize};

use crate::autodiff::LrnParams;
use crate::error::{Error, Result};

pub const NUM_CONV_LAYERS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub lrn: bool,
    pub pool: Option<PoolSpec>,
}

/// Layer layout of the convolutional stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvStackConfig {
    pub preset: String,
    pub input_side: usize,
    pub layers: Vec<ConvLayerSpec>,
    pub lrn: LrnParams,
    /// Per-channel mean subtracted after scaling pixels to `[0, 1]`.
    pub channel_mean: [f64; 3],
}

const fn layer(
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    lrn: bool,
    pool: Option<PoolSpec>,
) -> ConvLayerSpec {
    ConvLayerSpec {
        out_channels,
        kernel,
        stride,
        pad,
        lrn,
        pool,
    }
}

impl ConvStackConfig {
    /// 224×224 input, 96/256/384/384/256 channels, kernels 11/5/3/3/3,
    /// overlapping 3/2 pooling after layers 1, 2 and 5. Output 256×6×6.
    pub fn full() -> Self {
        let pool = Some(PoolSpec {
            window: 3,
            stride: 2,
        });
        Self {
            preset: "full".into(),
            input_side: 224,
            layers: vec![
                layer(96, 11, 4, 2, true, pool),
                layer(256, 5, 1, 2, true, pool),
                layer(384, 3, 1, 1, false, None),
                layer(384, 3, 1, 1, false, None),
                layer(256, 3, 1, 1, false, pool),
            ],
            lrn: LrnParams::default(),
            channel_mean: [0.5; 3],
        }
    }

    /// 16×16 input, 4/4/8/8/8 channels of 3×3 kernels, 2/2 pooling after
    /// layers 1, 2 and 5. Output 8×2×2.
    pub fn tiny() -> Self {
        let pool = Some(PoolSpec {
            window: 2,
            stride: 2,
        });
        Self {
            preset: "tiny".into(),
            input_side: 16,
            layers: vec![
                layer(4, 3, 1, 1, true, pool),
                layer(4, 3, 1, 1, true, pool),
                layer(8, 3, 1, 1, false, None),
                layer(8, 3, 1, 1, false, None),
                layer(8, 3, 1, 1, false, pool),
            ],
            lrn: LrnParams::default(),
            channel_mean: [0.5; 3],
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

    /// Input channel count of each layer.
    pub fn in_channels(&self) -> Vec<usize> {
        std::iter::once(3)
            .chain(self.layers.iter().map(|l| l.out_channels))
            .take(self.layers.len())
            .collect()
    }

    /// `(channels, height, width)` of every layer output, checking that each
    /// kernel and pooling window fits.
    pub fn layer_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut side = self.input_side;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.stride == 0 || l.out_channels == 0 {
                return Err(Error::InvalidArgument(format!(
                    "layer {}: kernel, stride and channels must be positive",
                    i + 1
                )));
            }
            if side + 2 * l.pad < l.kernel {
                return Err(Error::shape(
                    "image layer",
                    format!(
                        "layer {}: kernel {} exceeds padded input {}",
                        i + 1,
                        l.kernel,
                        side + 2 * l.pad
                    ),
                ));
            }
            side = (side + 2 * l.pad - l.kernel) / l.stride + 1;
            if let Some(p) = l.pool {
                if p.window == 0 || p.stride == 0 || side < p.window {
                    return Err(Error::shape(
                        "image layer",
                        format!("layer {}: pool window {} on side {side}", i + 1, p.window),
                    ));
                }
                side = (side - p.window) / p.stride + 1;
            }
            shapes.push([l.out_channels, side, side]);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != NUM_CONV_LAYERS {
            return Err(Error::InvalidArgument(format!(
                "the image stack has exactly {NUM_CONV_LAYERS} convolutional layers, got {}",
                self.layers.len()
            )));
        }
        if self.layers.last().is_some_and(|l| l.pool.is_none()) {
            return Err(Error::InvalidArgument(
                "the last convolutional layer must end in max pooling".into(),
            ));
        }
        self.layer_shapes().map(|_| ())
    }

    /// Length of the flattened visual representation.
    pub fn output_len(&self) -> Result<usize> {
        let shapes = self.layer_shapes()?;
        Ok(shapes.last().map_or(0, |s| s.iter().product()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_output_sizes() {
        assert_eq!(ConvStackConfig::full().output_len().unwrap(), 256 * 6 * 6);
        assert_eq!(ConvStackConfig::tiny().output_len().unwrap(), 8 * 2 * 2);
        assert_eq!(
            ConvStackConfig::full().layer_shapes().unwrap(),
            vec![[96, 27, 27], [256, 13, 13], [384, 13, 13], [384, 13, 13], [256, 6, 6]]
        );
    }

    #[test]
    fn requires_five_layers_ending_in_pool() {
        let mut cfg = ConvStackConfig::tiny();
        cfg.validate().unwrap();
        cfg.layers.pop();
        assert!(cfg.validate().is_err());

        let mut cfg = ConvStackConfig::tiny();
        cfg.layers[4].pool = None;
        assert!(cfg.validate().is_err());
    }
}
