use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded 8-bit RGB pixels, row-major and interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "{width}×{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Mean of all channel values scaled to `[0, 1]`.
    pub fn mean_brightness(&self) -> f64 {
        let total: u64 = self.pixels.iter().map(|&p| u64::from(p)).sum();
        total as f64 / (self.pixels.len() as f64 * 255.0)
    }

    /// Per-channel means scaled to `[0, 1]`.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sums = [0u64; 3];
        for px in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += u64::from(px[c]);
            }
        }
        let n = (self.width * self.height) as f64 * 255.0;
        sums.map(|s| s as f64 / n)
    }
}

/// A normalised `3 × S × S` channel-first image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn side(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Bilinear resampling of one `height × width` plane with pixel-centre
/// alignment; source coordinates are clamped at the borders.
pub fn resize_bilinear(
    plane: &[f64],
    width: usize,
    height: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let scale = src_len as f64 / dst_len as f64;
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let (y0, y1, ty) = axis(oy, height, out_h);
        for ox in 0..out_w {
            let (x0, x1, tx) = axis(ox, width, out_w);
            let top = plane[y0 * width + x0] * (1.0 - tx) + plane[y0 * width + x1] * tx;
            let bottom = plane[y1 * width + x0] * (1.0 - tx) + plane[y1 * width + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Resizes to `side × side`, scales to `[0, 1]` and subtracts `channel_mean`.
pub fn preprocess_image(raw: &RgbImage, side: usize, channel_mean: [f64; 3]) -> Result<ImageTensor> {
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::InvalidArgument("cannot preprocess an empty image".into()));
    }
    if side == 0 {
        return Err(Error::InvalidArgument("target side must be positive".into()));
    }
    let mut data = Vec::with_capacity(3 * side * side);
    for (c, mean) in channel_mean.iter().enumerate() {
        let plane: Vec<f64> = raw
            .pixels
            .chunks_exact(3)
            .map(|px| f64::from(px[c]) / 255.0)
            .collect();
        let resized = if raw.width == side && raw.height == side {
            plane
        } else {
            resize_bilinear(&plane, raw.width, raw.height, side, side)
        };
        data.extend(resized.into_iter().map(|v| v - mean));
    }
    Ok(ImageTensor(Tensor::new(vec![3, side, side], data)?))
}
