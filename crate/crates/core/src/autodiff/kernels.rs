//! Raw numeric kernels shared by the graph operations. All buffers are
//! row-major and all accumulation is done in `f64`.

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let scale = a[i * k + p];
            if scale == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += scale * bv;
            }
        }
    }
}

/// `out[m×k] += c[m×n] · b[k×n]ᵀ`
pub(crate) fn gemm_a_bt_acc(m: usize, n: usize, k: usize, c: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let c_row = &c[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            out[i * k + p] += c_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · c[m×n]`
pub(crate) fn gemm_at_b_acc(m: usize, k: usize, n: usize, a: &[f64], c: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let c_row = &c[i * n..(i + 1) * n];
        for p in 0..k {
            let scale = a[i * k + p];
            if scale == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &cv) in out_row.iter_mut().zip(c_row) {
                *o += scale * cv;
            }
        }
    }
}

/// Geometry of a single-sample 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfold `input[C×H×W]` into columns `[C·kh·kw × H'·W']`; padded cells are zero.
pub(crate) fn im2col(g: &ConvGeometry, input: &[f64]) -> Vec<f64> {
    let positions = g.positions();
    let mut cols = vec![0.0; g.patch_len() * positions];
    for c in 0..g.channels {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + ki) as isize - g.pad as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let src_row = (c * g.height + y as usize) * g.width;
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride + kj) as isize - g.pad as isize;
                        if x >= 0 && x < g.width as isize {
                            dst[oy * g.out_w + ox] = input[src_row + x as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into an input-shaped buffer.
pub(crate) fn col2im_acc(g: &ConvGeometry, cols: &[f64], out: &mut [f64]) {
    let positions = g.positions();
    for c in 0..g.channels {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + ki) as isize - g.pad as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let dst_row = (c * g.height + y as usize) * g.width;
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride + kj) as isize - g.pad as isize;
                        if x >= 0 && x < g.width as isize {
                            out[dst_row + x as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Max pooling forward; returns values and the flat input index of each maximum.
/// Ties keep the first position in row-major order.
pub(crate) fn maxpool_forward(
    input: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let out_h = (height - window) / stride + 1;
    let out_w = (width - window) / stride + 1;
    let mut values = Vec::with_capacity(channels * out_h * out_w);
    let mut argmax = Vec::with_capacity(channels * out_h * out_w);
    for c in 0..channels {
        let plane = c * height * width;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best_idx = plane + (oy * stride) * width + ox * stride;
                let mut best = input[best_idx];
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = plane + (oy * stride + dy) * width + ox * stride + dx;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                values.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (values, argmax, out_h, out_w)
}

/// Cross-channel local response normalisation. Returns the output and the
/// per-element denominator base `k + alpha * Σ a²`.
pub(crate) fn lrn_forward(
    input: &[f64],
    channels: usize,
    plane: usize,
    radius: usize,
    k: f64,
    alpha: f64,
    beta: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; input.len()];
    let mut denom = vec![0.0; input.len()];
    for c in 0..channels {
        let lo = c.saturating_sub(radius);
        let hi = (c + radius).min(channels - 1);
        for p in 0..plane {
            let sum_sq: f64 = (lo..=hi).map(|j| input[j * plane + p].powi(2)).sum();
            let d = k + alpha * sum_sq;
            denom[c * plane + p] = d;
            out[c * plane + p] = input[c * plane + p] * d.powf(-beta);
        }
    }
    (out, denom)
}

pub(crate) fn lrn_backward_acc(
    input: &[f64],
    denom: &[f64],
    upstream: &[f64],
    channels: usize,
    plane: usize,
    radius: usize,
    alpha: f64,
    beta: f64,
    out: &mut [f64],
) {
    // t_c = g_c · a_c · d_c^(-β-1), shared by every neighbour of c.
    let t: Vec<f64> = (0..input.len())
        .map(|i| upstream[i] * input[i] * denom[i].powf(-beta - 1.0))
        .collect();
    for j in 0..channels {
        let lo = j.saturating_sub(radius);
        let hi = (j + radius).min(channels - 1);
        for p in 0..plane {
            let i = j * plane + p;
            let cross: f64 = (lo..=hi).map(|c| t[c * plane + p]).sum();
            out[i] += upstream[i] * denom[i].powf(-beta) - 2.0 * alpha * beta * input[i] * cross;
        }
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Returns `(max, log Σ exp(v − max))`. The dominant term is split off so
/// that `ln_1p` keeps precision when one logit dominates.
pub(crate) fn log_sum_exp_shifted(logits: &[f64]) -> (f64, f64) {
    let (top, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    (max, rest.ln_1p())
}

/// Mean of `row` accumulated relative to its minimum and clamped to
/// `[min, max]`, so constant rows give their value exactly and rounding never
/// breaks `min ≤ mean ≤ max`.
pub(crate) fn bounded_mean(row: &[f64], min: f64, max: f64) -> f64 {
    let excess: f64 = row.iter().map(|v| v - min).sum();
    (min + excess / row.len() as f64).clamp(min, max)
}
