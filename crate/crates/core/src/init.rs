use rand::Rng;

use crate::tensor::Tensor;

/// Uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
///
/// Values are rounded to `f32` so that freshly initialised parameters
/// survive a checkpoint round-trip unchanged.
pub(crate) fn glorot_uniform(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| f64::from(rng.gen_range(-a..=a) as f32))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and length agree")
}
