use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::FusionParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
}

/// Storage precision of parameters between steps. Arithmetic is always `f64`;
/// `Narrow` rounds parameters to `f32` after every update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Narrow,
    Wide,
}

/// Staircase decay: `initial_lr · decay_base^⌊step / decay_every⌋`.
pub fn lr_at_step(step: usize, cfg: &TrainConfig) -> f64 {
    let exponent = (step / cfg.decay_every.max(1)) as i32;
    cfg.initial_lr * cfg.decay_base.powi(exponent)
}

/// `p ← p − lr·g` for every tensor.
pub fn sgd_step(
    params: &mut FusionParams<Tensor>,
    grads: &FusionParams<Tensor>,
    lr: f64,
) -> Result<()> {
    let mut flat = Vec::new();
    grads.for_each(&mut |name, g| flat.push((name.to_owned(), g.clone())));
    let mut flat = flat.into_iter();
    let mut error = None;
    params.for_each_mut(&mut |name, p| {
        if error.is_some() {
            return;
        }
        match flat.next() {
            Some((gname, g)) if gname == name && g.shape() == p.shape() => {
                for (v, d) in p.data_mut().iter_mut().zip(g.data()) {
                    *v -= lr * d;
                }
            }
            Some((gname, g)) => {
                error = Some(Error::shape(
                    "sgd_step",
                    format!(
                        "parameter `{name}` {:?} paired with gradient `{gname}` {:?}",
                        p.shape(),
                        g.shape()
                    ),
                ));
            }
            None => error = Some(Error::MissingTensor(name.to_owned())),
        }
    });
    match (error, flat.next()) {
        (Some(e), _) => Err(e),
        (None, Some((extra, _))) => Err(Error::shape(
            "sgd_step",
            format!("gradient `{extra}` has no matching parameter"),
        )),
        (None, None) => Ok(()),
    }
}

pub fn round_to_f32(params: &mut FusionParams<Tensor>) {
    params.for_each_mut(&mut |_, t| {
        for v in t.data_mut() {
            *v = f64::from(*v as f32);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FusionParams, ModelConfig};

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn schedule_is_a_staircase() {
        let c = cfg();
        assert_eq!(lr_at_step(0, &c), 1e-4);
        assert_eq!(lr_at_step(2999, &c), 1e-4);
        assert_eq!(lr_at_step(3000, &c), 1e-4 * 0.96);
        assert_eq!(lr_at_step(6000, &c), 1e-4 * 0.96 * 0.96);
        assert!((lr_at_step(6000, &c) - 9.216e-5).abs() < 1e-20);
    }

    #[test]
    fn schedule_is_nonincreasing() {
        let c = cfg();
        let mut prev = f64::INFINITY;
        for step in (0..100_000).step_by(500) {
            let lr = lr_at_step(step, &c);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    fn single(v: f64) -> (FusionParams<Tensor>, FusionParams<Tensor>) {
        let mc = ModelConfig::tiny();
        let p = FusionParams::zeros(&mc).unwrap();
        let mut params = p.clone();
        params.for_each_mut(&mut |_, t| t.data_mut().fill(1.0));
        let mut grads = p;
        grads.for_each_mut(&mut |_, t| t.data_mut().fill(v));
        (params, grads)
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let (mut p, g) = single(2.0);
        let before = p.clone();
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn plain_update_arithmetic() {
        let (mut p, g) = single(2.0);
        sgd_step(&mut p, &g, 0.1).unwrap();
        p.for_each(&mut |_, t| assert!(t.data().iter().all(|&v| v == 1.0 - 0.1 * 2.0)));
        assert!((p.head.layers[0].bias.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn two_half_steps_equal_one_full_step() {
        let (mut a, g) = single(0.37);
        let mut b = a.clone();
        sgd_step(&mut a, &g, 0.5).unwrap();
        sgd_step(&mut b, &g, 0.25).unwrap();
        sgd_step(&mut b, &g, 0.25).unwrap();
        a.for_each(&mut |_, t| assert!(t.data().iter().all(|&v| (v - (1.0 - 0.5 * 0.37)).abs() < 1e-15)));
        b.for_each(&mut |_, t| assert!(t.data().iter().all(|&v| (v - (1.0 - 0.5 * 0.37)).abs() < 1e-15)));
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let (mut p, _) = single(0.0);
        let other = FusionParams::zeros(&ModelConfig::tiny().with_modality(crate::model::Modality::TextOnly)).unwrap();
        assert!(sgd_step(&mut p, &other, 0.1).is_err());
    }
}
