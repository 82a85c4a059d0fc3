use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::history::{EpochRecord, StepRecord, TrainHistory};
use super::metrics::{evaluate, MetricsReport};
use super::optim::{lr_at_step, round_to_f32, sgd_step, Optimizer, Precision};
use crate::error::{Error, Result};
use crate::model::{Example, FusionModel};
use crate::text::EmbeddingTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub decay_base: f64,
    /// Steps between learning-rate decays.
    pub decay_every: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            initial_lr: 1e-4,
            decay_base: 0.96,
            decay_every: 3000,
            epochs: 10,
            seed: 0,
            optimizer: Optimizer::Sgd,
            precision: Precision::Narrow,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::InvalidArgument("initial_lr must be positive".into()));
        }
        if !(self.decay_base > 0.0 && self.decay_base <= 1.0) {
            return Err(Error::InvalidArgument("decay_base must lie in (0, 1]".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidArgument("decay_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub final_model: FusionModel,
    /// Model after the epoch with the best held-out accuracy (training
    /// accuracy when no held-out set is given). Earlier epochs win ties.
    pub best_model: FusionModel,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub history: TrainHistory,
}

/// Trains `model` for `cfg.epochs` epochs of seeded, shuffled mini-batches.
///
/// Each step computes the mean batch gradient and applies one SGD update at
/// `lr_at_step(step)`. After each epoch the model is evaluated on the training
/// set and, when given, on `test`.
pub fn train(
    model: &FusionModel,
    train_set: &[Example],
    test: Option<&[Example]>,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut current = model.clone();
    if cfg.precision == Precision::Narrow {
        round_to_f32(&mut current.params);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(usize, f64, FusionModel)> = None;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, grads) = current.batch_gradients(&batch, table)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, loss });
            }
            let lr = lr_at_step(step, cfg);
            match cfg.optimizer {
                Optimizer::Sgd => sgd_step(&mut current.params, &grads, lr)?,
            }
            if cfg.precision == Precision::Narrow {
                round_to_f32(&mut current.params);
            }
            if !current.params.is_finite() {
                return Err(Error::NonFiniteLoss { step, loss });
            }
            history.steps.push(StepRecord { step, lr, loss });
            step += 1;
        }

        let train_metrics = evaluate(&current, train_set, table)?;
        history.epochs.push(EpochRecord {
            epoch,
            split: "train".into(),
            metrics: train_metrics,
        });
        let mut selection: MetricsReport = train_metrics;
        if let Some(test) = test.filter(|t| !t.is_empty()) {
            let m = evaluate(&current, test, table)?;
            history.epochs.push(EpochRecord {
                epoch,
                split: "test".into(),
                metrics: m,
            });
            selection = m;
        }
        if best.as_ref().is_none_or(|(_, acc, _)| selection.accuracy > *acc) {
            best = Some((epoch, selection.accuracy, current.clone()));
        }
    }

    let (best_epoch, best_accuracy, best_model) =
        best.unwrap_or_else(|| (0, f64::NAN, current.clone()));
    Ok(TrainOutput {
        final_model: current,
        best_model,
        best_epoch,
        best_accuracy,
        history,
    })
}
