use std::fmt::Write as _;
use std::path::Path;

use super::MetricsReport;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub metrics: MetricsReport,
}

/// Per-step losses and per-epoch evaluations of one training run.
///
/// Serialised as two CSV tables separated by a blank line: `step,lr,loss`
/// followed by `epoch,split,precision,recall,f1,accuracy`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

const STEP_HEADER: &str = "step,lr,loss";
const EPOCH_HEADER: &str = "epoch,split,precision,recall,f1,accuracy";

/// One parsed row of the epoch table.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl TrainHistory {
    /// Mean step loss within each epoch, given the steps per epoch.
    pub fn epoch_mean_losses(&self, steps_per_epoch: usize) -> Vec<f64> {
        self.steps
            .chunks(steps_per_epoch.max(1))
            .map(|c| c.iter().map(|s| s.loss).sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(STEP_HEADER);
        out.push('\n');
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{}", s.step, s.lr, s.loss);
        }
        out.push('\n');
        out.push_str(EPOCH_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let m = &e.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch, e.split, m.precision, m.recall, m.f1, m.accuracy
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses the CSV written by [`TrainHistory::to_csv`]; metrics come back
    /// as plain rows since confusion counts are not stored.
    pub fn parse_csv(text: &str, path: &Path) -> Result<(Vec<StepRecord>, Vec<EpochRow>)> {
        let parse_err = |line: usize, detail: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut steps = Vec::new();
        let mut epochs = Vec::new();
        let mut section = None;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == STEP_HEADER || line == EPOCH_HEADER {
                section = Some(line == STEP_HEADER);
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| parse_err(lineno, format!("bad number `{s}`: {e}")))
            };
            let int = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .map_err(|e| parse_err(lineno, format!("bad integer `{s}`: {e}")))
            };
            match section {
                Some(true) if fields.len() == 3 => steps.push(StepRecord {
                    step: int(fields[0])?,
                    lr: num(fields[1])?,
                    loss: num(fields[2])?,
                }),
                Some(false) if fields.len() == 6 => epochs.push(EpochRow {
                    epoch: int(fields[0])?,
                    split: fields[1].to_owned(),
                    precision: num(fields[2])?,
                    recall: num(fields[3])?,
                    f1: num(fields[4])?,
                    accuracy: num(fields[5])?,
                }),
                Some(_) => {
                    return Err(parse_err(lineno, format!("unexpected field count {}", fields.len())))
                }
                None => return Err(parse_err(lineno, "data before a header line".into())),
            }
        }
        Ok((steps, epochs))
    }
}
