use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Example, FusionModel};
use crate::text::EmbeddingTable;

/// Binary confusion counts with label 1 as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut c = Self::default();
        for (predicted, actual) in pairs {
            match (predicted == 1, actual == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Precision, recall, F1 and accuracy. A metric with a zero denominator is
/// reported as 0 and flagged as undefined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub f1_defined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

impl MetricsReport {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let (precision, precision_defined) = ratio(counts.tp, counts.tp + counts.fp);
        let (recall, recall_defined) = ratio(counts.tp, counts.tp + counts.fn_);
        let f1_defined = precision_defined && recall_defined && precision + recall > 0.0;
        let f1 = if f1_defined {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let (accuracy, _) = ratio(counts.tp + counts.tn, counts.total());
        Self {
            counts,
            precision,
            recall,
            f1,
            accuracy,
            precision_defined,
            recall_defined,
            f1_defined,
        }
    }

    /// `Prec. Rec. F1 Acc.` to three decimals.
    pub fn table_row(&self) -> String {
        format!(
            "{:.3} {:.3} {:.3} {:.3}",
            self.precision, self.recall, self.f1, self.accuracy
        )
    }
}

/// Predicts every example and summarises against the true labels.
pub fn evaluate(
    model: &FusionModel,
    examples: &[Example],
    table: &EmbeddingTable,
) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let predictions = model.predict_all(examples, table)?;
    let counts = ConfusionCounts::from_pairs(
        predictions
            .iter()
            .zip(examples)
            .map(|(p, ex)| (p.label, ex.label)),
    );
    Ok(MetricsReport::from_counts(counts))
}
