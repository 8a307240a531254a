//! Confusion matrices, pixel accuracy and per-variant evaluation.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{contract, Error, Result};
use crate::labels::{LabelMap, IGNORE_LABEL};
use crate::model::{SegModel, Variant};

mod report;

pub use report::{
    emit_report, format_percent, read_confusion_csv, read_summary_csv, summary_row, svg_cells,
    SummaryRow, SUMMARY_FILE,
};

/// `counts[i * k + j]` = pixels of true class `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            k: num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        contract!(
            counts.len() == num_classes * num_classes,
            "{} counts for {num_classes} classes",
            counts.len()
        );
        Ok(ConfusionMatrix {
            k: num_classes,
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one count per pixel whose truth is not [`IGNORE_LABEL`].
    pub fn accumulate(&mut self, truth: &LabelMap, pred: &LabelMap) -> Result<()> {
        contract!(
            (truth.n, truth.h, truth.w) == (pred.n, pred.h, pred.w),
            "label maps differ in size: {}x{}x{} vs {}x{}x{}",
            truth.n,
            truth.h,
            truth.w,
            pred.n,
            pred.h,
            pred.w
        );
        let k = self.k;
        for (&t, &p) in truth.data.iter().zip(&pred.data) {
            if t == IGNORE_LABEL {
                continue;
            }
            contract!((p as usize) < k, "prediction {p} outside {k} classes");
            if t as usize >= k {
                return Err(Error::Data(format!("label {t} outside {k} classes")));
            }
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        contract!(self.k == other.k, "merging {} and {} classes", self.k, other.k);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Data("confusion matrix is empty".into()));
        }
        let diag: u64 = (0..self.k).map(|i| self.get(i, i)).sum();
        Ok(diag as f64 / total as f64)
    }

    fn row_total(&self, i: usize) -> u64 {
        self.counts[i * self.k..(i + 1) * self.k].iter().sum()
    }

    /// Recall per true class; `None` for classes that never occur.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|i| {
                let r = self.row_total(i);
                (r > 0).then(|| self.get(i, i) as f64 / r as f64)
            })
            .collect()
    }

    pub fn row_normalized(&self) -> Vec<Option<Vec<f64>>> {
        (0..self.k)
            .map(|i| {
                let r = self.row_total(i);
                (r > 0).then(|| (0..self.k).map(|j| self.get(i, j) as f64 / r as f64).collect())
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub variant: Variant,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
}

impl EvalResult {
    pub fn from_confusion(variant: Variant, confusion: ConfusionMatrix) -> Result<Self> {
        Ok(EvalResult {
            variant,
            accuracy: confusion.pixel_accuracy()?,
            per_class: confusion.per_class_accuracy(),
            confusion,
        })
    }
}

/// Scores `model` on every frame of `data`. Recurrent heads start each
/// sequence from zero state and run through it without truncation.
pub fn evaluate_model(model: &SegModel, data: &Dataset) -> Result<EvalResult> {
    if data.num_classes != model.num_classes() {
        return Err(Error::Incompatible(format!(
            "dataset has {} classes, model predicts {}",
            data.num_classes,
            model.num_classes()
        )));
    }
    let k = data.num_classes;
    let parts: Vec<Result<ConfusionMatrix>> = data
        .sequences
        .par_iter()
        .map(|seq| {
            let images: Vec<_> = seq.frames.iter().map(|f| &f.image).collect();
            let preds = model.predict_sequence(&images)?;
            let mut cm = ConfusionMatrix::new(k);
            for (f, p) in seq.frames.iter().zip(&preds) {
                cm.accumulate(&f.labels, p)?;
            }
            Ok(cm)
        })
        .collect();
    let mut cm = ConfusionMatrix::new(k);
    for p in parts {
        cm.merge(&p?)?;
    }
    EvalResult::from_confusion(model.variant(), cm)
}

#[cfg(test)]
mod tests;
