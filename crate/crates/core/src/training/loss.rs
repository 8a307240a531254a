use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_LABEL};
use crate::tensor::Tensor4;

/// Per-class loss weights. Zero marks a class absent from the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights(vec![1.0; num_classes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Median frequency balancing: `w_c = median(f) / f_c` with `f_c` the pixel
/// frequency of class `c`. The median runs over classes with a non-zero
/// count (mean of the middle two for an even number of them); absent classes
/// get weight 0.
pub fn median_frequency_weights(counts: &[u64]) -> Result<ClassWeights> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Data(
            "median frequency weights need at least one labelled pixel".into(),
        ));
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let mut present: Vec<f64> = freq.iter().copied().filter(|&f| f > 0.0).collect();
    present.sort_by(f64::total_cmp);
    let m = present.len();
    let median = if m % 2 == 1 {
        present[m / 2]
    } else {
        0.5 * (present[m / 2 - 1] + present[m / 2])
    };
    Ok(ClassWeights(
        freq.iter()
            .map(|&f| if f > 0.0 { median / f } else { 0.0 })
            .collect(),
    ))
}

/// `-(1/N) Σ w_y log softmax(z)_y` over non-ignore pixels, `N` their count.
/// Returns the loss and its gradient with respect to `logits`.
pub fn weighted_cross_entropy(
    logits: &Tensor4,
    labels: &LabelMap,
    weights: &ClassWeights,
) -> Result<(f64, Tensor4)> {
    let d = logits.dims();
    if labels.n != d.n || labels.h != d.h || labels.w != d.w {
        return Err(Error::Contract(format!(
            "labels {}x{}x{} do not match logits {d}",
            labels.n, labels.h, labels.w
        )));
    }
    if weights.len() != d.c {
        return Err(Error::Contract(format!(
            "{} class weights for {} classes",
            weights.len(),
            d.c
        )));
    }
    let plane = d.plane();
    let valid = labels.data.iter().filter(|&&l| l != IGNORE_LABEL).count();
    let mut grad = Tensor4::zeros(d);
    if valid == 0 {
        return Ok((0.0, grad));
    }
    let inv_n = 1.0 / valid as f64;
    let mut loss = 0.0;
    let mut p = vec![0.0; d.c];
    for n in 0..d.n {
        for i in 0..plane {
            let y = labels.data[n * plane + i];
            if y == IGNORE_LABEL {
                continue;
            }
            let y = y as usize;
            if y >= d.c {
                return Err(Error::Data(format!(
                    "label {y} out of range for {} classes",
                    d.c
                )));
            }
            let w = weights.0[y];
            if w == 0.0 {
                continue;
            }
            let z = |c: usize| logits.data()[(n * d.c + c) * plane + i];
            let zmax = (0..d.c).map(z).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, pc) in p.iter_mut().enumerate() {
                *pc = (z(c) - zmax).exp();
                sum += *pc;
            }
            loss -= w * (z(y) - zmax - sum.ln());
            let g = grad.data_mut();
            for (c, pc) in p.iter().enumerate() {
                let target = if c == y { 1.0 } else { 0.0 };
                g[(n * d.c + c) * plane + i] = w * inv_n * (pc / sum - target);
            }
        }
    }
    Ok((loss * inv_n, grad))
}
