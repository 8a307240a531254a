//! Batch normalization over `(n, h, w)` per channel.

use crate::error::{contract, Result};
use crate::tensor::{BatchNormParams, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Infer,
}

/// Values saved by the forward pass for the backward pass and for the
/// running-statistics update.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub phase: Phase,
    pub x_hat: Tensor4,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    /// Biased (divide-by-count) batch variance.
    pub batch_var: Vec<f64>,
    pub count: usize,
}

pub fn batch_norm_forward(
    input: &Tensor4,
    p: &BatchNormParams,
    phase: Phase,
) -> Result<(Tensor4, BnCache)> {
    let d = input.dims();
    contract!(
        d.c == p.channels(),
        "batchnorm: input has {} channels, params have {}",
        d.c,
        p.channels()
    );
    let count = d.n * d.plane();
    let mut mean = vec![0.0; d.c];
    let mut var = vec![0.0; d.c];
    if phase == Phase::Train {
        for c in 0..d.c {
            let s: f64 = (0..d.n).map(|n| input.plane(n, c).iter().sum::<f64>()).sum();
            let m = s / count as f64;
            let ss: f64 = (0..d.n)
                .map(|n| input.plane(n, c).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                .sum();
            mean[c] = m;
            var[c] = ss / count as f64;
        }
    }
    let (use_mean, use_var) = match phase {
        Phase::Train => (&mean, &var),
        Phase::Infer => (&p.running_mean, &p.running_var),
    };
    let inv_std: Vec<f64> = use_var.iter().map(|v| 1.0 / (v + p.eps).sqrt()).collect();
    let mut x_hat = Tensor4::zeros(d);
    let mut out = Tensor4::zeros(d);
    for n in 0..d.n {
        for c in 0..d.c {
            let (m, s, g, b) = (use_mean[c], inv_std[c], p.gamma[c], p.beta[c]);
            let src = input.plane(n, c);
            let xh = x_hat.plane_mut(n, c);
            for (h, &v) in xh.iter_mut().zip(src) {
                *h = (v - m) * s;
            }
            let xh = x_hat.plane(n, c).to_vec();
            for (o, h) in out.plane_mut(n, c).iter_mut().zip(xh) {
                *o = g * h + b;
            }
        }
    }
    Ok((
        out,
        BnCache {
            phase,
            x_hat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            count,
        },
    ))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward(
    grad_out: &Tensor4,
    cache: &BnCache,
    p: &BatchNormParams,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    let d = cache.x_hat.dims();
    grad_out.expect_dims(d, "batch_norm_backward")?;
    let mut d_gamma = vec![0.0; d.c];
    let mut d_beta = vec![0.0; d.c];
    for n in 0..d.n {
        for c in 0..d.c {
            for (&g, &h) in grad_out.plane(n, c).iter().zip(cache.x_hat.plane(n, c)) {
                d_gamma[c] += g * h;
                d_beta[c] += g;
            }
        }
    }
    let mut d_input = Tensor4::zeros(d);
    let m = cache.count as f64;
    for n in 0..d.n {
        for c in 0..d.c {
            let k = p.gamma[c] * cache.inv_std[c];
            let gout = grad_out.plane(n, c);
            let xh = cache.x_hat.plane(n, c);
            let dst = d_input.plane_mut(n, c);
            match cache.phase {
                Phase::Train => {
                    let (sb, sg) = (d_beta[c] / m, d_gamma[c] / m);
                    for ((o, &g), &h) in dst.iter_mut().zip(gout).zip(xh) {
                        *o = k * (g - sb - h * sg);
                    }
                }
                Phase::Infer => {
                    for (o, &g) in dst.iter_mut().zip(gout) {
                        *o = k * g;
                    }
                }
            }
        }
    }
    Ok((d_input, d_gamma, d_beta))
}

impl BatchNormParams {
    /// Folds a train-phase forward pass into the running statistics.
    /// The running variance uses the unbiased batch estimate.
    pub fn absorb_batch_stats(&mut self, cache: &BnCache) {
        if cache.phase != Phase::Train {
            return;
        }
        let m = self.momentum;
        let unbias = if cache.count > 1 {
            cache.count as f64 / (cache.count - 1) as f64
        } else {
            1.0
        };
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * cache.batch_mean[c];
            self.running_var[c] =
                (1.0 - m) * self.running_var[c] + m * cache.batch_var[c] * unbias;
        }
    }
}

/// Forward pass that also updates running statistics in the train phase.
pub fn batchnorm(input: &Tensor4, p: &mut BatchNormParams, phase: Phase) -> Result<Tensor4> {
    let (out, cache) = batch_norm_forward(input, p, phase)?;
    p.absorb_batch_stats(&cache);
    Ok(out)
}
