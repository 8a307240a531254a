//! The full finite-difference suite: every differentiable op on small random
//! tensors, the FCN end to end, and both FCN + head models over a short
//! window.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{finite_diff_check, CheckOptions, CheckReport, Probe};
use crate::error::Result;
use crate::fcn::{
    build_fcn, fcn_backward, fcn_forward, fcn_forward_taped, merge_logits, merge_logits_backward,
    FcnConfig, FcnParams, LogitsBundle,
};
use crate::labels::{LabelMap, IGNORE_LABEL};
use crate::ops::{
    batch_norm_backward, batch_norm_forward, bilinear_upsample, bilinear_upsample_backward, conv2d,
    conv2d_backward, maxpool2, maxpool2_backward, pointwise, pointwise_backward, Activation,
    Padding, Phase,
};
use crate::params::{flatten_trainable, load_trainable, trainable_count};
use crate::recurrent::{
    bptt_step, build_head, convlstm_step, convlstm_step_backward, head_forward_taped, init_state,
    simple_rnn_step, simple_rnn_step_backward, CellKind, CellLayers, GatePeek, HeadParams,
    LayerState, PeepholeMode, RnnConfig, StepTape, WindowFrame,
};
use crate::tensor::{BatchNormParams, Dims, KernelBank, Tensor4};
use crate::training::{weighted_cross_entropy, ClassWeights};

pub const SUITE_THRESHOLD: f64 = 1e-4;

/// Check names in the order they run.
pub const SUITE_CHECKS: [&str; 17] = [
    "conv2d",
    "conv2d_stride2",
    "batch_norm_train",
    "batch_norm_infer",
    "relu",
    "sigmoid",
    "tanh",
    "maxpool2",
    "bilinear_upsample_x2",
    "bilinear_upsample_x4",
    "weighted_cross_entropy",
    "merge_logits",
    "simple_rnn_step",
    "convlstm_step",
    "fcn",
    "fcn+simple",
    "fcn+convlstm",
];

#[derive(Clone, Debug, Default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Test hook: scales the analytic gradient of the named check by 1.01,
    /// as a broken backward pass would.
    pub fault: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: CheckReport,
    pub passed: bool,
}

struct Ctx<'a> {
    opts: &'a SuiteOptions,
    rng: ChaCha8Rng,
}

impl Ctx<'_> {
    fn tensor(&mut self, d: Dims) -> Tensor4 {
        Tensor4::random_normal(d, 1.0, &mut self.rng)
    }

    fn bank(&mut self, o: usize, i: usize, k: usize, bias: bool) -> KernelBank {
        let mut b = KernelBank::fan_in_normal(o, i, k, k, bias, 1.0, &mut self.rng).expect("valid bank");
        if let Some(bias) = b.bias.as_mut() {
            bias.iter_mut().for_each(|v| *v = self.rng.random_range(-0.5..0.5));
        }
        b
    }

    fn run<F, P>(
        &self,
        name: &'static str,
        point: &[f64],
        mut analytic: Vec<f64>,
        eps: f64,
        objective: F,
    ) -> Result<SuiteEntry>
    where
        F: FnMut(&[f64]) -> Result<P>,
        P: Into<Probe>,
    {
        if self.opts.fault.as_deref() == Some(name) {
            analytic.iter_mut().for_each(|g| *g *= 1.01);
        }
        let opts = CheckOptions {
            eps,
            max_coords: Some(160),
            seed: self.opts.seed ^ 0x5eed,
        };
        let report = finite_diff_check(objective, point, &analytic, &opts)?;
        let passed = report.checked > 0 && report.max_rel_error <= SUITE_THRESHOLD;
        Ok(SuiteEntry {
            name,
            report,
            passed,
        })
    }
}

/// Splits a flat vector back into pieces of known lengths.
fn split<'a>(v: &'a [f64], lens: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(lens.len());
    let mut at = 0;
    for &l in lens {
        out.push(&v[at..at + l]);
        at += l;
    }
    out
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn with_data(t: &Tensor4, data: &[f64]) -> Tensor4 {
    Tensor4::new(t.dims(), data.to_vec()).expect("same length")
}

fn hash_bits<T: Hash>(x: T) -> u64 {
    let mut h = DefaultHasher::new();
    x.hash(&mut h);
    h.finish()
}

fn load_bank(b: &mut KernelBank, parts: &[&[f64]]) {
    b.weights.copy_from_slice(parts[0]);
    if let Some(bias) = b.bias.as_mut() {
        bias.copy_from_slice(parts[1]);
    }
}

fn check_conv(c: &mut Ctx<'_>, name: &'static str, stride: usize) -> Result<SuiteEntry> {
    let x = c.tensor(Dims::new(2, 3, 5, 6));
    let bank = c.bank(4, 3, 3, true);
    let y = conv2d(&x, &bank, stride, Padding::Same)?;
    let r = c.tensor(y.dims());
    let (dx, db) = conv2d_backward(&x, &bank, stride, Padding::Same, &r)?;
    let lens = [x.len(), bank.weights.len(), bank.out_c];
    let point = concat(&[x.data(), &bank.weights, bank.bias.as_ref().unwrap()]);
    let analytic = concat(&[dx.data(), &db.weights, db.bias.as_ref().unwrap()]);
    c.run(name, &point, analytic, 1e-5, |v| {
        let p = split(v, &lens);
        let mut b = bank.clone();
        load_bank(&mut b, &p[1..]);
        Ok(conv2d(&with_data(&x, p[0]), &b, stride, Padding::Same)?.dot(&r))
    })
}

fn check_bn(c: &mut Ctx<'_>, name: &'static str, phase: Phase) -> Result<SuiteEntry> {
    let x = c.tensor(Dims::new(3, 2, 3, 4));
    let mut p = BatchNormParams::new(2, 0.1, 1e-5)?;
    for i in 0..2 {
        p.gamma[i] = c.rng.random_range(0.5..1.5);
        p.beta[i] = c.rng.random_range(-0.5..0.5);
        p.running_mean[i] = c.rng.random_range(-0.5..0.5);
        p.running_var[i] = c.rng.random_range(0.5..2.0);
    }
    let (y, cache) = batch_norm_forward(&x, &p, phase)?;
    let r = c.tensor(y.dims());
    let (dx, dg, db) = batch_norm_backward(&r, &cache, &p)?;
    let lens = [x.len(), 2, 2];
    let point = concat(&[x.data(), &p.gamma, &p.beta]);
    c.run(name, &point, concat(&[dx.data(), &dg, &db]), 1e-4, |v| {
        let s = split(v, &lens);
        let mut q = p.clone();
        q.gamma.copy_from_slice(s[1]);
        q.beta.copy_from_slice(s[2]);
        Ok(batch_norm_forward(&with_data(&x, s[0]), &q, phase)?.0.dot(&r))
    })
}

fn check_pointwise(c: &mut Ctx<'_>, name: &'static str, f: Activation) -> Result<SuiteEntry> {
    let x = c.tensor(Dims::new(2, 3, 4, 4));
    let y = pointwise(&x, f);
    let r = c.tensor(y.dims());
    let dx = pointwise_backward(&y, &r, f)?;
    c.run(name, x.data(), dx.data().to_vec(), 1e-5, |v| {
        let y = pointwise(&with_data(&x, v), f);
        let branch = match f {
            Activation::Relu => hash_bits(y.data().iter().map(|&o| o > 0.0).collect::<Vec<_>>()),
            _ => 0,
        };
        Ok(Probe {
            value: y.dot(&r),
            branch,
        })
    })
}

fn check_pool(c: &mut Ctx<'_>) -> Result<SuiteEntry> {
    let x = c.tensor(Dims::new(2, 2, 5, 6));
    let (y, idx) = maxpool2(&x);
    let r = c.tensor(y.dims());
    let dx = maxpool2_backward(&r, &idx)?;
    c.run("maxpool2", x.data(), dx.data().to_vec(), 1e-5, |v| {
        let (y, idx) = maxpool2(&with_data(&x, v));
        Ok(Probe {
            value: y.dot(&r),
            branch: hash_bits(&idx.argmax),
        })
    })
}

fn check_upsample(c: &mut Ctx<'_>, name: &'static str, factor: usize) -> Result<SuiteEntry> {
    let x = c.tensor(Dims::new(1, 2, 3, 4));
    let y = bilinear_upsample(&x, factor)?;
    let r = c.tensor(y.dims());
    let dx = bilinear_upsample_backward(&r, factor, x.dims())?;
    c.run(name, x.data(), dx.data().to_vec(), 1e-5, |v| {
        Ok(bilinear_upsample(&with_data(&x, v), factor)?.dot(&r))
    })
}

fn random_labels(c: &mut Ctx<'_>, n: usize, h: usize, w: usize, k: u8) -> LabelMap {
    let data = (0..n * h * w)
        .map(|_| {
            if c.rng.random_bool(0.1) {
                IGNORE_LABEL
            } else {
                c.rng.random_range(0..k)
            }
        })
        .collect();
    LabelMap::new(n, h, w, data).expect("consistent size")
}

fn weights() -> ClassWeights {
    ClassWeights(vec![0.7, 1.3, 2.0, 0.4])
}

fn check_ce(c: &mut Ctx<'_>) -> Result<SuiteEntry> {
    let z = c.tensor(Dims::new(2, 4, 3, 5));
    let y = random_labels(c, 2, 3, 5, 4);
    let w = weights();
    let (_, dz) = weighted_cross_entropy(&z, &y, &w)?;
    c.run("weighted_cross_entropy", z.data(), dz.data().to_vec(), 1e-4, |v| {
        Ok(weighted_cross_entropy(&with_data(&z, v), &y, &w)?.0)
    })
}

fn check_merge(c: &mut Ctx<'_>) -> Result<SuiteEntry> {
    let low = c.tensor(Dims::new(1, 4, 2, 3));
    let skips = [c.tensor(Dims::new(1, 4, 8, 12)), c.tensor(Dims::new(1, 4, 4, 6))];
    let y = merge_logits(&low, &skips, 16, 24)?;
    let r = c.tensor(y.dims());
    let skip_dims: Vec<Dims> = skips.iter().map(|s| s.dims()).collect();
    let (dl, ds) = merge_logits_backward(&r, low.dims(), &skip_dims)?;
    let lens = [low.len(), skips[0].len(), skips[1].len()];
    let point = concat(&[low.data(), skips[0].data(), skips[1].data()]);
    let analytic = concat(&[dl.data(), ds[0].data(), ds[1].data()]);
    c.run("merge_logits", &point, analytic, 1e-5, |v| {
        let p = split(v, &lens);
        let sk = [with_data(&skips[0], p[1]), with_data(&skips[1], p[2])];
        Ok(merge_logits(&with_data(&low, p[0]), &sk, 16, 24)?.dot(&r))
    })
}

fn small_head(c: &mut Ctx<'_>, cell: CellKind, layers: usize, peephole: PeepholeMode) -> Result<HeadParams> {
    let config = RnnConfig {
        layers,
        hidden_channels: 3,
        unroll: 5,
        peephole,
        ..RnnConfig::desk(cell, 4)
    };
    let mut head = build_head(&config, c.rng.random())?;
    let v: Vec<f64> = (0..trainable_count(&head))
        .map(|_| c.rng.random_range(-0.3..0.3))
        .collect();
    load_trainable(&mut head, &v);
    Ok(head)
}

fn check_simple_step(c: &mut Ctx<'_>) -> Result<SuiteEntry> {
    let head = small_head(c, CellKind::Simple, 1, PeepholeMode::PerChannel)?;
    let d = Dims::new(1, 4, 3, 4);
    let x = c.tensor(d);
    let prev = LayerState {
        s: Tensor4::zeros(d.with_channels(3)),
        o: c.tensor(d.with_channels(3)).map(f64::abs),
    };
    let layer = |h: &HeadParams| match &h.cells {
        CellLayers::Simple(v) => v[0].clone(),
        CellLayers::Convlstm(_) => unreachable!("simple head"),
    };
    let (next, tape) = simple_rnn_step(&layer(&head), &x, &prev)?;
    let r = c.tensor(next.o.dims());
    let mut grads = head.zeros_like();
    let CellLayers::Simple(g) = &mut grads.cells else { unreachable!("simple head") };
    let (dx, dprev) = simple_rnn_step_backward(&layer(&head), &tape, &r, &mut g[0])?;
    let n = trainable_count(&head);
    let lens = [x.len(), prev.o.len(), n];
    let point = concat(&[x.data(), prev.o.data(), &flatten_trainable(&head)]);
    let analytic = concat(&[dx.data(), dprev.data(), &flatten_trainable(&grads)]);
    c.run("simple_rnn_step", &point, analytic, 1e-5, |v| {
        let p = split(v, &lens);
        let mut h = head.clone();
        load_trainable(&mut h, p[2]);
        let st = LayerState {
            s: prev.s.clone(),
            o: with_data(&prev.o, p[1]),
        };
        let (next, _) = simple_rnn_step(&layer(&h), &with_data(&x, p[0]), &st)?;
        Ok(Probe {
            value: next.o.dot(&r),
            branch: hash_bits(next.o.data().iter().map(|&o| o > 0.0).collect::<Vec<_>>()),
        })
    })
}

fn check_lstm_step(c: &mut Ctx<'_>) -> Result<SuiteEntry> {
    let head = small_head(c, CellKind::Convlstm, 1, PeepholeMode::PerChannel)?;
    let d = Dims::new(1, 4, 3, 4);
    let x = c.tensor(d);
    let prev = LayerState {
        s: c.tensor(d.with_channels(3)),
        o: c.tensor(d.with_channels(3)).map(f64::tanh),
    };
    let layer = |h: &HeadParams| match &h.cells {
        CellLayers::Convlstm(v) => v[0].clone(),
        CellLayers::Simple(_) => unreachable!("lstm head"),
    };
    let peek = GatePeek::NewState;
    let (next, tape) = convlstm_step(&layer(&head), &x, &prev, peek)?;
    let (ro, rs) = (c.tensor(next.o.dims()), c.tensor(next.s.dims()));
    let mut grads = head.zeros_like();
    let CellLayers::Convlstm(g) = &mut grads.cells else { unreachable!("lstm head") };
    let (dx, dprev) = convlstm_step_backward(&layer(&head), &tape, peek, &ro, &rs, &mut g[0])?;
    let n = trainable_count(&head);
    let lens = [x.len(), prev.s.len(), prev.o.len(), n];
    let point = concat(&[x.data(), prev.s.data(), prev.o.data(), &flatten_trainable(&head)]);
    let analytic = concat(&[dx.data(), dprev.s.data(), dprev.o.data(), &flatten_trainable(&grads)]);
    c.run("convlstm_step", &point, analytic, 1e-4, |v| {
        let p = split(v, &lens);
        let mut h = head.clone();
        load_trainable(&mut h, p[3]);
        let st = LayerState {
            s: with_data(&prev.s, p[1]),
            o: with_data(&prev.o, p[2]),
        };
        let (next, _) = convlstm_step(&layer(&h), &with_data(&x, p[0]), &st, peek)?;
        Ok(next.o.dot(&ro) + next.s.dot(&rs))
    })
}

fn tiny_fcn(c: &mut Ctx<'_>) -> Result<FcnParams> {
    let config = FcnConfig {
        input_height: 16,
        input_width: 16,
        ..FcnConfig::desk(4)
    };
    let mut fcn = build_fcn(&config, c.rng.random())?;
    // non-trivial BN affine parameters and heads
    let v: Vec<f64> = flatten_trainable(&fcn)
        .into_iter()
        .map(|w| w + c.rng.random_range(-0.1..0.1))
        .collect();
    load_trainable(&mut fcn, &v);
    Ok(fcn)
}

fn check_fcn(c: &mut Ctx<'_>) -> Result<SuiteEntry> {
    let fcn = tiny_fcn(c)?;
    let img = Tensor4::random_uniform(Dims::new(2, 3, 16, 16), 0.0, 1.0, &mut c.rng);
    let y = random_labels(c, 2, 16, 16, 4);
    let w = weights();
    let (bundle, tape) = fcn_forward_taped(&fcn, &img, Phase::Train)?;
    let (_, d_full) = weighted_cross_entropy(&bundle.logits_full, &y, &w)?;
    let (grads, _) = fcn_backward(&fcn, &tape, &d_full)?;
    c.run("fcn", &flatten_trainable(&fcn), flatten_trainable(&grads), 1e-4, |v| {
        let mut f = fcn.clone();
        load_trainable(&mut f, v);
        let (b, t) = fcn_forward_taped(&f, &img, Phase::Train)?;
        Ok(Probe {
            value: weighted_cross_entropy(&b.logits_full, &y, &w)?.0,
            branch: t.branch_signature(),
        })
    })
}

fn check_model(c: &mut Ctx<'_>, name: &'static str, cell: CellKind) -> Result<SuiteEntry> {
    let mut fcn = tiny_fcn(c)?;
    // bring running statistics near the batch statistics so inference-mode
    // logits stay in a range where the gates are not saturated
    let calib = Tensor4::random_uniform(Dims::new(3, 3, 16, 16), 0.0, 1.0, &mut c.rng);
    for _ in 0..60 {
        let (_, tape) = fcn_forward_taped(&fcn, &calib, Phase::Train)?;
        fcn.absorb_batch_stats(&tape);
    }
    let head = small_head(c, cell, 2, PeepholeMode::PerChannel)?;
    let frames = 3;
    let bundles: Vec<LogitsBundle> = (0..frames)
        .map(|_| {
            let img = Tensor4::random_uniform(Dims::new(1, 3, 16, 16), 0.0, 1.0, &mut c.rng);
            fcn_forward(&fcn, &img, Phase::Infer)
        })
        .collect::<Result<_>>()?;
    let labels: Vec<LabelMap> = (0..frames).map(|_| random_labels(c, 1, 16, 16, 4)).collect();
    let w = weights();
    let loss = |z: &Tensor4, y: &LabelMap| weighted_cross_entropy(z, y, &w);
    let window: Vec<WindowFrame<'_>> = bundles
        .iter()
        .zip(&labels)
        .map(|(bundle, labels)| WindowFrame { bundle, labels })
        .collect();
    let low = bundles[0].logits_low.dims();
    let init = init_state(&head.config, low.n, low.h, low.w);
    let out = bptt_step(&head, &window, &init, &loss)?;
    c.run(name, &flatten_trainable(&head), flatten_trainable(&out.grads), 1e-4, |v| {
        let mut h = head.clone();
        load_trainable(&mut h, v);
        let inputs: Vec<Tensor4> = bundles.iter().map(|b| b.logits_low.clone()).collect();
        let (ys, _, tapes) = head_forward_taped(&h, &inputs, &init)?;
        let mut total = 0.0;
        for ((y, b), l) in ys.iter().zip(&bundles).zip(&labels) {
            let full = merge_logits(y, &b.skip_logits, 16, 16)?;
            total += weighted_cross_entropy(&full, l, &w)?.0;
        }
        Ok(Probe {
            value: total,
            branch: StepTape::branch_signature(&tapes),
        })
    })
}

/// Runs every check in [`SUITE_CHECKS`] order. Errors only on internal
/// failures; a gradient mismatch shows up as `passed == false`.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<SuiteEntry>> {
    let mut c = Ctx {
        opts,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
    };
    let c = &mut c;
    Ok(vec![
        check_conv(c, "conv2d", 1)?,
        check_conv(c, "conv2d_stride2", 2)?,
        check_bn(c, "batch_norm_train", Phase::Train)?,
        check_bn(c, "batch_norm_infer", Phase::Infer)?,
        check_pointwise(c, "relu", Activation::Relu)?,
        check_pointwise(c, "sigmoid", Activation::Sigmoid)?,
        check_pointwise(c, "tanh", Activation::Tanh)?,
        check_pool(c)?,
        check_upsample(c, "bilinear_upsample_x2", 2)?,
        check_upsample(c, "bilinear_upsample_x4", 4)?,
        check_ce(c)?,
        check_merge(c)?,
        check_simple_step(c)?,
        check_lstm_step(c)?,
        check_fcn(c)?,
        check_model(c, "fcn+simple", CellKind::Simple)?,
        check_model(c, "fcn+convlstm", CellKind::Convlstm)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_names_each_check_once() {
        let entries = run_suite(&SuiteOptions::default()).unwrap();
        let names: Vec<&str> = entries.iter().map(|e| e.name).collect();
        assert_eq!(names, SUITE_CHECKS);
        for e in &entries {
            assert!(e.passed, "{}: {:?}", e.name, e.report);
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let opts = SuiteOptions {
            seed: 3,
            fault: Some("convlstm_step".into()),
        };
        let entries = run_suite(&opts).unwrap();
        let failed: Vec<&str> = entries.iter().filter(|e| !e.passed).map(|e| e.name).collect();
        assert_eq!(failed, ["convlstm_step"]);
    }
}
