use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::{Dataset, Frame, Sequence};
use crate::fcn::{build_fcn, FcnConfig, FcnParams};
use crate::gradcheck::{finite_diff_check, CheckOptions};
use crate::labels::LabelMap;
use crate::params::{flatten_trainable, ParamSet};
use crate::recurrent::{bptt_step, build_head, init_state, CellKind, RnnConfig, WindowFrame};
use crate::tensor::{Dims, Tensor4};

// ---------------------------------------------------------------- weights

#[test]
fn median_frequency_reference_values() {
    let w = median_frequency_weights(&[50, 30, 20]).unwrap();
    let f = [0.5, 0.3, 0.2];
    for (got, fc) in w.0.iter().zip(f) {
        assert!((got - 0.3 / fc).abs() < 1e-12);
    }
    assert!((w.0[0] - 0.6).abs() < 1e-12 && (w.0[2] - 1.5).abs() < 1e-12);
    assert_eq!(w.0[1], 1.0);
}

#[test]
fn median_frequency_uniform_and_absent() {
    assert_eq!(median_frequency_weights(&[7, 7, 7, 7]).unwrap().0, vec![1.0; 4]);
    // median over the non-zero frequencies {0.25, 0.75} is 0.5
    let w = median_frequency_weights(&[0, 10, 30]).unwrap();
    assert_eq!(w.0[0], 0.0);
    assert!((w.0[1] - 0.5 / 0.25).abs() < 1e-12);
    assert!((w.0[2] - 0.5 / 0.75).abs() < 1e-12);
    assert!(matches!(
        median_frequency_weights(&[0, 0]),
        Err(crate::Error::Data(_))
    ));
}

proptest! {
    #[test]
    fn median_class_has_unit_weight(counts in prop::collection::vec(1u64..10_000, 1..8usize)
        .prop_filter("odd", |v| v.len() % 2 == 1)) {
        let w = median_frequency_weights(&counts).unwrap();
        let mut sorted = counts.clone();
        sorted.sort();
        let median_count = sorted[sorted.len() / 2];
        let k = counts.iter().position(|&c| c == median_count).unwrap();
        prop_assert!((w.0[k] - 1.0).abs() < 1e-12);
        prop_assert!(w.0.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn block_sample_is_sorted_and_unique(count in 1usize..3000, block in 1usize..1500, seed: u64) {
        let s = block_sample_frames(count, block, seed);
        prop_assert!(s.windows(2).all(|p| p[0] < p[1]));
        prop_assert!(s.iter().all(|&i| i < count));
        prop_assert!(!s.is_empty());
    }
}

// ---------------------------------------------------------------- loss

fn ce_oracle(z: &Tensor4, y: &LabelMap, w: &[f64]) -> f64 {
    let d = z.dims();
    let mut total = 0.0;
    let mut valid = 0;
    for n in 0..d.n {
        for yy in 0..d.h {
            for xx in 0..d.w {
                let l = y.data[(n * d.h + yy) * d.w + xx];
                if l == 255 {
                    continue;
                }
                valid += 1;
                let denom: f64 = (0..d.c).map(|c| z.at(n, c, yy, xx).exp()).sum();
                total -= w[l as usize] * (z.at(n, l as usize, yy, xx).exp() / denom).ln();
            }
        }
    }
    total / valid as f64
}

fn random_labels(n: usize, h: usize, w: usize, k: u8, rng: &mut ChaCha8Rng) -> LabelMap {
    let data = (0..n * h * w)
        .map(|_| if rng.random_bool(0.1) { 255 } else { rng.random_range(0..k) })
        .collect();
    LabelMap::new(n, h, w, data).unwrap()
}

#[test]
fn cross_entropy_matches_oracle_and_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let d = Dims::new(2, 4, 5, 6);
        let z = Tensor4::random_normal(d, 2.0, &mut rng);
        let y = random_labels(2, 5, 6, 4, &mut rng);
        let w = ClassWeights(vec![0.5, 1.0, 2.0, 1.5]);
        let (loss, grad) = weighted_cross_entropy(&z, &y, &w).unwrap();
        assert!((loss - ce_oracle(&z, &y, &w.0)).abs() < 1e-10);
        let f = |v: &[f64]| weighted_cross_entropy(&Tensor4::new(d, v.to_vec())?, &y, &w).map(|r| r.0);
        let opts = CheckOptions { eps: 1e-4, ..CheckOptions::default() };
        let r = finite_diff_check(f, z.data(), grad.data(), &opts).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}

#[test]
fn cross_entropy_edge_cases() {
    let d = Dims::new(1, 3, 4, 4);
    let y = LabelMap::filled(1, 4, 4, 1);
    let confident = Tensor4::from_fn(d, |_, c, _, _| if c == 1 { 20.0 } else { -20.0 });
    let (l, _) = weighted_cross_entropy(&confident, &y, &ClassWeights::uniform(3)).unwrap();
    assert!(l < 1e-3);
    let (l, _) = weighted_cross_entropy(&Tensor4::zeros(d), &y, &ClassWeights::uniform(3)).unwrap();
    assert!((l - 3f64.ln()).abs() < 1e-12);
    let ignored = LabelMap::filled(1, 4, 4, 255);
    let (l, g) = weighted_cross_entropy(&confident, &ignored, &ClassWeights::uniform(3)).unwrap();
    assert_eq!(l, 0.0);
    assert_eq!(g.norm(), 0.0);
    let bad = LabelMap::filled(1, 4, 4, 3);
    assert!(matches!(
        weighted_cross_entropy(&confident, &bad, &ClassWeights::uniform(3)),
        Err(crate::Error::Data(_))
    ));
}

// ---------------------------------------------------------------- optimizers

#[test]
fn adam_single_step_matches_formulas() {
    let mut opt = Optimizer::new(OptimizerKind::Adam, AdamConfig::default(), 3);
    let mut theta = vec![1.0, -2.0, 0.5];
    let g = [0.3, -0.1, 0.0];
    let (lr, wd) = (1e-2, 1e-4);
    let before = theta.clone();
    opt.update_flat(&mut theta, &g, lr, wd).unwrap();
    for i in 0..3 {
        let gi = g[i] + wd * before[i];
        let m_hat = (0.1 * gi) / (1.0 - 0.9);
        let v_hat = (0.001 * gi * gi) / (1.0 - 0.999);
        let want = before[i] - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((theta[i] - want).abs() < 1e-12);
    }
}

#[test]
fn adam_zero_gradient_keeps_params_and_constant_gradient_steps_by_lr() {
    let mut opt = Optimizer::new(OptimizerKind::Adam, AdamConfig::default(), 2);
    let mut theta = vec![0.7, -0.2];
    opt.update_flat(&mut theta, &[0.0, 0.0], 1e-3, 0.0).unwrap();
    assert_eq!(theta, vec![0.7, -0.2]);

    let mut opt = Optimizer::new(OptimizerKind::Adam, AdamConfig::default(), 1);
    let mut theta = vec![0.0];
    let mut last = 0.0;
    for _ in 0..5000 {
        let before = theta[0];
        opt.update_flat(&mut theta, &[0.37], 1e-3, 0.0).unwrap();
        last = before - theta[0];
    }
    assert!((last - 1e-3).abs() < 1e-6, "{last}");
}

#[test]
fn sgd_applies_coupled_decay() {
    let mut opt = Optimizer::new(OptimizerKind::Sgd, AdamConfig::default(), 1);
    let mut theta = vec![2.0];
    opt.update_flat(&mut theta, &[0.5], 0.1, 0.01).unwrap();
    assert!((theta[0] - (2.0 - 0.1 * (0.5 + 0.02))).abs() < 1e-15);
}

// ---------------------------------------------------------------- sampling

#[test]
fn block_sampling_retention() {
    assert_eq!(block_sample_frames(37, 1, 5), (0..37).collect::<Vec<_>>());
    assert_eq!(block_sample_frames(500, 100, 9), block_sample_frames(500, 100, 9));
    for seed in 0..20 {
        let kept = block_sample_frames(10_000, 1000, seed).len() as f64 / 10_000.0;
        assert!((0.60..=0.67).contains(&kept), "seed {seed}: {kept}");
    }
}

// ---------------------------------------------------------------- plan and log

#[test]
fn plan_json_roundtrip_and_validation() {
    for plan in [TrainPlan::fcn_default(), TrainPlan::rnn_default()] {
        let text = serde_json::to_string_pretty(&plan).unwrap();
        assert_eq!(TrainPlan::from_json(&text).unwrap(), plan);
    }
    let minimal = r#"{"stage": "rnn", "phases": [{"epochs": 2, "lr": 0.001}]}"#;
    let p = TrainPlan::from_json(minimal).unwrap();
    assert_eq!(p.batch_size, 1);
    assert_eq!(p.schedule(), vec![(0, 1e-3), (1, 1e-3)]);
    for bad in [
        r#"{"stage": "fcn", "phases": []}"#,
        r#"{"stage": "fcn", "phases": [{"epochs": 1, "lr": -1.0}]}"#,
        r#"{"stage": "fcn", "phases": [{"epochs": 1, "lr": 0.1}], "weight_decay": -1.0}"#,
        r#"{"stage": "fcn", "phases": [{"epochs": 1, "lr": 0.1}], "bogus": 1}"#,
        r#"{"stage": "rnn", "phases": [{"epochs": 1, "lr": 0.1}], "batch_size": 2}"#,
    ] {
        assert!(matches!(TrainPlan::from_json(bad), Err(crate::Error::Config(_))), "{bad}");
    }
}

#[test]
fn loss_csv_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    let recs = vec![
        LossRecord { epoch: 0, phase_lr: 1e-4, mean_loss: 1.234_567_890_123, wall_seconds: 0.5 },
        LossRecord { epoch: 1, phase_lr: 1e-5, mean_loss: 0.1, wall_seconds: 1.25 },
    ];
    write_loss_csv(&path, &recs).unwrap();
    let back = read_loss_csv(&path).unwrap();
    assert_eq!(back, recs);
    std::fs::write(&path, "nope\n").unwrap();
    assert!(read_loss_csv(&path).is_err());
}

// ---------------------------------------------------------------- stages

const PALETTE: [[f64; 3]; 4] = [
    [0.2, 0.5, 0.9],
    [0.8, 0.3, 0.2],
    [0.4, 0.8, 0.3],
    [0.9, 0.9, 0.2],
];

fn tiny_fcn_config() -> FcnConfig {
    FcnConfig {
        input_height: 16,
        input_width: 24,
        ..FcnConfig::desk(4)
    }
}

/// Frames made of colour-coded vertical stripes that drift sideways.
fn stripe_dataset(seqs: usize, len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (16, 24);
    let sequences = (0..seqs)
        .map(|id| {
            let offset: usize = rng.random_range(0..w);
            let frames = (0..len)
                .map(|t| {
                    let class = |x: usize| ((x + offset + t) / 6) % 4;
                    let labels = LabelMap::new(
                        1,
                        h,
                        w,
                        (0..h * w).map(|i| class(i % w) as u8).collect(),
                    )
                    .unwrap();
                    let image = Tensor4::from_fn(Dims::new(1, 3, h, w), |_, c, _, x| {
                        PALETTE[class(x)][c] + rng.random_range(-0.05..0.05)
                    });
                    Frame { image, labels }
                })
                .collect();
            Sequence { id, frames }
        })
        .collect();
    Dataset::new(4, sequences).unwrap()
}

fn quiet() -> impl FnMut(&LossRecord) {
    |_| {}
}

fn fcn_plan(epochs: usize, lr: f64) -> TrainPlan {
    TrainPlan {
        phases: vec![LrPhase { epochs, lr }],
        ..TrainPlan::fcn_default()
    }
}

fn rnn_plan(epochs: usize, lr: f64) -> TrainPlan {
    TrainPlan {
        phases: vec![LrPhase { epochs, lr }],
        block_size: Some(8),
        ..TrainPlan::rnn_default()
    }
}

fn tiny_head(cell: CellKind) -> crate::recurrent::HeadParams {
    let cfg = RnnConfig {
        layers: 2,
        hidden_channels: 4,
        ..RnnConfig::desk(cell, 4)
    };
    build_head(&cfg, 1).unwrap()
}

#[test]
fn fcn_overfits_twenty_frames() {
    let data = stripe_dataset(2, 10, 1);
    let mut fcn = build_fcn(&tiny_fcn_config(), 0).unwrap();
    let plan = TrainPlan {
        augment: false,
        ..fcn_plan(25, 3e-3)
    };
    let log = train_fcn(&plan, &data, &mut fcn, &mut quiet()).unwrap();
    let first = log.records[0].mean_loss;
    let last = log.records.last().unwrap().mean_loss;
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn training_is_deterministic() {
    let data = stripe_dataset(1, 10, 2);
    let run = || {
        let mut fcn = build_fcn(&tiny_fcn_config(), 3).unwrap();
        let log = train_fcn(&fcn_plan(1, 1e-3), &data, &mut fcn, &mut quiet()).unwrap();
        (flatten_all(&fcn), log.records[0].mean_loss)
    };
    assert_eq!(run(), run());
}

fn flatten_all<P: ParamSet>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit(&mut |_, _, d, _| out.extend_from_slice(d));
    out
}

#[test]
fn zero_learning_rate_leaves_trainables() {
    let data = stripe_dataset(1, 6, 4);
    let mut fcn = build_fcn(&tiny_fcn_config(), 4).unwrap();
    let before = flatten_trainable(&fcn);
    let log = train_fcn(&fcn_plan(2, 0.0), &data, &mut fcn, &mut quiet()).unwrap();
    assert_eq!(flatten_trainable(&fcn), before);
    assert_eq!(log.records.len(), 2);

    let mut head = tiny_head(CellKind::Convlstm);
    let before = flatten_all(&head);
    // resampling changes the frame set per epoch, so use every frame
    let plan = TrainPlan { block_size: None, ..rnn_plan(2, 0.0) };
    let log = train_rnn(&plan, &data, &fcn, &mut head, &mut quiet()).unwrap();
    assert_eq!(flatten_all(&head), before);
    assert_eq!(log.records[0].mean_loss, log.records[1].mean_loss);
}

#[test]
fn head_training_freezes_fcn_and_learns() {
    let data = stripe_dataset(3, 12, 5);
    let mut fcn = build_fcn(&tiny_fcn_config(), 5).unwrap();
    train_fcn(&fcn_plan(3, 3e-3), &data, &mut fcn, &mut quiet()).unwrap();
    let frozen = flatten_all(&fcn);
    for cell in [CellKind::Simple, CellKind::Convlstm] {
        let mut head = tiny_head(cell);
        let plan = TrainPlan {
            block_size: None,
            ..rnn_plan(15, 1e-2)
        };
        let log = train_rnn(&plan, &data, &fcn, &mut head, &mut quiet()).unwrap();
        assert_eq!(flatten_all(&fcn), frozen);
        let first = log.records[0].mean_loss;
        let last = log.records.last().unwrap().mean_loss;
        assert!(last < 0.5 * first, "{cell:?}: {first} -> {last}");
    }
}

#[test]
fn precomputed_logits_give_identical_gradients() {
    let data = stripe_dataset(1, 3, 6);
    let fcn = build_fcn(&tiny_fcn_config(), 6).unwrap();
    let cached = precompute_logits(&fcn, &data).unwrap();
    let fresh: Vec<_> = data.sequences[0]
        .frames
        .iter()
        .map(|f| crate::fcn::fcn_forward(&fcn, &f.image, crate::ops::Phase::Infer).unwrap())
        .collect();
    let head = tiny_head(CellKind::Convlstm);
    let weights = ClassWeights::uniform(4);
    let loss = |z: &Tensor4, y: &LabelMap| weighted_cross_entropy(z, y, &weights);
    let labels: Vec<&LabelMap> = data.sequences[0].frames.iter().map(|f| &f.labels).collect();
    let run = |bundles: &[crate::fcn::LogitsBundle]| {
        let window: Vec<WindowFrame<'_>> = bundles
            .iter()
            .zip(&labels)
            .map(|(bundle, labels)| WindowFrame { bundle, labels })
            .collect();
        let d = bundles[0].logits_low.dims();
        let out = bptt_step(&head, &window, &init_state(&head.config, 1, d.h, d.w), &loss).unwrap();
        flatten_trainable(&out.grads)
    };
    assert_eq!(run(&cached[0]), run(&fresh));
}

#[test]
fn class_count_mismatch_is_incompatible() {
    let data = stripe_dataset(1, 2, 7);
    let mut fcn: FcnParams = build_fcn(&FcnConfig { num_classes: 3, ..tiny_fcn_config() }, 0).unwrap();
    assert!(matches!(
        train_fcn(&fcn_plan(1, 1e-3), &data, &mut fcn, &mut quiet()),
        Err(crate::Error::Incompatible(_))
    ));
    let fcn4 = build_fcn(&tiny_fcn_config(), 0).unwrap();
    let mut head = tiny_head(CellKind::Simple);
    assert!(matches!(
        train_rnn(&fcn_plan(1, 1e-3), &data, &fcn4, &mut head, &mut quiet()),
        Err(crate::Error::Config(_))
    ));
}
