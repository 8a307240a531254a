use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{median_frequency_weights, weighted_cross_entropy, ClassWeights};
use super::optim::{clip_global_norm, Optimizer};
use super::plan::{LossRecord, Stage, TrainPlan, Weighting};
use super::sampling::block_sample_frames;
use crate::dataset::{Dataset, FrameRef};
use crate::error::{Error, Result};
use crate::fcn::{fcn_backward, fcn_forward, fcn_forward_taped, FcnParams, LogitsBundle};
use crate::labels::LabelMap;
use crate::ops::Phase;
use crate::params::trainable_count;
use crate::recurrent::{bptt_step, init_state, CellKind, HeadParams, WindowFrame};
use crate::tensor::Tensor4;

/// Per-epoch loss log plus the class weights the run used.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
    pub class_weights: ClassWeights,
}

pub type Progress<'a> = &'a mut dyn FnMut(&LossRecord);

fn epoch_seed(seed: u64, epoch: usize, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((epoch as u64) << 8)
        .wrapping_add(salt)
}

fn class_weights(plan: &TrainPlan, data: &Dataset) -> Result<ClassWeights> {
    match plan.class_weighting {
        Weighting::Uniform => Ok(ClassWeights::uniform(data.num_classes)),
        Weighting::MedianFrequency => median_frequency_weights(&data.label_histogram()),
    }
}

/// Frames used in one epoch: every frame, or a block resample over the
/// concatenated sequences. Always in dataset order.
fn epoch_frames(plan: &TrainPlan, data: &Dataset, epoch: usize) -> Vec<FrameRef> {
    let refs = data.frame_refs();
    match plan.block_size {
        None => refs,
        Some(b) => block_sample_frames(refs.len(), b, epoch_seed(plan.seed, epoch, 1))
            .into_iter()
            .map(|i| refs[i])
            .collect(),
    }
}

fn check_classes(data: &Dataset, model_classes: usize) -> Result<()> {
    if data.num_classes != model_classes {
        return Err(Error::Incompatible(format!(
            "dataset has {} classes, model predicts {}",
            data.num_classes, model_classes
        )));
    }
    Ok(())
}

fn flip_image(img: &Tensor4) -> Tensor4 {
    let d = img.dims();
    Tensor4::from_fn(d, |n, c, y, x| img.at(n, c, y, d.w - 1 - x))
}

/// Trains every FCN parameter (and batch-norm statistics) on shuffled
/// frame batches.
pub fn train_fcn(
    plan: &TrainPlan,
    data: &Dataset,
    params: &mut FcnParams,
    progress: Progress<'_>,
) -> Result<TrainLog> {
    plan.validate()?;
    if plan.stage != Stage::Fcn {
        return Err(Error::Config("train_fcn needs a plan with stage \"fcn\"".into()));
    }
    check_classes(data, params.num_classes())?;
    let weights = class_weights(plan, data)?;
    let mut opt = Optimizer::new(plan.optimizer, plan.adam, trainable_count(params));
    let mut records = Vec::new();
    let start = Instant::now();
    for (epoch, lr) in plan.schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(plan.seed, epoch, 2));
        let mut frames = epoch_frames(plan, data, epoch);
        frames.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in frames.chunks(plan.batch_size) {
            let mut images = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &r in batch {
                let f = data.frame(r);
                let (mut img, lab) = if plan.augment && rng.random_bool(0.5) {
                    (flip_image(&f.image), f.labels.flip_horizontal())
                } else {
                    (f.image.clone(), f.labels.clone())
                };
                if plan.augment {
                    let k = rng.random_range(0.9..1.1);
                    img.scale(k);
                }
                images.push(img);
                labels.push(lab);
            }
            let x = Tensor4::stack(&images)?;
            let y = LabelMap::stack(&labels.iter().collect::<Vec<_>>())?;
            let (bundle, tape) = fcn_forward_taped(params, &x, Phase::Train)?;
            let (loss, d_full) = weighted_cross_entropy(&bundle.logits_full, &y, &weights)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged in epoch {epoch}")));
            }
            let (grads, _) = fcn_backward(params, &tape, &d_full)?;
            params.absorb_batch_stats(&tape);
            opt.update(params, &grads, lr, plan.weight_decay)?;
            loss_sum += loss * batch.len() as f64;
        }
        let rec = LossRecord {
            epoch,
            phase_lr: lr,
            mean_loss: loss_sum / frames.len().max(1) as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        progress(&rec);
        records.push(rec);
    }
    Ok(TrainLog {
        records,
        class_weights: weights,
    })
}

/// Inference-mode FCN outputs for every frame, computed one frame at a time.
pub fn precompute_logits(fcn: &FcnParams, data: &Dataset) -> Result<Vec<Vec<LogitsBundle>>> {
    check_classes(data, fcn.num_classes())?;
    data.sequences
        .iter()
        .map(|s| {
            s.frames
                .iter()
                .map(|f| fcn_forward(fcn, &f.image, Phase::Infer))
                .collect()
        })
        .collect()
}

/// Trains the head on frozen, precomputed FCN logits. Each sequence starts
/// from zero state; sampled frames are visited in temporal order in windows
/// of `unroll`, with the state carried (detached) between windows.
pub fn train_rnn(
    plan: &TrainPlan,
    data: &Dataset,
    fcn: &FcnParams,
    head: &mut HeadParams,
    progress: Progress<'_>,
) -> Result<TrainLog> {
    plan.validate()?;
    if plan.stage != Stage::Rnn {
        return Err(Error::Config("train_rnn needs a plan with stage \"rnn\"".into()));
    }
    check_classes(data, head.config.num_classes)?;
    let cached = precompute_logits(fcn, data)?;
    train_rnn_cached(plan, data, &cached, head, progress)
}

pub fn train_rnn_cached(
    plan: &TrainPlan,
    data: &Dataset,
    cached: &[Vec<LogitsBundle>],
    head: &mut HeadParams,
    progress: Progress<'_>,
) -> Result<TrainLog> {
    let weights = class_weights(plan, data)?;
    let loss_fn = |z: &Tensor4, y: &LabelMap| weighted_cross_entropy(z, y, &weights);
    let mut opt = Optimizer::new(plan.optimizer, plan.adam, trainable_count(head));
    let unroll = head.config.unroll;
    let mut records = Vec::new();
    let start = Instant::now();
    for (epoch, lr) in plan.schedule() {
        let frames = epoch_frames(plan, data, epoch);
        let mut per_seq: Vec<Vec<usize>> = vec![Vec::new(); data.sequences.len()];
        for r in &frames {
            per_seq[r.seq].push(r.frame);
        }
        let mut order: Vec<usize> = (0..per_seq.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(plan.seed, epoch, 3)));
        let mut loss_sum = 0.0;
        for s in order {
            let idx = &per_seq[s];
            if idx.is_empty() {
                continue;
            }
            let low = cached[s][idx[0]].logits_low.dims();
            let mut state = init_state(&head.config, low.n, low.h, low.w);
            for chunk in idx.chunks(unroll) {
                let window: Vec<WindowFrame<'_>> = chunk
                    .iter()
                    .map(|&f| WindowFrame {
                        bundle: &cached[s][f],
                        labels: &data.sequences[s].frames[f].labels,
                    })
                    .collect();
                let mut out = bptt_step(head, &window, &state, &loss_fn)?;
                if !out.loss.is_finite() {
                    return Err(Error::Numeric(format!("loss diverged in epoch {epoch}")));
                }
                if head.config.cell == CellKind::Simple {
                    clip_global_norm(&mut out.grads, plan.simple_rnn_clip);
                }
                opt.update(head, &out.grads, lr, plan.weight_decay)?;
                loss_sum += out.loss;
                state = out.state;
            }
        }
        let rec = LossRecord {
            epoch,
            phase_lr: lr,
            mean_loss: loss_sum / frames.len().max(1) as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        progress(&rec);
        records.push(rec);
    }
    Ok(TrainLog {
        records,
        class_weights: weights,
    })
}
