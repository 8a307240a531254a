//! Residual fully convolutional network with multi-resolution skip heads.
//!
//! Layout: a strided stem convolution, then a list of stages separated by
//! 2x2 max pooling. A stage optionally starts with a transition convolution
//! (when its channel count differs from its input), followed by residual
//! blocks `conv-BN-ReLU, conv-BN, add, ReLU`. A 1x1 prediction head reads the
//! last stage (the lowest resolution) and each tapped stage. The low-res
//! logits are upsampled and summed with the tapped logits from coarse to
//! fine, then upsampled to the input resolution. All upsampling is fixed
//! bilinear and all merging happens on logits.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::ops::{
    batch_norm_backward, batch_norm_forward, bilinear_upsample, bilinear_upsample_backward,
    conv2d, conv2d_backward, maxpool2, maxpool2_backward, BnCache, Padding, Phase, PoolIndices,
    SUPPORTED_FACTORS,
};
use crate::params::{visit_bank, visit_bank_mut, visit_bn, visit_bn_mut, ParamSet, Visitor, VisitorMut};
use crate::tensor::{BatchNormParams, Dims, KernelBank, Tensor4};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcnConfig {
    pub num_classes: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub block_kernel: usize,
    pub stages: Vec<StageConfig>,
    /// Stage indices whose outputs feed a skip prediction head.
    pub skip_taps: Vec<usize>,
    pub input_height: usize,
    pub input_width: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for FcnConfig {
    fn default() -> Self {
        Self::desk(4)
    }
}

impl FcnConfig {
    /// Small configuration for 48x64 inputs: 7x7x16 stride-2 stem, three
    /// stages of three residual blocks (16, 32, 32 channels), taps after the
    /// first two stages, lowest-resolution head at 1/8 scale.
    pub fn desk(num_classes: usize) -> Self {
        FcnConfig {
            num_classes,
            stem_channels: 16,
            stem_kernel: 7,
            stem_stride: 2,
            block_kernel: 3,
            stages: vec![
                StageConfig { blocks: 3, channels: 16 },
                StageConfig { blocks: 3, channels: 32 },
                StageConfig { blocks: 3, channels: 32 },
            ],
            skip_taps: vec![0, 1],
            input_height: 48,
            input_width: 64,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// The 45-layer layout at 240x320: 64-channel stem, four stages of
    /// (4, 6, 6, 6) blocks at (64, 128, 128, 128) channels, taps after the
    /// second and third stages.
    pub fn fcn45(num_classes: usize) -> Self {
        FcnConfig {
            num_classes,
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            block_kernel: 3,
            stages: vec![
                StageConfig { blocks: 4, channels: 64 },
                StageConfig { blocks: 6, channels: 128 },
                StageConfig { blocks: 6, channels: 128 },
                StageConfig { blocks: 6, channels: 128 },
            ],
            skip_taps: vec![1, 2],
            input_height: 240,
            input_width: 320,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// Downsampling factor of stage `i` relative to the input.
    pub fn stage_stride(&self, i: usize) -> usize {
        self.stem_stride << i
    }

    pub fn total_downsampling(&self) -> usize {
        self.stage_stride(self.stages.len() - 1)
    }

    pub fn low_res_dims(&self) -> (usize, usize) {
        let f = self.total_downsampling();
        (self.input_height / f, self.input_width / f)
    }

    /// Upsampling factors of the merge: one per tap (applied to the running
    /// sum before adding that tap, coarsest tap last in the list order), and
    /// the final factor to input resolution.
    pub fn merge_factors(&self) -> (Vec<usize>, usize) {
        let last = self.stages.len() - 1;
        let factors = self
            .skip_taps
            .iter()
            .enumerate()
            .map(|(k, &tap)| {
                let next = self.skip_taps.get(k + 1).copied().unwrap_or(last);
                1usize << (next - tap)
            })
            .collect();
        let first = self.skip_taps.first().copied().unwrap_or(last);
        (factors, self.stage_stride(first))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes == 0 || self.num_classes > 254 {
            return bad(format!("num_classes must be in 1..=254, got {}", self.num_classes));
        }
        if self.stages.len() < 2 {
            return bad("FCN needs at least two stages".into());
        }
        if self.stem_channels == 0 || self.stages.iter().any(|s| s.channels == 0) {
            return bad("channel counts must be >= 1".into());
        }
        if self.stem_stride != 1 && self.stem_stride != 2 {
            return bad(format!("stem stride must be 1 or 2, got {}", self.stem_stride));
        }
        if self.stem_kernel % 2 == 0 || self.block_kernel % 2 == 0 {
            return bad("kernel sizes must be odd".into());
        }
        let last = self.stages.len() - 1;
        if self.skip_taps.iter().any(|&t| t >= last) {
            return bad(format!("skip taps must index stages before the last ({last})"));
        }
        if self.skip_taps.windows(2).any(|w| w[0] >= w[1]) {
            return bad("skip taps must be distinct and increasing".into());
        }
        let f = self.total_downsampling();
        if self.input_height == 0
            || self.input_width == 0
            || self.input_height % f != 0
            || self.input_width % f != 0
        {
            return bad(format!(
                "input {}x{} not divisible by total downsampling {f}",
                self.input_height, self.input_width
            ));
        }
        let (factors, last_factor) = self.merge_factors();
        for f in factors.iter().chain(std::iter::once(&last_factor)) {
            if !SUPPORTED_FACTORS.contains(f) {
                return bad(format!("merge would need unsupported upsampling factor {f}"));
            }
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) || !(self.bn_eps > 0.0) {
            return bad("batchnorm momentum must be in (0,1) and eps > 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn {
    pub conv: KernelBank,
    pub bn: BatchNormParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub first: ConvBn,
    pub second: ConvBn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageParams {
    pub transition: Option<ConvBn>,
    pub blocks: Vec<ResidualBlock>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcnParams {
    pub config: FcnConfig,
    pub stem: ConvBn,
    pub stages: Vec<StageParams>,
    /// One 1x1 head per entry of `config.skip_taps`.
    pub skip_heads: Vec<KernelBank>,
    pub low_head: KernelBank,
}

/// Class logits at every merge level.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitsBundle {
    pub logits_low: Tensor4,
    /// Same order as the config's skip taps (finest first).
    pub skip_logits: Vec<Tensor4>,
    pub logits_full: Tensor4,
}

/// Deterministic initialization: fan-in scaled normal weights (He gain for
/// convolutions feeding a ReLU, unit gain for heads), zero biases, BN with
/// `gamma = 1`, `beta = 0`.
pub fn build_fcn(config: &FcnConfig, seed: u64) -> Result<FcnParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let he = 2f64.sqrt();
    let conv_bn = |rng: &mut ChaCha8Rng, out_c, in_c, k| -> Result<ConvBn> {
        Ok(ConvBn {
            conv: KernelBank::fan_in_normal(out_c, in_c, k, k, false, he, rng)?,
            bn: BatchNormParams::new(out_c, config.bn_momentum, config.bn_eps)?,
        })
    };
    let stem = conv_bn(&mut rng, config.stem_channels, 3, config.stem_kernel)?;
    let mut stages = Vec::with_capacity(config.stages.len());
    let mut in_c = config.stem_channels;
    for s in &config.stages {
        let transition = if s.channels != in_c {
            Some(conv_bn(&mut rng, s.channels, in_c, config.block_kernel)?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(s.blocks);
        for _ in 0..s.blocks {
            blocks.push(ResidualBlock {
                first: conv_bn(&mut rng, s.channels, s.channels, config.block_kernel)?,
                second: conv_bn(&mut rng, s.channels, s.channels, config.block_kernel)?,
            });
        }
        stages.push(StageParams { transition, blocks });
        in_c = s.channels;
    }
    let head = |rng: &mut ChaCha8Rng, in_c| {
        KernelBank::fan_in_normal(config.num_classes, in_c, 1, 1, true, 1.0, rng)
    };
    let skip_heads = config
        .skip_taps
        .iter()
        .map(|&t| head(&mut rng, config.stages[t].channels))
        .collect::<Result<Vec<_>>>()?;
    let low_head = head(&mut rng, in_c)?;
    Ok(FcnParams {
        config: config.clone(),
        stem,
        stages,
        skip_heads,
        low_head,
    })
}

impl ConvBn {
    fn zeros_like(&self) -> Self {
        ConvBn {
            conv: self.conv.zeros_like(),
            bn: self.bn.zeros_like(),
        }
    }
}

impl FcnParams {
    /// Same-shaped container with every trainable value zero.
    pub fn zeros_like(&self) -> Self {
        FcnParams {
            config: self.config.clone(),
            stem: self.stem.zeros_like(),
            stages: self
                .stages
                .iter()
                .map(|s| StageParams {
                    transition: s.transition.as_ref().map(ConvBn::zeros_like),
                    blocks: s
                        .blocks
                        .iter()
                        .map(|b| ResidualBlock {
                            first: b.first.zeros_like(),
                            second: b.second.zeros_like(),
                        })
                        .collect(),
                })
                .collect(),
            skip_heads: self.skip_heads.iter().map(KernelBank::zeros_like).collect(),
            low_head: self.low_head.zeros_like(),
        }
    }

    fn conv_bns(&self) -> Vec<&ConvBn> {
        let mut v = vec![&self.stem];
        for s in &self.stages {
            v.extend(s.transition.iter());
            for b in &s.blocks {
                v.push(&b.first);
                v.push(&b.second);
            }
        }
        v
    }

    fn conv_bns_mut(&mut self) -> Vec<&mut ConvBn> {
        let mut v = vec![&mut self.stem];
        for s in &mut self.stages {
            v.extend(s.transition.iter_mut());
            for b in &mut s.blocks {
                v.push(&mut b.first);
                v.push(&mut b.second);
            }
        }
        v
    }

    /// Folds the batch statistics recorded in a train-phase tape into the
    /// running statistics of every batchnorm layer.
    pub fn absorb_batch_stats(&mut self, tape: &FcnTape) {
        let caches = tape.bn_caches();
        for (layer, cache) in self.conv_bns_mut().into_iter().zip(caches) {
            layer.bn.absorb_batch_stats(cache);
        }
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }
}

fn layer_names(config: &FcnConfig) -> Vec<String> {
    let mut names = vec!["fcn.stem".to_string()];
    for (i, s) in config.stages.iter().enumerate() {
        let in_c = if i == 0 {
            config.stem_channels
        } else {
            config.stages[i - 1].channels
        };
        if s.channels != in_c {
            names.push(format!("fcn.stage{i}.transition"));
        }
        for j in 0..s.blocks {
            names.push(format!("fcn.stage{i}.block{j}.first"));
            names.push(format!("fcn.stage{i}.block{j}.second"));
        }
    }
    names
}

impl ParamSet for FcnParams {
    fn visit(&self, f: &mut Visitor<'_>) {
        for (name, layer) in layer_names(&self.config).iter().zip(self.conv_bns()) {
            visit_bank(&format!("{name}.conv"), &layer.conv, f);
            visit_bn(&format!("{name}.bn"), &layer.bn, f);
        }
        for (k, h) in self.skip_heads.iter().enumerate() {
            visit_bank(&format!("fcn.head.skip{k}"), h, f);
        }
        visit_bank("fcn.head.low", &self.low_head, f);
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_>) {
        let names = layer_names(&self.config);
        for (name, layer) in names.iter().zip(self.conv_bns_mut()) {
            visit_bank_mut(&format!("{name}.conv"), &mut layer.conv, f);
            visit_bn_mut(&format!("{name}.bn"), &mut layer.bn, f);
        }
        for (k, h) in self.skip_heads.iter_mut().enumerate() {
            visit_bank_mut(&format!("fcn.head.skip{k}"), h, f);
        }
        visit_bank_mut("fcn.head.low", &mut self.low_head, f);
    }
}

// ---------------------------------------------------------------------------
// Forward and backward
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct ConvBnTape {
    input: Tensor4,
    bn: BnCache,
    /// After ReLU when `relu` is set, otherwise the BN output.
    output: Tensor4,
    relu: bool,
    stride: usize,
}

#[derive(Clone, Debug)]
struct BlockTape {
    first: ConvBnTape,
    second: ConvBnTape,
    output: Tensor4,
}

#[derive(Clone, Debug)]
struct StageTape {
    pool: Option<PoolIndices>,
    transition: Option<ConvBnTape>,
    blocks: Vec<BlockTape>,
    output: Tensor4,
}

/// Intermediate values of one forward pass, consumed by [`fcn_backward`].
#[derive(Clone, Debug)]
pub struct FcnTape {
    image_dims: Dims,
    stem: ConvBnTape,
    stages: Vec<StageTape>,
    bundle_dims: (Dims, Vec<Dims>),
}

impl FcnTape {
    fn conv_bn_tapes(&self) -> Vec<&ConvBnTape> {
        let mut v = vec![&self.stem];
        for s in &self.stages {
            v.extend(s.transition.iter());
            for b in &s.blocks {
                v.push(&b.first);
                v.push(&b.second);
            }
        }
        v
    }

    fn bn_caches(&self) -> Vec<&BnCache> {
        self.conv_bn_tapes().into_iter().map(|t| &t.bn).collect()
    }

    /// Fingerprint of every ReLU mask and max-pool winner in the pass.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mask = |t: &Tensor4, h: &mut DefaultHasher| {
            for chunk in t.data().chunks(64) {
                let bits = chunk
                    .iter()
                    .enumerate()
                    .fold(0u64, |acc, (i, &v)| acc | (((v > 0.0) as u64) << i));
                bits.hash(h);
            }
        };
        for t in self.conv_bn_tapes() {
            if t.relu {
                mask(&t.output, &mut h);
            }
        }
        for s in &self.stages {
            if let Some(p) = &s.pool {
                p.argmax.hash(&mut h);
            }
            for b in &s.blocks {
                mask(&b.output, &mut h);
            }
        }
        h.finish()
    }
}

fn conv_bn_forward(
    layer: &ConvBn,
    input: &Tensor4,
    stride: usize,
    relu: bool,
    phase: Phase,
) -> Result<(Tensor4, ConvBnTape)> {
    let z = conv2d(input, &layer.conv, stride, Padding::Same)?;
    let (mut y, bn) = batch_norm_forward(&z, &layer.bn, phase)?;
    if relu {
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok((
        y.clone(),
        ConvBnTape {
            input: input.clone(),
            bn,
            output: y,
            relu,
            stride,
        },
    ))
}

fn conv_bn_backward(
    layer: &ConvBn,
    tape: &ConvBnTape,
    grad_out: &Tensor4,
    grads: &mut ConvBn,
) -> Result<Tensor4> {
    let d_bn_out = if tape.relu {
        tape.output
            .zip_map(grad_out, |y, g| if y > 0.0 { g } else { 0.0 })?
    } else {
        grad_out.clone()
    };
    let (d_z, d_gamma, d_beta) = batch_norm_backward(&d_bn_out, &tape.bn, &layer.bn)?;
    for (a, b) in grads.bn.gamma.iter_mut().zip(d_gamma) {
        *a += b;
    }
    for (a, b) in grads.bn.beta.iter_mut().zip(d_beta) {
        *a += b;
    }
    let (d_in, d_bank) = conv2d_backward(&tape.input, &layer.conv, tape.stride, Padding::Same, &d_z)?;
    grads.conv.accumulate(&d_bank);
    Ok(d_in)
}

fn block_forward(block: &ResidualBlock, x: &Tensor4, phase: Phase) -> Result<(Tensor4, BlockTape)> {
    let (a, first) = conv_bn_forward(&block.first, x, 1, true, phase)?;
    let (b, second) = conv_bn_forward(&block.second, &a, 1, false, phase)?;
    let out = b.zip_map(x, |u, v| (u + v).max(0.0))?;
    Ok((
        out.clone(),
        BlockTape {
            first,
            second,
            output: out,
        },
    ))
}

fn block_backward(
    block: &ResidualBlock,
    tape: &BlockTape,
    grad_out: &Tensor4,
    grads: &mut ResidualBlock,
) -> Result<Tensor4> {
    let d_sum = tape
        .output
        .zip_map(grad_out, |y, g| if y > 0.0 { g } else { 0.0 })?;
    let d_a = conv_bn_backward(&block.second, &tape.second, &d_sum, &mut grads.second)?;
    let mut d_x = conv_bn_backward(&block.first, &tape.first, &d_a, &mut grads.first)?;
    d_x.add_assign(&d_sum)?;
    Ok(d_x)
}

/// Sums coarse-to-fine: `m = up(m) + skip_k` for the taps from coarsest to
/// finest, then upsamples to `out_h x out_w`.
pub fn merge_logits(
    low: &Tensor4,
    skips: &[Tensor4],
    out_h: usize,
    out_w: usize,
) -> Result<Tensor4> {
    let mut m = low.clone();
    for skip in skips.iter().rev() {
        let f = ratio(m.dims(), skip.dims())?;
        m = bilinear_upsample(&m, f)?;
        m.add_assign(skip)?;
    }
    let f = ratio(m.dims(), m.dims().with_spatial(out_h, out_w))?;
    bilinear_upsample(&m, f)
}

/// Returns `(d_low, d_skips)` for [`merge_logits`].
pub fn merge_logits_backward(
    d_full: &Tensor4,
    low_dims: Dims,
    skip_dims: &[Dims],
) -> Result<(Tensor4, Vec<Tensor4>)> {
    let finest = skip_dims.first().copied().unwrap_or(low_dims);
    let f = ratio(finest, d_full.dims())?;
    let mut d_m = bilinear_upsample_backward(d_full, f, finest)?;
    let mut d_skips = Vec::with_capacity(skip_dims.len());
    for k in 0..skip_dims.len() {
        d_skips.push(d_m.clone());
        let coarser = skip_dims.get(k + 1).copied().unwrap_or(low_dims);
        let f = ratio(coarser, skip_dims[k])?;
        d_m = bilinear_upsample_backward(&d_m, f, coarser)?;
    }
    Ok((d_m, d_skips))
}

fn ratio(small: Dims, big: Dims) -> Result<usize> {
    contract!(
        small.n == big.n && small.c == big.c,
        "merge level mismatch: {small} vs {big}"
    );
    contract!(
        big.h % small.h == 0 && big.w % small.w == 0 && big.h / small.h == big.w / small.w,
        "merge levels {small} and {big} differ by a non-uniform factor"
    );
    Ok(big.h / small.h)
}

/// Re-runs only the skip merge with `new_low` in place of the low-resolution
/// logits. Everything else in the bundle is kept as is.
pub fn replace_low_logits(bundle: &LogitsBundle, new_low: Tensor4) -> Result<LogitsBundle> {
    new_low.expect_dims(bundle.logits_low.dims(), "replace_low_logits")?;
    let d = bundle.logits_full.dims();
    let logits_full = merge_logits(&new_low, &bundle.skip_logits, d.h, d.w)?;
    Ok(LogitsBundle {
        logits_low: new_low,
        skip_logits: bundle.skip_logits.clone(),
        logits_full,
    })
}

pub fn fcn_forward(params: &FcnParams, image: &Tensor4, phase: Phase) -> Result<LogitsBundle> {
    fcn_forward_taped(params, image, phase).map(|(b, _)| b)
}

pub fn fcn_forward_taped(
    params: &FcnParams,
    image: &Tensor4,
    phase: Phase,
) -> Result<(LogitsBundle, FcnTape)> {
    let cfg = &params.config;
    let d = image.dims();
    contract!(d.c == 3, "fcn_forward: image must have 3 channels, got {}", d.c);
    contract!(
        d.h == cfg.input_height && d.w == cfg.input_width,
        "fcn_forward: image is {}x{}, network expects {}x{}",
        d.h,
        d.w,
        cfg.input_height,
        cfg.input_width
    );
    let (mut x, stem) = conv_bn_forward(&params.stem, image, cfg.stem_stride, true, phase)?;
    let mut stage_tapes = Vec::with_capacity(params.stages.len());
    for (i, stage) in params.stages.iter().enumerate() {
        let pool = if i > 0 {
            let (p, idx) = maxpool2(&x);
            x = p;
            Some(idx)
        } else {
            None
        };
        let transition = match &stage.transition {
            Some(t) => {
                let (y, tape) = conv_bn_forward(t, &x, 1, true, phase)?;
                x = y;
                Some(tape)
            }
            None => None,
        };
        let mut blocks = Vec::with_capacity(stage.blocks.len());
        for b in &stage.blocks {
            let (y, tape) = block_forward(b, &x, phase)?;
            x = y;
            blocks.push(tape);
        }
        stage_tapes.push(StageTape {
            pool,
            transition,
            blocks,
            output: x.clone(),
        });
    }
    let logits_low = conv2d(&x, &params.low_head, 1, Padding::Same)?;
    let skip_logits = cfg
        .skip_taps
        .iter()
        .zip(&params.skip_heads)
        .map(|(&t, h)| conv2d(&stage_tapes[t].output, h, 1, Padding::Same))
        .collect::<Result<Vec<_>>>()?;
    let logits_full = merge_logits(&logits_low, &skip_logits, d.h, d.w)?;
    let bundle_dims = (
        logits_low.dims(),
        skip_logits.iter().map(Tensor4::dims).collect(),
    );
    Ok((
        LogitsBundle {
            logits_low,
            skip_logits,
            logits_full,
        },
        FcnTape {
            image_dims: d,
            stem,
            stages: stage_tapes,
            bundle_dims,
        },
    ))
}

/// Backpropagates a gradient on `logits_full` through the whole network.
/// Returns `(parameter gradients, d_image)`.
pub fn fcn_backward(
    params: &FcnParams,
    tape: &FcnTape,
    d_full: &Tensor4,
) -> Result<(FcnParams, Tensor4)> {
    contract!(
        d_full.dims() == tape.image_dims.with_channels(params.config.num_classes),
        "fcn_backward: gradient dims {} do not match the forward pass",
        d_full.dims()
    );
    let (low_dims, skip_dims) = &tape.bundle_dims;
    let (d_low, d_skips) = merge_logits_backward(d_full, *low_dims, skip_dims)?;
    let mut grads = params.zeros_like();
    let nstages = params.stages.len();
    let mut d_stage_out: Vec<Option<Tensor4>> = vec![None; nstages];

    let last = &tape.stages[nstages - 1].output;
    let (d_x, d_head) = conv2d_backward(last, &params.low_head, 1, Padding::Same, &d_low)?;
    grads.low_head.accumulate(&d_head);
    d_stage_out[nstages - 1] = Some(d_x);
    for (k, &t) in params.config.skip_taps.iter().enumerate() {
        let out = &tape.stages[t].output;
        let (d_x, d_head) =
            conv2d_backward(out, &params.skip_heads[k], 1, Padding::Same, &d_skips[k])?;
        grads.skip_heads[k].accumulate(&d_head);
        add_into(&mut d_stage_out[t], d_x)?;
    }

    for i in (0..nstages).rev() {
        let stage = &params.stages[i];
        let st = &tape.stages[i];
        let mut d = d_stage_out[i]
            .take()
            .unwrap_or_else(|| Tensor4::zeros(st.output.dims()));
        for (j, b) in stage.blocks.iter().enumerate().rev() {
            d = block_backward(b, &st.blocks[j], &d, &mut grads.stages[i].blocks[j])?;
        }
        if let (Some(t), Some(tt)) = (&stage.transition, &st.transition) {
            let g = grads.stages[i].transition.as_mut().expect("same layout");
            d = conv_bn_backward(t, tt, &d, g)?;
        }
        if let Some(idx) = &st.pool {
            d = maxpool2_backward(&d, idx)?;
        }
        if i > 0 {
            add_into(&mut d_stage_out[i - 1], d)?;
        } else {
            let d_image = conv_bn_backward(&params.stem, &tape.stem, &d, &mut grads.stem)?;
            return Ok((grads, d_image));
        }
    }
    unreachable!("the loop returns at stage 0")
}

fn add_into(slot: &mut Option<Tensor4>, t: Tensor4) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&t),
        None => {
            *slot = Some(t);
            Ok(())
        }
    }
}
