//! Recurrent heads that rewrite the lowest-resolution logit map of the FCN.
//!
//! A head is a stack of convolutional recurrent layers (simple ReLU RNN or
//! ConvLSTM with peepholes) followed by a 1x1 convolution back to class
//! logits. Time indexing: step `t` consumes `(x_t, state_{t-1})` and emits
//! `state_t`.

mod bptt;
mod convlstm;
pub mod diagnostics;
mod head;
mod simple;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::params::{visit_bank, visit_bank_mut, ParamKind, ParamSet, Visitor, VisitorMut};
use crate::tensor::{Dims, KernelBank, Tensor4};

pub use bptt::{bptt_step, truncated_bptt, BpttOutput, FrameLoss, WindowFrame};
pub use convlstm::{convlstm_step, convlstm_step_backward, LstmTape};
pub use head::{
    head_backward, head_forward, head_forward_taped, init_state, HeadBackward, StepTape,
};
pub use simple::{simple_rnn_step, simple_rnn_step_backward, SimpleTape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// `o_t = ReLU(U * x_t + W * o_{t-1} + b)`
    Simple,
    Convlstm,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Simple => "simple",
            CellKind::Convlstm => "convlstm",
        }
    }
}

/// Shape of the peephole weights `W_si`, `W_sf`, `W_so`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeepholeMode {
    /// One scalar per channel, broadcast over space.
    PerChannel,
    /// One weight per channel and pixel; ties the head to a fixed map size.
    PerElement { height: usize, width: usize },
}

/// Which cell state the output gate reads through its peephole.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatePeek {
    /// The state produced in this step (`s_t`).
    NewState,
    /// The state entering this step (`s_{t-1}`).
    PreviousState,
}

/// How the head output combines with the FCN's low-resolution logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    Replace,
    /// Head output is added to the original logits (residual correction).
    Add,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnConfig {
    pub cell: CellKind,
    pub layers: usize,
    pub filter: [usize; 2],
    pub hidden_channels: usize,
    /// Truncation length for backpropagation through time.
    pub unroll: usize,
    pub num_classes: usize,
    pub peephole: PeepholeMode,
    pub output_gate_peek: GatePeek,
    pub merge: MergeMode,
    pub forget_bias: f64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self::desk(CellKind::Convlstm, 4)
    }
}

impl RnnConfig {
    /// Three layers of 3x3 filters with 8 hidden channels, unrolled 5 steps.
    pub fn desk(cell: CellKind, num_classes: usize) -> Self {
        RnnConfig {
            cell,
            layers: 3,
            filter: [3, 3],
            hidden_channels: 8,
            unroll: 5,
            num_classes,
            peephole: PeepholeMode::PerChannel,
            output_gate_peek: GatePeek::NewState,
            merge: MergeMode::Replace,
            forget_bias: 1.0,
        }
    }

    /// Three layers of 5x5 filters with 15 hidden channels.
    pub fn large(cell: CellKind, num_classes: usize) -> Self {
        RnnConfig {
            filter: [5, 5],
            hidden_channels: 15,
            ..Self::desk(cell, num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 {
            return bad("recurrent head needs at least one layer");
        }
        if self.unroll == 0 {
            return bad("unroll must be >= 1");
        }
        if self.hidden_channels == 0 || self.num_classes == 0 {
            return bad("channel counts must be >= 1");
        }
        if self.filter[0] % 2 == 0 || self.filter[1] % 2 == 0 {
            return bad("recurrent filter size must be odd");
        }
        if let PeepholeMode::PerElement { height, width } = self.peephole {
            if height == 0 || width == 0 {
                return bad("per-element peephole needs a non-empty map size");
            }
        }
        Ok(())
    }

    fn layer_input_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.num_classes
        } else {
            self.hidden_channels
        }
    }
}

/// Element-wise peephole weights, broadcast over space in per-channel mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Peephole {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

impl Peephole {
    pub fn zeros(channels: usize, mode: PeepholeMode) -> Self {
        let (height, width) = match mode {
            PeepholeMode::PerChannel => (1, 1),
            PeepholeMode::PerElement { height, width } => (height, width),
        };
        Peephole {
            channels,
            height,
            width,
            weights: vec![0.0; channels * height * width],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Peephole {
            weights: vec![0.0; self.weights.len()],
            ..*self
        }
    }

    fn check(&self, d: Dims) -> Result<()> {
        contract!(d.c == self.channels, "peephole channel mismatch");
        contract!(
            (self.height == 1 && self.width == 1) || (self.height == d.h && self.width == d.w),
            "per-element peephole is {}x{}, state is {}x{}",
            self.height,
            self.width,
            d.h,
            d.w
        );
        Ok(())
    }

    #[inline]
    fn index(&self, c: usize, y: usize, x: usize) -> usize {
        if self.height == 1 && self.width == 1 {
            c
        } else {
            (c * self.height + y) * self.width + x
        }
    }

    /// `acc += w ∘ s`
    fn apply_into(&self, s: &Tensor4, acc: &mut Tensor4) -> Result<()> {
        let d = s.dims();
        self.check(d)?;
        for n in 0..d.n {
            for c in 0..d.c {
                for y in 0..d.h {
                    for x in 0..d.w {
                        let i = s.index(n, c, y, x);
                        acc.data_mut()[i] += self.weights[self.index(c, y, x)] * s.data()[i];
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds `sum(d_a ∘ s)` into this gradient container and
    /// `d_a ∘ w` into `d_s`.
    fn backward(
        &self,
        d_a: &Tensor4,
        s: &Tensor4,
        grad: &mut Peephole,
        d_s: &mut Tensor4,
    ) {
        let d = s.dims();
        for n in 0..d.n {
            for c in 0..d.c {
                for y in 0..d.h {
                    for x in 0..d.w {
                        let i = s.index(n, c, y, x);
                        let k = self.index(c, y, x);
                        grad.weights[k] += d_a.data()[i] * s.data()[i];
                        d_s.data_mut()[i] += d_a.data()[i] * self.weights[k];
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimpleRnnLayer {
    /// `U`, with the layer bias.
    pub input: KernelBank,
    /// `W`, no bias.
    pub recurrent: KernelBank,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmLayer {
    /// Input-to-gate kernels; their biases are `b_i`, `b_f`, `b_s`, `b_o`.
    pub xi: KernelBank,
    pub xf: KernelBank,
    pub xs: KernelBank,
    pub xo: KernelBank,
    /// Output-to-gate (recurrent) kernels, no bias.
    pub oi: KernelBank,
    pub of: KernelBank,
    pub os: KernelBank,
    pub oo: KernelBank,
    pub peep_i: Peephole,
    pub peep_f: Peephole,
    pub peep_o: Peephole,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellLayers {
    Simple(Vec<SimpleRnnLayer>),
    Convlstm(Vec<ConvLstmLayer>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub config: RnnConfig,
    pub cells: CellLayers,
    /// Final 1x1 convolution, hidden channels to classes.
    pub output: KernelBank,
}

/// Hidden state `s` and output `o` of one layer. Simple RNN layers keep `s`
/// at zero and only use `o`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub s: Tensor4,
    pub o: Tensor4,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadState {
    pub layers: Vec<LayerState>,
}

impl HeadState {
    pub fn zeros_like(&self) -> Self {
        HeadState {
            layers: self
                .layers
                .iter()
                .map(|l| LayerState {
                    s: Tensor4::zeros(l.s.dims()),
                    o: Tensor4::zeros(l.o.dims()),
                })
                .collect(),
        }
    }

    pub fn check(&self, config: &RnnConfig, spatial: Dims) -> Result<()> {
        contract!(
            self.layers.len() == config.layers,
            "state has {} layers, head has {}",
            self.layers.len(),
            config.layers
        );
        let want = Dims::new(spatial.n, config.hidden_channels, spatial.h, spatial.w);
        for l in &self.layers {
            contract!(
                l.s.dims() == want && l.o.dims() == want,
                "state dims {} do not match expected {want}",
                l.o.dims()
            );
        }
        Ok(())
    }
}

/// Deterministic initialization: fan-in scaled normal weights, zero biases
/// except the forget-gate bias (`config.forget_bias`), zero peepholes.
pub fn build_head(config: &RnnConfig, seed: u64) -> Result<HeadParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [kh, kw] = config.filter;
    let h = config.hidden_channels;
    let cells = match config.cell {
        CellKind::Simple => CellLayers::Simple(
            (0..config.layers)
                .map(|l| {
                    let in_c = config.layer_input_channels(l);
                    Ok(SimpleRnnLayer {
                        input: KernelBank::fan_in_normal(h, in_c, kh, kw, true, 1.0, &mut rng)?,
                        recurrent: KernelBank::fan_in_normal(h, h, kh, kw, false, 1.0, &mut rng)?,
                    })
                })
                .collect::<Result<_>>()?,
        ),
        CellKind::Convlstm => CellLayers::Convlstm(
            (0..config.layers)
                .map(|l| {
                    let in_c = config.layer_input_channels(l);
                    let mut x = || KernelBank::fan_in_normal(h, in_c, kh, kw, true, 1.0, &mut rng);
                    let (xi, mut xf, xs, xo) = (x()?, x()?, x()?, x()?);
                    xf.bias.as_mut().expect("has bias").fill(config.forget_bias);
                    let mut o = || KernelBank::fan_in_normal(h, h, kh, kw, false, 1.0, &mut rng);
                    let (oi, of, os, oo) = (o()?, o()?, o()?, o()?);
                    let p = Peephole::zeros(h, config.peephole);
                    Ok(ConvLstmLayer {
                        xi,
                        xf,
                        xs,
                        xo,
                        oi,
                        of,
                        os,
                        oo,
                        peep_i: p.clone(),
                        peep_f: p.clone(),
                        peep_o: p,
                    })
                })
                .collect::<Result<_>>()?,
        ),
    };
    let output = KernelBank::fan_in_normal(config.num_classes, h, 1, 1, true, 1.0, &mut rng)?;
    Ok(HeadParams {
        config: config.clone(),
        cells,
        output,
    })
}

impl SimpleRnnLayer {
    fn zeros_like(&self) -> Self {
        SimpleRnnLayer {
            input: self.input.zeros_like(),
            recurrent: self.recurrent.zeros_like(),
        }
    }
}

impl ConvLstmLayer {
    fn zeros_like(&self) -> Self {
        ConvLstmLayer {
            xi: self.xi.zeros_like(),
            xf: self.xf.zeros_like(),
            xs: self.xs.zeros_like(),
            xo: self.xo.zeros_like(),
            oi: self.oi.zeros_like(),
            of: self.of.zeros_like(),
            os: self.os.zeros_like(),
            oo: self.oo.zeros_like(),
            peep_i: self.peep_i.zeros_like(),
            peep_f: self.peep_f.zeros_like(),
            peep_o: self.peep_o.zeros_like(),
        }
    }

    fn banks(&self) -> [(&'static str, &KernelBank); 8] {
        [
            ("xi", &self.xi),
            ("xf", &self.xf),
            ("xs", &self.xs),
            ("xo", &self.xo),
            ("oi", &self.oi),
            ("of", &self.of),
            ("os", &self.os),
            ("oo", &self.oo),
        ]
    }

    fn banks_mut(&mut self) -> [(&'static str, &mut KernelBank); 8] {
        [
            ("xi", &mut self.xi),
            ("xf", &mut self.xf),
            ("xs", &mut self.xs),
            ("xo", &mut self.xo),
            ("oi", &mut self.oi),
            ("of", &mut self.of),
            ("os", &mut self.os),
            ("oo", &mut self.oo),
        ]
    }

    fn peepholes(&self) -> [(&'static str, &Peephole); 3] {
        [("si", &self.peep_i), ("sf", &self.peep_f), ("so", &self.peep_o)]
    }

    fn peepholes_mut(&mut self) -> [(&'static str, &mut Peephole); 3] {
        [
            ("si", &mut self.peep_i),
            ("sf", &mut self.peep_f),
            ("so", &mut self.peep_o),
        ]
    }
}

impl HeadParams {
    pub fn zeros_like(&self) -> Self {
        HeadParams {
            config: self.config.clone(),
            cells: match &self.cells {
                CellLayers::Simple(v) => {
                    CellLayers::Simple(v.iter().map(SimpleRnnLayer::zeros_like).collect())
                }
                CellLayers::Convlstm(v) => {
                    CellLayers::Convlstm(v.iter().map(ConvLstmLayer::zeros_like).collect())
                }
            },
            output: self.output.zeros_like(),
        }
    }

    pub fn cell_kind(&self) -> CellKind {
        self.config.cell
    }
}

impl ParamSet for HeadParams {
    fn visit(&self, f: &mut Visitor<'_>) {
        match &self.cells {
            CellLayers::Simple(layers) => {
                for (l, layer) in layers.iter().enumerate() {
                    visit_bank(&format!("rnn.layer{l}.u"), &layer.input, f);
                    visit_bank(&format!("rnn.layer{l}.w"), &layer.recurrent, f);
                }
            }
            CellLayers::Convlstm(layers) => {
                for (l, layer) in layers.iter().enumerate() {
                    for (name, bank) in layer.banks() {
                        visit_bank(&format!("rnn.layer{l}.w_{name}"), bank, f);
                    }
                    for (name, p) in layer.peepholes() {
                        f(
                            &format!("rnn.layer{l}.w_{name}"),
                            [1, p.channels, p.height, p.width],
                            &p.weights,
                            ParamKind::Trainable,
                        );
                    }
                }
            }
        }
        visit_bank("rnn.output", &self.output, f);
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_>) {
        match &mut self.cells {
            CellLayers::Simple(layers) => {
                for (l, layer) in layers.iter_mut().enumerate() {
                    visit_bank_mut(&format!("rnn.layer{l}.u"), &mut layer.input, f);
                    visit_bank_mut(&format!("rnn.layer{l}.w"), &mut layer.recurrent, f);
                }
            }
            CellLayers::Convlstm(layers) => {
                for (l, layer) in layers.iter_mut().enumerate() {
                    for (name, bank) in layer.banks_mut() {
                        visit_bank_mut(&format!("rnn.layer{l}.w_{name}"), bank, f);
                    }
                    for (name, p) in layer.peepholes_mut() {
                        let dims = [1, p.channels, p.height, p.width];
                        f(
                            &format!("rnn.layer{l}.w_{name}"),
                            dims,
                            &mut p.weights,
                            ParamKind::Trainable,
                        );
                    }
                }
            }
        }
        visit_bank_mut("rnn.output", &mut self.output, f);
    }
}
