use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::convlstm::{convlstm_step, convlstm_step_backward, LstmTape};
use super::simple::{simple_rnn_step, simple_rnn_step_backward, SimpleTape};
use super::{CellKind, CellLayers, HeadParams, HeadState, LayerState, MergeMode, RnnConfig};
use crate::error::{contract, Result};
use crate::ops::{conv2d, conv2d_backward, Padding};
use crate::tensor::{Dims, Tensor4};

#[derive(Clone, Debug)]
pub enum LayerTape {
    Simple(SimpleTape),
    Lstm(LstmTape),
}

/// Everything one time step of the head needs for its backward pass.
#[derive(Clone, Debug)]
pub struct StepTape {
    pub layers: Vec<LayerTape>,
    /// Output of the top layer, input to the final 1x1 convolution.
    pub top: Tensor4,
}

impl StepTape {
    /// Fingerprint of the ReLU masks of a simple RNN head; constant for
    /// ConvLSTM heads, which are smooth.
    pub fn branch_signature(tapes: &[StepTape]) -> u64 {
        let mut h = DefaultHasher::new();
        for t in tapes {
            for l in &t.layers {
                if let LayerTape::Simple(s) = l {
                    for chunk in s.o.data().chunks(64) {
                        chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |acc, (i, &v)| acc | (((v > 0.0) as u64) << i))
                            .hash(&mut h);
                    }
                }
            }
        }
        h.finish()
    }
}

/// Zero state for a head run on `n` maps of `h x w`.
pub fn init_state(config: &RnnConfig, n: usize, h: usize, w: usize) -> HeadState {
    let d = Dims::new(n, config.hidden_channels, h, w);
    HeadState {
        layers: (0..config.layers)
            .map(|_| LayerState {
                s: Tensor4::zeros(d),
                o: Tensor4::zeros(d),
            })
            .collect(),
    }
}

fn check_inputs(params: &HeadParams, inputs: &[Tensor4], init: &HeadState) -> Result<()> {
    contract!(!inputs.is_empty(), "recurrent head called on an empty sequence");
    let d0 = inputs[0].dims();
    contract!(
        d0.c == params.config.num_classes,
        "head expects {} input channels, got {}",
        params.config.num_classes,
        d0.c
    );
    for x in inputs {
        x.expect_dims(d0, "recurrent head input")?;
        x.ensure_finite("recurrent head input")?;
    }
    init.check(&params.config, d0)
}

/// Runs the head over `inputs` (one low-resolution logit map per frame)
/// starting from `init`. Returns the per-frame outputs, the final state and
/// the tapes for [`head_backward`].
pub fn head_forward_taped(
    params: &HeadParams,
    inputs: &[Tensor4],
    init: &HeadState,
) -> Result<(Vec<Tensor4>, HeadState, Vec<StepTape>)> {
    check_inputs(params, inputs, init)?;
    let cfg = &params.config;
    let mut state = init.clone();
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut tapes = Vec::with_capacity(inputs.len());
    for x in inputs {
        let mut layer_in = x.clone();
        let mut layer_tapes = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let (next, tape) = match &params.cells {
                CellLayers::Simple(v) => {
                    let (s, t) = simple_rnn_step(&v[l], &layer_in, &state.layers[l])?;
                    (s, LayerTape::Simple(t))
                }
                CellLayers::Convlstm(v) => {
                    let (s, t) =
                        convlstm_step(&v[l], &layer_in, &state.layers[l], cfg.output_gate_peek)?;
                    (s, LayerTape::Lstm(t))
                }
            };
            layer_in = next.o.clone();
            state.layers[l] = next;
            layer_tapes.push(tape);
        }
        let mut y = conv2d(&layer_in, &params.output, 1, Padding::Same)?;
        if cfg.merge == MergeMode::Add {
            y.add_assign(x)?;
        }
        y.ensure_finite("recurrent head output")?;
        outputs.push(y);
        tapes.push(StepTape {
            layers: layer_tapes,
            top: layer_in,
        });
    }
    Ok((outputs, state, tapes))
}

pub fn head_forward(
    params: &HeadParams,
    inputs: &[Tensor4],
    init: &HeadState,
) -> Result<(Vec<Tensor4>, HeadState)> {
    head_forward_taped(params, inputs, init).map(|(y, s, _)| (y, s))
}

#[derive(Clone, Debug)]
pub struct HeadBackward {
    pub grads: HeadParams,
    pub d_inputs: Vec<Tensor4>,
    /// Gradient with respect to the initial state.
    pub d_init: HeadState,
}

/// Backpropagation through time over the whole taped window.
///
/// `d_final` is the gradient arriving at the final state from outside the
/// window; `None` treats it as zero (truncation).
pub fn head_backward(
    params: &HeadParams,
    tapes: &[StepTape],
    d_outputs: &[Tensor4],
    d_final: Option<&HeadState>,
) -> Result<HeadBackward> {
    contract!(
        tapes.len() == d_outputs.len(),
        "{} tapes but {} output gradients",
        tapes.len(),
        d_outputs.len()
    );
    contract!(!tapes.is_empty(), "head_backward on an empty window");
    let cfg = &params.config;
    let state_dims = tapes[0].top.dims();
    let mut d_state = match d_final {
        Some(d) => {
            d.check(cfg, state_dims)?;
            d.clone()
        }
        None => init_state(cfg, state_dims.n, state_dims.h, state_dims.w),
    };
    let mut grads = params.zeros_like();
    let mut d_inputs = vec![Tensor4::zeros(Dims::new(1, 1, 1, 1)); tapes.len()];

    for t in (0..tapes.len()).rev() {
        let tape = &tapes[t];
        let (mut d_above, g_out) =
            conv2d_backward(&tape.top, &params.output, 1, Padding::Same, &d_outputs[t])?;
        grads.output.accumulate(&g_out);
        for l in (0..cfg.layers).rev() {
            let mut d_o = d_state.layers[l].o.clone();
            d_o.add_assign(&d_above)?;
            match (&params.cells, &mut grads.cells, &tape.layers[l]) {
                (CellLayers::Simple(p), CellLayers::Simple(g), LayerTape::Simple(tp)) => {
                    let (d_in, d_prev_o) = simple_rnn_step_backward(&p[l], tp, &d_o, &mut g[l])?;
                    d_state.layers[l].o = d_prev_o;
                    d_above = d_in;
                }
                (CellLayers::Convlstm(p), CellLayers::Convlstm(g), LayerTape::Lstm(tp)) => {
                    let (d_in, d_prev) = convlstm_step_backward(
                        &p[l],
                        tp,
                        cfg.output_gate_peek,
                        &d_o,
                        &d_state.layers[l].s,
                        &mut g[l],
                    )?;
                    d_state.layers[l] = d_prev;
                    d_above = d_in;
                }
                _ => {
                    return Err(crate::Error::Contract(
                        "tape does not belong to this head".into(),
                    ))
                }
            }
        }
        if cfg.merge == MergeMode::Add {
            d_above.add_assign(&d_outputs[t])?;
        }
        d_inputs[t] = d_above;
    }
    debug_assert!(matches!(
        (cfg.cell, &params.cells),
        (CellKind::Simple, CellLayers::Simple(_)) | (CellKind::Convlstm, CellLayers::Convlstm(_))
    ));
    Ok(HeadBackward {
        grads,
        d_inputs,
        d_init: d_state,
    })
}
