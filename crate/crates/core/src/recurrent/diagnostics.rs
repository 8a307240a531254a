//! Constructed heads whose long-range gradient behaviour is known in advance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::convlstm::{convlstm_step, convlstm_step_backward};
use super::simple::{simple_rnn_step, simple_rnn_step_backward};
use super::{build_head, CellKind, CellLayers, GatePeek, LayerState, RnnConfig};
use crate::error::Result;
use crate::tensor::{Dims, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct CarouselReport {
    /// `‖s_T − s_0‖`
    pub state_drift: f64,
    /// Worst `‖(∂ sum(p ∘ s_T) / ∂s_0) − p‖` over the probe vectors.
    pub probe_error: f64,
}

fn single_layer(cell: CellKind, channels: usize) -> RnnConfig {
    RnnConfig {
        layers: 1,
        hidden_channels: channels,
        num_classes: channels,
        ..RnnConfig::desk(cell, channels)
    }
}

/// ConvLSTM layer with zero weights, forget bias +20 and input bias −20,
/// run for `steps` on random input from a small random `s_0`.
pub fn constant_error_carousel(steps: usize, probes: usize, seed: u64) -> Result<CarouselReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = single_layer(CellKind::Convlstm, 2);
    let mut head = build_head(&cfg, seed)?;
    let CellLayers::Convlstm(layers) = &mut head.cells else {
        unreachable!()
    };
    let layer = &mut layers[0];
    for (_, bank) in layer.banks_mut() {
        bank.weights.fill(0.0);
        if let Some(b) = bank.bias.as_mut() {
            b.fill(0.0);
        }
    }
    layer.xf.bias.as_mut().expect("bias").fill(20.0);
    layer.xi.bias.as_mut().expect("bias").fill(-20.0);

    let d = Dims::new(1, 2, 4, 4);
    let s0 = Tensor4::random_uniform(d, -0.5, 0.5, &mut rng);
    let mut state = LayerState {
        s: s0.clone(),
        o: Tensor4::zeros(d),
    };
    let mut tapes = Vec::with_capacity(steps);
    for _ in 0..steps {
        let x = Tensor4::random_normal(d, 1.0, &mut rng);
        let (next, tape) = convlstm_step(layer, &x, &state, GatePeek::NewState)?;
        state = next;
        tapes.push(tape);
    }
    let state_drift = state.s.zip_map(&s0, |a, b| a - b)?.norm();

    let mut probe_error: f64 = 0.0;
    let mut grads = layer.zeros_like();
    for _ in 0..probes {
        let p = Tensor4::random_uniform(d, -0.5, 0.5, &mut rng);
        let mut d_s = p.clone();
        let mut d_o = Tensor4::zeros(d);
        for tape in tapes.iter().rev() {
            let (_, prev) =
                convlstm_step_backward(layer, tape, GatePeek::NewState, &d_o, &d_s, &mut grads)?;
            d_s = prev.s;
            d_o = prev.o;
        }
        probe_error = probe_error.max(d_s.zip_map(&p, |a, b| a - b)?.norm());
    }
    Ok(CarouselReport {
        state_drift,
        probe_error,
    })
}

/// Frobenius norm of `∂o_T / ∂x_1` divided by that of `∂o_1 / ∂x_1` for a
/// single-layer head fed random frames.
///
/// The simple RNN gets a recurrent kernel whose only non-zero tap is the
/// centre one, holding `0.5 ×` a signed permutation, so every singular value
/// of the recurrent operator is 0.5; a large input bias keeps every ReLU
/// active. The ConvLSTM keeps its random initialization with the forget bias
/// raised to +4.
pub fn gradient_decay_ratio(cell: CellKind, steps: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let c = 4;
    let mut cfg = single_layer(cell, c);
    if cell == CellKind::Convlstm {
        cfg.forget_bias = 4.0;
    }
    let mut head = build_head(&cfg, seed)?;
    if let CellLayers::Simple(layers) = &mut head.cells {
        let w = &mut layers[0].recurrent;
        w.weights.fill(0.0);
        let (kh, kw) = (w.kh, w.kw);
        for oc in 0..c {
            let ic = (oc + 1) % c;
            let sign = if oc % 2 == 0 { 0.5 } else { -0.5 };
            let i = w.weight_index(oc, ic, kh / 2, kw / 2);
            w.weights[i] = sign;
        }
        // keep the ReLUs active so the decay comes from the kernel alone
        layers[0].input.bias.as_mut().expect("bias").fill(5.0);
    }
    let d = Dims::new(1, c, 6, 8);
    let xs: Vec<Tensor4> = (0..steps)
        .map(|_| Tensor4::random_normal(d, 1.0, &mut rng))
        .collect();
    let long = input_jacobian_norm(&head.cells, &xs, d)?;
    let short = input_jacobian_norm(&head.cells, &xs[..1], d)?;
    Ok(long / short)
}

/// `‖∂o_T / ∂x_1‖_F` by one backward pass per output coordinate.
fn input_jacobian_norm(cells: &CellLayers, xs: &[Tensor4], d: Dims) -> Result<f64> {
    let zero = LayerState {
        s: Tensor4::zeros(d),
        o: Tensor4::zeros(d),
    };
    let mut total = 0.0;
    match cells {
        CellLayers::Simple(layers) => {
            let layer = &layers[0];
            let mut state = zero;
            let mut tapes = Vec::new();
            for x in xs {
                let (next, tape) = simple_rnn_step(layer, x, &state)?;
                state = next;
                tapes.push(tape);
            }
            let mut grads = layer.zeros_like();
            for k in 0..d.len() {
                let mut d_o = Tensor4::zeros(d);
                d_o.data_mut()[k] = 1.0;
                let mut d_x = Tensor4::zeros(d);
                for tape in tapes.iter().rev() {
                    let (dx, d_prev) = simple_rnn_step_backward(layer, tape, &d_o, &mut grads)?;
                    d_x = dx;
                    d_o = d_prev;
                }
                total += d_x.data().iter().map(|v| v * v).sum::<f64>();
            }
        }
        CellLayers::Convlstm(layers) => {
            let layer = &layers[0];
            let mut state = zero;
            let mut tapes = Vec::new();
            for x in xs {
                let (next, tape) = convlstm_step(layer, x, &state, GatePeek::NewState)?;
                state = next;
                tapes.push(tape);
            }
            let mut grads = layer.zeros_like();
            for k in 0..d.len() {
                let mut d_o = Tensor4::zeros(d);
                d_o.data_mut()[k] = 1.0;
                let mut d_s = Tensor4::zeros(d);
                let mut d_x = Tensor4::zeros(d);
                for tape in tapes.iter().rev() {
                    let (dx, prev) = convlstm_step_backward(
                        layer,
                        tape,
                        GatePeek::NewState,
                        &d_o,
                        &d_s,
                        &mut grads,
                    )?;
                    d_x = dx;
                    d_o = prev.o;
                    d_s = prev.s;
                }
                total += d_x.data().iter().map(|v| v * v).sum::<f64>();
            }
        }
    }
    Ok(total.sqrt())
}
