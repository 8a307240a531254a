use super::{ConvLstmLayer, GatePeek, LayerState};
use crate::error::Result;
use crate::ops::{conv2d, conv2d_backward, sigmoid, Padding};
use crate::tensor::{KernelBank, Tensor4};

#[derive(Clone, Debug)]
pub struct LstmTape {
    pub x: Tensor4,
    pub prev: LayerState,
    pub i: Tensor4,
    pub f: Tensor4,
    pub g: Tensor4,
    pub og: Tensor4,
    pub s: Tensor4,
    pub tanh_s: Tensor4,
}

fn gate_pre(x: &Tensor4, o_prev: &Tensor4, wx: &KernelBank, wo: &KernelBank) -> Result<Tensor4> {
    let mut a = conv2d(x, wx, 1, Padding::Same)?;
    a.add_assign(&conv2d(o_prev, wo, 1, Padding::Same)?)?;
    Ok(a)
}

/// One ConvLSTM step with peepholes:
///
/// ```text
/// i  = σ(W_xi*x + W_oi*o' + w_si∘s' + b_i)
/// f  = σ(W_xf*x + W_of*o' + w_sf∘s' + b_f)
/// s  = f∘s' + i∘tanh(W_xs*x + W_os*o' + b_s)
/// og = σ(W_xo*x + W_oo*o' + w_so∘s_peek + b_o)
/// o  = og∘tanh(s)
/// ```
///
/// where `'` marks the previous step and `s_peek` is `s` or `s'` depending on
/// `peek`.
pub fn convlstm_step(
    layer: &ConvLstmLayer,
    x: &Tensor4,
    prev: &LayerState,
    peek: GatePeek,
) -> Result<(LayerState, LstmTape)> {
    let mut ai = gate_pre(x, &prev.o, &layer.xi, &layer.oi)?;
    layer.peep_i.apply_into(&prev.s, &mut ai)?;
    let mut af = gate_pre(x, &prev.o, &layer.xf, &layer.of)?;
    layer.peep_f.apply_into(&prev.s, &mut af)?;
    let ag = gate_pre(x, &prev.o, &layer.xs, &layer.os)?;
    let i = ai.map(sigmoid);
    let f = af.map(sigmoid);
    let g = ag.map(f64::tanh);

    let mut s = f.zip_map(&prev.s, |f, s| f * s)?;
    s.add_assign(&i.zip_map(&g, |i, g| i * g)?)?;

    let mut ao = gate_pre(x, &prev.o, &layer.xo, &layer.oo)?;
    match peek {
        GatePeek::NewState => layer.peep_o.apply_into(&s, &mut ao)?,
        GatePeek::PreviousState => layer.peep_o.apply_into(&prev.s, &mut ao)?,
    }
    let og = ao.map(sigmoid);
    let tanh_s = s.map(f64::tanh);
    let o = og.zip_map(&tanh_s, |a, b| a * b)?;

    let tape = LstmTape {
        x: x.clone(),
        prev: prev.clone(),
        i,
        f,
        g,
        og,
        s: s.clone(),
        tanh_s,
    };
    Ok((LayerState { s, o }, tape))
}

/// Given `dL/do_t` and `dL/ds_t` (the latter from the following step only),
/// accumulates parameter gradients into `grads` and returns
/// `(dL/dx_t, dL/d state_{t-1})`.
pub fn convlstm_step_backward(
    layer: &ConvLstmLayer,
    tape: &LstmTape,
    peek: GatePeek,
    d_o: &Tensor4,
    d_s_next: &Tensor4,
    grads: &mut ConvLstmLayer,
) -> Result<(Tensor4, LayerState)> {
    let t = tape;
    let d_ao = Tensor4::from_fn(d_o.dims(), |n, c, y, x| {
        let og = t.og.at(n, c, y, x);
        d_o.at(n, c, y, x) * t.tanh_s.at(n, c, y, x) * og * (1.0 - og)
    });
    let mut d_s = Tensor4::from_fn(d_o.dims(), |n, c, y, x| {
        let th = t.tanh_s.at(n, c, y, x);
        d_s_next.at(n, c, y, x) + d_o.at(n, c, y, x) * t.og.at(n, c, y, x) * (1.0 - th * th)
    });
    let mut d_s_prev = Tensor4::zeros(d_o.dims());
    match peek {
        GatePeek::NewState => layer.peep_o.backward(&d_ao, &t.s, &mut grads.peep_o, &mut d_s),
        GatePeek::PreviousState => {
            layer
                .peep_o
                .backward(&d_ao, &t.prev.s, &mut grads.peep_o, &mut d_s_prev)
        }
    }

    let d_af = Tensor4::from_fn(d_o.dims(), |n, c, y, x| {
        let f = t.f.at(n, c, y, x);
        d_s.at(n, c, y, x) * t.prev.s.at(n, c, y, x) * f * (1.0 - f)
    });
    let d_ai = Tensor4::from_fn(d_o.dims(), |n, c, y, x| {
        let i = t.i.at(n, c, y, x);
        d_s.at(n, c, y, x) * t.g.at(n, c, y, x) * i * (1.0 - i)
    });
    let d_ag = Tensor4::from_fn(d_o.dims(), |n, c, y, x| {
        let g = t.g.at(n, c, y, x);
        d_s.at(n, c, y, x) * t.i.at(n, c, y, x) * (1.0 - g * g)
    });
    d_s_prev.add_assign(&d_s.zip_map(&t.f, |a, b| a * b)?)?;
    layer
        .peep_i
        .backward(&d_ai, &t.prev.s, &mut grads.peep_i, &mut d_s_prev);
    layer
        .peep_f
        .backward(&d_af, &t.prev.s, &mut grads.peep_f, &mut d_s_prev);

    let mut d_x = Tensor4::zeros(t.x.dims());
    let mut d_o_prev = Tensor4::zeros(t.prev.o.dims());
    let gates: [(&Tensor4, &KernelBank, &KernelBank, &mut KernelBank, &mut KernelBank); 4] = [
        (&d_ai, &layer.xi, &layer.oi, &mut grads.xi, &mut grads.oi),
        (&d_af, &layer.xf, &layer.of, &mut grads.xf, &mut grads.of),
        (&d_ag, &layer.xs, &layer.os, &mut grads.xs, &mut grads.os),
        (&d_ao, &layer.xo, &layer.oo, &mut grads.xo, &mut grads.oo),
    ];
    for (d_a, wx, wo, gx, go) in gates {
        let (dx, gwx) = conv2d_backward(&t.x, wx, 1, Padding::Same, d_a)?;
        let (dop, gwo) = conv2d_backward(&t.prev.o, wo, 1, Padding::Same, d_a)?;
        d_x.add_assign(&dx)?;
        d_o_prev.add_assign(&dop)?;
        gx.accumulate(&gwx);
        go.accumulate(&gwo);
    }
    Ok((
        d_x,
        LayerState {
            s: d_s_prev,
            o: d_o_prev,
        },
    ))
}
