use super::{LayerState, SimpleRnnLayer};
use crate::error::Result;
use crate::ops::{conv2d, conv2d_backward, Padding};
use crate::tensor::Tensor4;

#[derive(Clone, Debug)]
pub struct SimpleTape {
    pub x: Tensor4,
    pub prev_o: Tensor4,
    pub o: Tensor4,
}

/// `o_t = ReLU(U * x_t + W * o_{t-1} + b)`. The `s` slot is passed through
/// untouched.
pub fn simple_rnn_step(
    layer: &SimpleRnnLayer,
    x: &Tensor4,
    prev: &LayerState,
) -> Result<(LayerState, SimpleTape)> {
    let mut a = conv2d(x, &layer.input, 1, Padding::Same)?;
    a.add_assign(&conv2d(&prev.o, &layer.recurrent, 1, Padding::Same)?)?;
    let o = a.map(|v| v.max(0.0));
    let tape = SimpleTape {
        x: x.clone(),
        prev_o: prev.o.clone(),
        o: o.clone(),
    };
    Ok((
        LayerState {
            s: prev.s.clone(),
            o,
        },
        tape,
    ))
}

/// Given `d_o = dL/do_t`, accumulates parameter gradients into `grads` and
/// returns `(dL/dx_t, dL/do_{t-1})`.
pub fn simple_rnn_step_backward(
    layer: &SimpleRnnLayer,
    tape: &SimpleTape,
    d_o: &Tensor4,
    grads: &mut SimpleRnnLayer,
) -> Result<(Tensor4, Tensor4)> {
    let d_a = tape
        .o
        .zip_map(d_o, |o, g| if o > 0.0 { g } else { 0.0 })?;
    let (d_x, g_u) = conv2d_backward(&tape.x, &layer.input, 1, Padding::Same, &d_a)?;
    let (d_prev, g_w) = conv2d_backward(&tape.prev_o, &layer.recurrent, 1, Padding::Same, &d_a)?;
    grads.input.accumulate(&g_u);
    grads.recurrent.accumulate(&g_w);
    Ok((d_x, d_prev))
}
