use super::head::{head_backward, head_forward_taped};
use super::{HeadParams, HeadState};
use crate::error::{contract, Result};
use crate::fcn::{merge_logits, merge_logits_backward, LogitsBundle};
use crate::labels::LabelMap;
use crate::tensor::Tensor4;

/// Per-frame loss on full-resolution logits. Returns the loss value and its
/// gradient with respect to the logits.
pub trait FrameLoss {
    fn loss(&self, logits_full: &Tensor4, labels: &LabelMap) -> Result<(f64, Tensor4)>;
}

impl<F> FrameLoss for F
where
    F: Fn(&Tensor4, &LabelMap) -> Result<(f64, Tensor4)>,
{
    fn loss(&self, logits_full: &Tensor4, labels: &LabelMap) -> Result<(f64, Tensor4)> {
        self(logits_full, labels)
    }
}

/// A frame as seen by the head stage: cached FCN outputs plus ground truth.
#[derive(Clone, Copy, Debug)]
pub struct WindowFrame<'a> {
    pub bundle: &'a LogitsBundle,
    pub labels: &'a LabelMap,
}

#[derive(Clone, Debug)]
pub struct BpttOutput {
    pub grads: HeadParams,
    /// State after the last frame, detached from the window's graph.
    pub state: HeadState,
    /// Sum of per-frame losses over the window.
    pub loss: f64,
}

/// Forward and backward over one truncation window. Gradients stop at the
/// window's start: `carried` is treated as a constant.
pub fn bptt_step(
    params: &HeadParams,
    window: &[WindowFrame<'_>],
    carried: &HeadState,
    loss_fn: &dyn FrameLoss,
) -> Result<BpttOutput> {
    contract!(!window.is_empty(), "bptt_step on an empty window");
    contract!(
        window.len() <= params.config.unroll,
        "window of {} frames exceeds unroll {}",
        window.len(),
        params.config.unroll
    );
    let inputs: Vec<Tensor4> = window.iter().map(|f| f.bundle.logits_low.clone()).collect();
    let (outputs, state, tapes) = head_forward_taped(params, &inputs, carried)?;
    let mut total = 0.0;
    let mut d_outputs = Vec::with_capacity(window.len());
    for (frame, y) in window.iter().zip(&outputs) {
        let b = frame.bundle;
        let full_dims = b.logits_full.dims();
        let full = merge_logits(y, &b.skip_logits, full_dims.h, full_dims.w)?;
        let (l, d_full) = loss_fn.loss(&full, frame.labels)?;
        total += l;
        let skip_dims: Vec<_> = b.skip_logits.iter().map(|s| s.dims()).collect();
        let (d_low, _) = merge_logits_backward(&d_full, y.dims(), &skip_dims)?;
        d_outputs.push(d_low);
    }
    let back = head_backward(params, &tapes, &d_outputs, None)?;
    Ok(BpttOutput {
        grads: back.grads,
        state,
        loss: total,
    })
}

/// Sums [`bptt_step`] gradients over consecutive windows of `unroll` frames
/// covering `frames`, starting from zero state. No parameter update happens
/// between windows.
pub fn truncated_bptt(
    params: &HeadParams,
    frames: &[WindowFrame<'_>],
    loss_fn: &dyn FrameLoss,
) -> Result<(HeadParams, f64)> {
    contract!(!frames.is_empty(), "truncated_bptt on an empty sequence");
    let d = frames[0].bundle.logits_low.dims();
    let mut state = super::init_state(&params.config, d.n, d.h, d.w);
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for window in frames.chunks(params.config.unroll) {
        let out = bptt_step(params, window, &state, loss_fn)?;
        crate::params::accumulate(&mut grads, &out.grads);
        total += out.loss;
        state = out.state;
    }
    Ok((grads, total))
}
