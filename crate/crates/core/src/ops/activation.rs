//! Elementwise nonlinearities and channel softmax.

use crate::error::Result;
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the forward output `y = f(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn pointwise(input: &Tensor4, f: Activation) -> Tensor4 {
    input.map(|v| f.apply(v))
}

/// `grad_in = grad_out * f'(x)`, given the forward output.
pub fn pointwise_backward(output: &Tensor4, grad_out: &Tensor4, f: Activation) -> Result<Tensor4> {
    output.zip_map(grad_out, |y, g| g * f.derivative_from_output(y))
}

/// Softmax over the channel axis at every pixel, max-subtracted.
pub fn softmax_channels(logits: &Tensor4) -> Tensor4 {
    let d = logits.dims();
    let plane = d.plane();
    let mut out = Tensor4::zeros(d);
    for n in 0..d.n {
        let src = logits.item(n);
        let dst = out.item_mut(n);
        for p in 0..plane {
            let mx = (0..d.c).map(|k| src[k * plane + p]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..d.c {
                let e = (src[k * plane + p] - mx).exp();
                dst[k * plane + p] = e;
                z += e;
            }
            for k in 0..d.c {
                dst[k * plane + p] /= z;
            }
        }
    }
    out
}
