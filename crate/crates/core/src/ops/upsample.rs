//! Fixed bilinear upsampling (half-pixel centers, edge clamped).

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor4};

pub const SUPPORTED_FACTORS: [usize; 3] = [2, 4, 8];

fn check_factor(factor: usize) -> Result<()> {
    if SUPPORTED_FACTORS.contains(&factor) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "bilinear upsampling factor {factor} not in {SUPPORTED_FACTORS:?}"
        )))
    }
}

/// Interpolation taps for one output coordinate: `w0 * in[i0] + w1 * in[i1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

/// Per-axis interpolation table. Output sample `o` sits at source coordinate
/// `(o + 0.5) / factor - 0.5`, clamped to `[0, len - 1]`.
pub fn axis_taps(len: usize, factor: usize) -> Vec<Tap> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let l = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            Tap {
                i0,
                i1,
                w0: 1.0 - l,
                w1: l,
            }
        })
        .collect()
}

pub fn bilinear_upsample(input: &Tensor4, factor: usize) -> Result<Tensor4> {
    check_factor(factor)?;
    let d = input.dims();
    let od = d.with_spatial(d.h * factor, d.w * factor);
    let ty = axis_taps(d.h, factor);
    let tx = axis_taps(d.w, factor);
    let mut out = Tensor4::zeros(od);
    for n in 0..d.n {
        for c in 0..d.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, a) in ty.iter().enumerate() {
                let r0 = &src[a.i0 * d.w..(a.i0 + 1) * d.w];
                let r1 = &src[a.i1 * d.w..(a.i1 + 1) * d.w];
                let drow = &mut dst[oy * od.w..(oy + 1) * od.w];
                for (ox, b) in tx.iter().enumerate() {
                    drow[ox] = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1])
                        + a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
                }
            }
        }
    }
    Ok(out)
}

/// Transpose of [`bilinear_upsample`]: scatters each output gradient back
/// onto the four source pixels with the same weights.
pub fn bilinear_upsample_backward(
    grad_out: &Tensor4,
    factor: usize,
    input_dims: Dims,
) -> Result<Tensor4> {
    check_factor(factor)?;
    let d = input_dims;
    let od = d.with_spatial(d.h * factor, d.w * factor);
    grad_out.expect_dims(od, "bilinear_upsample_backward")?;
    let ty = axis_taps(d.h, factor);
    let tx = axis_taps(d.w, factor);
    let mut grad_in = Tensor4::zeros(d);
    for n in 0..d.n {
        for c in 0..d.c {
            let src = grad_out.plane(n, c);
            let dst = grad_in.plane_mut(n, c);
            for (oy, a) in ty.iter().enumerate() {
                let grow = &src[oy * od.w..(oy + 1) * od.w];
                for (ox, b) in tx.iter().enumerate() {
                    let g = grow[ox];
                    dst[a.i0 * d.w + b.i0] += a.w0 * b.w0 * g;
                    dst[a.i0 * d.w + b.i1] += a.w0 * b.w1 * g;
                    dst[a.i1 * d.w + b.i0] += a.w1 * b.w0 * g;
                    dst[a.i1 * d.w + b.i1] += a.w1 * b.w1 * g;
                }
            }
        }
    }
    Ok(grad_in)
}
