//! 2D convolution (cross-correlation) with zero padding.

use rayon::prelude::*;

use crate::error::{contract, Error, Result};
use crate::tensor::{Dims, KernelBank, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding of `k / 2` on every side; output is `ceil(len / stride)`.
    Same,
    Valid,
}

impl Padding {
    fn amount(self, k: usize) -> usize {
        match self {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        }
    }
}

fn out_len(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if len + 2 * pad < k {
        return Err(Error::Contract(format!(
            "input extent {len} too small for kernel {k} with padding {pad}"
        )));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

/// Output dims of `conv2d` for the given input and kernel geometry.
pub fn conv2d_output_dims(
    input: Dims,
    bank: &KernelBank,
    stride: usize,
    padding: Padding,
) -> Result<Dims> {
    let oh = out_len(input.h, bank.kh, stride, padding.amount(bank.kh))?;
    let ow = out_len(input.w, bank.kw, stride, padding.amount(bank.kw))?;
    Ok(Dims::new(input.n, bank.out_c, oh, ow))
}

fn check(input: &Tensor4, bank: &KernelBank, stride: usize) -> Result<()> {
    contract!(
        input.dims().c == bank.in_c,
        "conv2d: input has {} channels, kernel expects {}",
        input.dims().c,
        bank.in_c
    );
    if stride != 1 && stride != 2 {
        return Err(Error::Config(format!("conv2d: unsupported stride {stride}")));
    }
    Ok(())
}

struct Geometry {
    stride: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    inp: Dims,
    out: Dims,
}

impl Geometry {
    fn new(input: Dims, bank: &KernelBank, stride: usize, padding: Padding) -> Result<Self> {
        Ok(Geometry {
            stride,
            kh: bank.kh,
            kw: bank.kw,
            ph: padding.amount(bank.kh),
            pw: padding.amount(bank.kw),
            inp: input,
            out: conv2d_output_dims(input, bank, stride, padding)?,
        })
    }

    /// Rows of the column matrix: one per `(in_c, ky, kx)`.
    fn col_rows(&self) -> usize {
        self.inp.c * self.kh * self.kw
    }

    /// A 1x1, stride-1 kernel reads the input plane directly.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Unfolds one batch item into a `(in_c*kh*kw) x (oh*ow)` matrix.
    fn im2col(&self, src: &[f64], col: &mut [f64]) {
        let (ih, iw) = (self.inp.h as isize, self.inp.w as isize);
        let (oh, ow) = (self.out.h, self.out.w);
        let plane = self.inp.plane();
        let mut row = 0;
        for ic in 0..self.inp.c {
            let s = &src[ic * plane..(ic + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.ph as isize;
                        let d = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= ih {
                            d.fill(0.0);
                            continue;
                        }
                        let srow = &s[iy as usize * self.inp.w..(iy as usize + 1) * self.inp.w];
                        for (ox, v) in d.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pw as isize;
                            *v = if ix < 0 || ix >= iw { 0.0 } else { srow[ix as usize] };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters the column matrix back onto
    /// an input-shaped buffer, accumulating.
    fn col2im(&self, col: &[f64], dst: &mut [f64]) {
        let (ih, iw) = (self.inp.h as isize, self.inp.w as isize);
        let (oh, ow) = (self.out.h, self.out.w);
        let plane = self.inp.plane();
        let mut row = 0;
        for ic in 0..self.inp.c {
            let d = &mut dst[ic * plane..(ic + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let src = &col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.ph as isize;
                        if iy < 0 || iy >= ih {
                            continue;
                        }
                        let drow = &mut d[iy as usize * self.inp.w..(iy as usize + 1) * self.inp.w];
                        for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pw as isize;
                            if ix >= 0 && ix < iw {
                                drow[ix as usize] += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c` with `op` selected by the
/// strides passed through.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the callers size `a`, `b` and `c` for the given shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[n, o, y, x] = bias[o] + sum_{i, ky, kx} w[o, i, ky, kx] * in[n, i, y*s + ky - p, x*s + kx - p]`.
pub fn conv2d(
    input: &Tensor4,
    bank: &KernelBank,
    stride: usize,
    padding: Padding,
) -> Result<Tensor4> {
    check(input, bank, stride)?;
    input.ensure_finite("conv2d")?;
    let g = Geometry::new(input.dims(), bank, stride, padding)?;
    let mut out = Tensor4::zeros(g.out);
    let p = g.out.plane();
    let k = g.col_rows();
    let item_len = g.out.c * p;
    out.data_mut()
        .par_chunks_mut(item_len)
        .enumerate()
        .for_each(|(n, dst)| {
            if let Some(b) = &bank.bias {
                for (oc, plane) in dst.chunks_mut(p).enumerate() {
                    plane.fill(b[oc]);
                }
            }
            let owned;
            let col: &[f64] = if g.is_pointwise() {
                input.item(n)
            } else {
                let mut buf = vec![0.0; k * p];
                g.im2col(input.item(n), &mut buf);
                owned = buf;
                &owned
            };
            let rs = k as isize;
            gemm(bank.out_c, k, p, &bank.weights, (rs, 1), col, (p as isize, 1), 1.0, dst);
        });
    Ok(out)
}

/// Gradients of `conv2d` given the upstream gradient: `(d_input, d_kernel)`.
/// `d_kernel` carries a bias gradient exactly when `bank` has a bias.
pub fn conv2d_backward(
    input: &Tensor4,
    bank: &KernelBank,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor4,
) -> Result<(Tensor4, KernelBank)> {
    check(input, bank, stride)?;
    let g = Geometry::new(input.dims(), bank, stride, padding)?;
    grad_out.expect_dims(g.out, "conv2d_backward grad_out")?;
    let p = g.out.plane();
    let k = g.col_rows();
    let mut d_input = Tensor4::zeros(g.inp);
    let mut d_bank = bank.zeros_like();
    let mut col = vec![0.0; k * p];
    let mut d_col = vec![0.0; k * p];
    for n in 0..g.inp.n {
        let gout = grad_out.item(n);
        let src: &[f64] = if g.is_pointwise() {
            input.item(n)
        } else {
            g.im2col(input.item(n), &mut col);
            &col
        };
        // dW[o, k] += sum_p gout[o, p] * col[k, p]
        gemm(
            bank.out_c,
            p,
            k,
            gout,
            (p as isize, 1),
            src,
            (1, p as isize),
            1.0,
            &mut d_bank.weights,
        );
        // dcol[k, p] = sum_o W[o, k] * gout[o, p]
        let rs = k as isize;
        if g.is_pointwise() {
            gemm(k, bank.out_c, p, &bank.weights, (1, rs), gout, (p as isize, 1), 1.0, d_input.item_mut(n));
        } else {
            gemm(k, bank.out_c, p, &bank.weights, (1, rs), gout, (p as isize, 1), 0.0, &mut d_col);
            g.col2im(&d_col, d_input.item_mut(n));
        }
    }
    if let Some(db) = d_bank.bias.as_mut() {
        for n in 0..g.out.n {
            for (oc, b) in db.iter_mut().enumerate() {
                *b += grad_out.plane(n, oc).iter().sum::<f64>();
            }
        }
    }
    Ok((d_input, d_bank))
}
