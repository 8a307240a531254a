//! Rank-4 tensors and the parameter containers built from them.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;

use crate::error::{contract, Error, Result};

/// Shape of a [`Tensor4`]: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_channels(self, c: usize) -> Self {
        Dims { c, ..self }
    }

    pub fn with_spatial(self, h: usize, w: usize) -> Self {
        Dims { h, w, ..self }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major `(n, c, h, w)` array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor4 {
    dims: Dims,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor4({})", self.dims)
    }
}

impl Tensor4 {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        contract!(
            dims.n >= 1 && dims.c >= 1 && dims.h >= 1 && dims.w >= 1,
            "tensor dims must all be >= 1, got {dims}"
        );
        contract!(
            data.len() == dims.len(),
            "tensor data length {} does not match dims {dims}",
            data.len()
        );
        Ok(Tensor4 { dims, data })
    }

    /// Panics if any dimension is zero.
    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        assert!(
            dims.n >= 1 && dims.c >= 1 && dims.h >= 1 && dims.w >= 1,
            "tensor dims must all be >= 1, got {dims}"
        );
        Tensor4 {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        let mut i = 0;
        for n in 0..dims.n {
            for c in 0..dims.c {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        t.data[i] = f(n, c, y, x);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    pub fn random_normal<R: Rng + ?Sized>(dims: Dims, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..dims.len()).map(|_| normal.sample(rng)).collect();
        Tensor4 { dims, data }
    }

    pub fn random_uniform<R: Rng + ?Sized>(dims: Dims, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..dims.len()).map(|_| rng.random_range(lo..hi)).collect();
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims.c + c) * self.dims.h + y) * self.dims.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// The `h*w` slice of one channel of one batch item.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of batch item `n`, contiguous.
    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.dims.c * self.dims.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.dims.c * self.dims.plane();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Copy of batch item `n` as a single-item tensor.
    pub fn batch_item(&self, n: usize) -> Tensor4 {
        Tensor4 {
            dims: Dims { n: 1, ..self.dims },
            data: self.item(n).to_vec(),
        }
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Tensor4]) -> Result<Tensor4> {
        contract!(!items.is_empty(), "cannot stack an empty list of tensors");
        let first = items[0].dims;
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut n = 0;
        for t in items {
            contract!(
                t.dims.c == first.c && t.dims.h == first.h && t.dims.w == first.w,
                "stack shape mismatch: {} vs {}",
                t.dims,
                first
            );
            n += t.dims.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor4 {
            dims: Dims { n, ..first },
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor4, f: impl Fn(f64, f64) -> f64) -> Result<Tensor4> {
        self.expect_dims(other.dims, "zip_map")?;
        Ok(Tensor4 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        self.expect_dims(other.dims, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor4) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what}: non-finite value in input")))
        }
    }

    pub fn expect_dims(&self, dims: Dims, what: &str) -> Result<()> {
        contract!(
            self.dims == dims,
            "{what}: expected dims {dims}, got {}",
            self.dims
        );
        Ok(())
    }

    /// Per-pixel argmax over channels, one label per `(n, y, x)`.
    pub fn argmax_channels(&self) -> Vec<u8> {
        let Dims { n, c, h, w } = self.dims;
        let plane = h * w;
        let mut out = vec![0u8; n * plane];
        for b in 0..n {
            let item = self.item(b);
            for p in 0..plane {
                let mut best = 0;
                let mut best_v = item[p];
                for k in 1..c {
                    let v = item[k * plane + p];
                    if v > best_v {
                        best_v = v;
                        best = k;
                    }
                }
                out[b * plane + p] = best as u8;
            }
        }
        out
    }
}

/// A bank of 2D convolution kernels with optional per-output bias.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBank {
    pub out_c: usize,
    pub in_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl KernelBank {
    pub fn zeros(out_c: usize, in_c: usize, kh: usize, kw: usize, with_bias: bool) -> Result<Self> {
        contract!(
            out_c >= 1 && in_c >= 1,
            "kernel bank needs at least one input and output channel"
        );
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size {kh}x{kw} must be odd in both directions"
            )));
        }
        Ok(KernelBank {
            out_c,
            in_c,
            kh,
            kw,
            weights: vec![0.0; out_c * in_c * kh * kw],
            bias: with_bias.then(|| vec![0.0; out_c]),
        })
    }

    /// Fan-in scaled normal initialization, `std = gain / sqrt(in_c * kh * kw)`.
    pub fn fan_in_normal<R: Rng + ?Sized>(
        out_c: usize,
        in_c: usize,
        kh: usize,
        kw: usize,
        with_bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut bank = Self::zeros(out_c, in_c, kh, kw, with_bias)?;
        let std = gain / ((in_c * kh * kw) as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        for w in &mut bank.weights {
            *w = normal.sample(rng);
        }
        Ok(bank)
    }

    /// A zero bank with the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        KernelBank {
            weights: vec![0.0; self.weights.len()],
            bias: self.bias.as_ref().map(|b| vec![0.0; b.len()]),
            ..*self
        }
    }

    #[inline]
    pub fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_c + ic) * self.kh + ky) * self.kw + kx
    }

    pub fn accumulate(&mut self, other: &KernelBank) {
        debug_assert_eq!(self.weights.len(), other.weights.len());
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.bias.as_mut(), other.bias.as_ref()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_c, self.in_c, self.kh, self.kw]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
            && self.bias.iter().flatten().all(|v| v.is_finite())
    }
}

/// Per-channel batch normalization parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormParams {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::Config(format!(
                "batchnorm momentum must lie in (0, 1), got {momentum}"
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::Config(format!("batchnorm eps must be > 0, got {eps}")));
        }
        Ok(BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            eps,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Gradient accumulator: zero gamma/beta, running statistics untouched.
    pub fn zeros_like(&self) -> Self {
        BatchNormParams {
            gamma: vec![0.0; self.gamma.len()],
            beta: vec![0.0; self.beta.len()],
            running_mean: vec![0.0; self.gamma.len()],
            running_var: vec![0.0; self.gamma.len()],
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dims_rejected() {
        assert!(Tensor4::new(Dims::new(0, 1, 1, 1), vec![]).is_err());
        assert!(Tensor4::new(Dims::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor4::from_fn(Dims::new(2, 3, 4, 5), |n, c, y, x| {
            (n * 1000 + c * 100 + y * 10 + x) as f64
        });
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[t.index(1, 2, 3, 4)], 1234.0);
        assert_eq!(t.plane(1, 2)[3 * 5 + 4], 1234.0);
    }

    #[test]
    fn even_kernels_rejected() {
        assert!(matches!(
            KernelBank::zeros(1, 1, 2, 3, false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn argmax_picks_first_of_ties() {
        let t = Tensor4::new(Dims::new(1, 3, 1, 2), vec![1.0, 0.0, 1.0, 2.0, 0.0, 2.0]).unwrap();
        assert_eq!(t.argmax_channels(), vec![0, 1]);
    }
}
