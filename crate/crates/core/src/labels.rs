use crate::error::{contract, Result};

/// Label value excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 255;

/// Per-pixel class ids for a batch of `n` frames of `h x w` pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        contract!(
            data.len() == n * h * w,
            "label map data length {} does not match {n}x{h}x{w}",
            data.len()
        );
        Ok(LabelMap { n, h, w, data })
    }

    pub fn filled(n: usize, h: usize, w: usize, label: u8) -> Self {
        LabelMap {
            n,
            h,
            w,
            data: vec![label; n * h * w],
        }
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        let p = self.h * self.w;
        &self.data[i * p..(i + 1) * p]
    }

    pub fn stack(items: &[&LabelMap]) -> Result<Self> {
        contract!(!items.is_empty(), "cannot stack an empty list of label maps");
        let (h, w) = (items[0].h, items[0].w);
        let mut data = Vec::new();
        let mut n = 0;
        for m in items {
            contract!(m.h == h && m.w == w, "label map size mismatch");
            n += m.n;
            data.extend_from_slice(&m.data);
        }
        Ok(LabelMap { n, h, w, data })
    }

    /// Pixel counts per class in `0..num_classes`; ignore pixels are skipped,
    /// other out-of-range ids are reported as an error by the caller.
    pub fn histogram(&self, num_classes: usize) -> Vec<u64> {
        let mut h = vec![0u64; num_classes];
        for &l in &self.data {
            if (l as usize) < num_classes {
                h[l as usize] += 1;
            }
        }
        h
    }

    /// Mirror every frame left to right.
    pub fn flip_horizontal(&self) -> LabelMap {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.w) {
            row.reverse();
        }
        out
    }
}
