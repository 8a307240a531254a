//! In-memory video dataset shared by training and evaluation.

use crate::error::{contract, Result};
use crate::labels::LabelMap;
use crate::tensor::{Dims, Tensor4};

/// One rendered frame: RGB in `[0, 1]` as a `1 x 3 x h x w` tensor plus its
/// label map.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Tensor4,
    pub labels: LabelMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: usize,
    pub frames: Vec<Frame>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub sequences: Vec<Sequence>,
}

/// Position of a frame inside a [`Dataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameRef {
    pub seq: usize,
    pub frame: usize,
}

impl Dataset {
    pub fn new(num_classes: usize, sequences: Vec<Sequence>) -> Result<Self> {
        contract!(!sequences.is_empty(), "dataset has no sequences");
        contract!(
            sequences.iter().all(|s| !s.frames.is_empty()),
            "dataset contains an empty sequence"
        );
        let first = &sequences[0].frames[0];
        let (height, width) = (first.labels.h, first.labels.w);
        for s in &sequences {
            for f in &s.frames {
                f.image
                    .expect_dims(Dims::new(1, 3, height, width), "dataset frame")?;
                contract!(
                    f.labels.n == 1 && f.labels.h == height && f.labels.w == width,
                    "label map size does not match frame size"
                );
            }
        }
        Ok(Dataset {
            num_classes,
            height,
            width,
            sequences,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }

    /// Frames in sequence order, then temporal order.
    pub fn frame_refs(&self) -> Vec<FrameRef> {
        self.sequences
            .iter()
            .enumerate()
            .flat_map(|(seq, s)| (0..s.frames.len()).map(move |frame| FrameRef { seq, frame }))
            .collect()
    }

    pub fn frame(&self, r: FrameRef) -> &Frame {
        &self.sequences[r.seq].frames[r.frame]
    }

    /// Pixel counts per class over all frames, ignore pixels excluded.
    pub fn label_histogram(&self) -> Vec<u64> {
        let mut h = vec![0u64; self.num_classes];
        for s in &self.sequences {
            for f in &s.frames {
                for (acc, c) in h.iter_mut().zip(f.labels.histogram(self.num_classes)) {
                    *acc += c;
                }
            }
        }
        h
    }
}
