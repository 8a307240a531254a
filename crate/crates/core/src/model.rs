//! A trained FCN with an optional recurrent head, its per-sequence
//! inference, and the binary checkpoint format.
//!
//! Checkpoint layout: the magic `SEQSEG01`, then for each tensor a `u32`
//! name length, the UTF-8 name, four `u32` dims and the raw `f64` values,
//! all little-endian. FCN tensors come first, head tensors after. The
//! architecture lives in a JSON sidecar next to the file (`<file>.json`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcn::{build_fcn, fcn_forward, replace_low_logits, FcnConfig, FcnParams};
use crate::labels::LabelMap;
use crate::ops::Phase;
use crate::params::{ParamKind, ParamSet, Visitor, VisitorMut};
use crate::recurrent::{build_head, head_forward, init_state, CellKind, HeadParams, RnnConfig};
use crate::tensor::Tensor4;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEQSEG01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "fcn")]
    Fcn,
    #[serde(rename = "fcn+simple")]
    FcnSimple,
    #[serde(rename = "fcn+convlstm")]
    FcnConvlstm,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Fcn, Variant::FcnSimple, Variant::FcnConvlstm];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fcn => "fcn",
            Variant::FcnSimple => "fcn+simple",
            Variant::FcnConvlstm => "fcn+convlstm",
        }
    }

    /// File-name friendly form: `fcn`, `fcn_simple`, `fcn_convlstm`.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::Fcn => "fcn",
            Variant::FcnSimple => "fcn_simple",
            Variant::FcnConvlstm => "fcn_convlstm",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.slug() == s)
    }

    pub fn cell(self) -> Option<CellKind> {
        match self {
            Variant::Fcn => None,
            Variant::FcnSimple => Some(CellKind::Simple),
            Variant::FcnConvlstm => Some(CellKind::Convlstm),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegModel {
    pub fcn: FcnParams,
    pub head: Option<HeadParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub fcn: FcnConfig,
    pub rnn: Option<RnnConfig>,
}

impl SegModel {
    pub fn new(fcn: FcnParams, head: Option<HeadParams>) -> Result<Self> {
        if let Some(h) = &head {
            if h.config.num_classes != fcn.num_classes() {
                return Err(Error::Incompatible(format!(
                    "head expects {} classes, FCN predicts {}",
                    h.config.num_classes,
                    fcn.num_classes()
                )));
            }
        }
        Ok(SegModel { fcn, head })
    }

    pub fn num_classes(&self) -> usize {
        self.fcn.num_classes()
    }

    pub fn variant(&self) -> Variant {
        match self.head.as_ref().map(|h| h.cell_kind()) {
            None => Variant::Fcn,
            Some(CellKind::Simple) => Variant::FcnSimple,
            Some(CellKind::Convlstm) => Variant::FcnConvlstm,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            fcn: self.fcn.config.clone(),
            rnn: self.head.as_ref().map(|h| h.config.clone()),
        }
    }

    /// Same model with the recurrent head dropped or checked against
    /// `variant`.
    pub fn as_variant(&self, variant: Variant) -> Result<SegModel> {
        match variant.cell() {
            None => Ok(SegModel {
                fcn: self.fcn.clone(),
                head: None,
            }),
            Some(cell) => match &self.head {
                Some(h) if h.cell_kind() == cell => Ok(self.clone()),
                _ => Err(Error::Incompatible(format!(
                    "checkpoint holds variant {}, not {variant}",
                    self.variant()
                ))),
            },
        }
    }

    /// Full-resolution logits for every frame of one sequence. The head state
    /// starts at zero and is carried through all frames.
    pub fn sequence_logits(&self, frames: &[&Tensor4]) -> Result<Vec<Tensor4>> {
        let mut state = None;
        let mut out = Vec::with_capacity(frames.len());
        for image in frames {
            let bundle = fcn_forward(&self.fcn, image, Phase::Infer)?;
            match &self.head {
                None => out.push(bundle.logits_full),
                Some(head) => {
                    let low = bundle.logits_low.dims();
                    let s = state.unwrap_or_else(|| init_state(&head.config, low.n, low.h, low.w));
                    let (mut y, next) = head_forward(head, std::slice::from_ref(&bundle.logits_low), &s)?;
                    state = Some(next);
                    let merged = replace_low_logits(&bundle, y.pop().expect("one output"))?;
                    out.push(merged.logits_full);
                }
            }
        }
        Ok(out)
    }

    /// Per-pixel argmax labels for every frame of one sequence.
    pub fn predict_sequence(&self, frames: &[&Tensor4]) -> Result<Vec<LabelMap>> {
        self.sequence_logits(frames)?
            .into_iter()
            .map(|z| {
                let d = z.dims();
                LabelMap::new(d.n, d.h, d.w, z.argmax_channels())
            })
            .collect()
    }
}

impl ParamSet for SegModel {
    fn visit(&self, f: &mut Visitor<'_>) {
        self.fcn.visit(f);
        if let Some(h) = &self.head {
            h.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_>) {
        self.fcn.visit_mut(f);
        if let Some(h) = self.head.as_mut() {
            h.visit_mut(f);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_tensors<P: ParamSet + ?Sized>(params: &P) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    params.visit(&mut |name, dims, data, _| {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    out
}

pub fn decode_tensors(bytes: &[u8]) -> std::result::Result<Vec<NamedTensor>, String> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err("missing SEQSEG01 magic".into());
    }
    let mut pos = 8;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        if bytes.len() - pos < n {
            return Err("truncated checkpoint".into());
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    let mut out = Vec::new();
    loop {
        let Ok(len) = take(4) else { break };
        let len = u32::from_le_bytes(len.try_into().expect("4 bytes")) as usize;
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        }
        let count = dims.iter().product::<usize>();
        let raw = take(count.checked_mul(8).ok_or("tensor too large")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push(NamedTensor { name, dims, data });
    }
    Ok(out)
}

/// Copies `tensors` into `params` by name and order; every tensor of
/// `params` must be present with matching dims and nothing may be left over.
pub fn load_tensors<P: ParamSet + ?Sized>(params: &mut P, tensors: &[NamedTensor]) -> std::result::Result<(), String> {
    let mut i = 0;
    let mut err = None;
    params.visit_mut(&mut |name, dims, data, _| {
        if err.is_some() {
            return;
        }
        match tensors.get(i) {
            Some(t) if t.name == name && t.dims == dims => data.copy_from_slice(&t.data),
            Some(t) => {
                err = Some(format!(
                    "expected tensor {name} {dims:?}, found {} {:?}",
                    t.name, t.dims
                ))
            }
            None => err = Some(format!("missing tensor {name}")),
        }
        i += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if i != tensors.len() {
        return Err(format!("{} unexpected trailing tensors", tensors.len() - i));
    }
    Ok(())
}

pub fn save_checkpoint(model: &SegModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_tensors(model)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&model.architecture()).expect("serializable");
    std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SegModel> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let arch: Architecture =
        serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
    let fcn = build_fcn(&arch.fcn, 0).map_err(|e| Error::format(&side, e.to_string()))?;
    let head = arch
        .rnn
        .as_ref()
        .map(|c| build_head(c, 0))
        .transpose()
        .map_err(|e| Error::format(&side, e.to_string()))?;
    let mut model = SegModel::new(fcn, head)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = decode_tensors(&bytes).map_err(|m| Error::format(path, m))?;
    load_tensors(&mut model, &tensors).map_err(|m| Error::format(path, m))?;
    Ok(model)
}

/// True when every tensor, buffers included, matches bit for bit.
pub fn bitwise_equal<P: ParamSet + ?Sized>(a: &P, b: &P) -> bool {
    let collect = |p: &P| {
        let mut v: Vec<(String, ParamKind, Vec<u64>)> = Vec::new();
        p.visit(&mut |n, _, d, k| v.push((n.to_string(), k, d.iter().map(|x| x.to_bits()).collect())));
        v
    };
    collect(a) == collect(b)
}
