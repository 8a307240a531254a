use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{AdamConfig, OptimizerKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Fcn,
    Rnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    MedianFrequency,
    Uniform,
}

/// A run of epochs at one learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrPhase {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub stage: Stage,
    pub phases: Vec<LrPhase>,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
    #[serde(default = "adam")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    /// Block size for per-epoch frame resampling; `None` uses every frame.
    #[serde(default)]
    pub block_size: Option<usize>,
    /// Horizontal flip and brightness jitter (FCN stage only).
    #[serde(default)]
    pub augment: bool,
    #[serde(default = "mfb")]
    pub class_weighting: Weighting,
    /// Global gradient-norm cap applied to simple RNN heads.
    #[serde(default = "default_clip")]
    pub simple_rnn_clip: f64,
}

fn one() -> usize {
    1
}
fn default_decay() -> f64 {
    1e-4
}
fn adam() -> OptimizerKind {
    OptimizerKind::Adam
}
fn mfb() -> Weighting {
    Weighting::MedianFrequency
}
fn default_clip() -> f64 {
    5.0
}

impl TrainPlan {
    /// FCN pre-training: 6/3/1 epochs, batch 4, augmentation on.
    pub fn fcn_default() -> Self {
        TrainPlan {
            stage: Stage::Fcn,
            phases: vec![
                LrPhase { epochs: 6, lr: 1e-3 },
                LrPhase { epochs: 3, lr: 1e-4 },
                LrPhase { epochs: 1, lr: 1e-5 },
            ],
            batch_size: 4,
            weight_decay: default_decay(),
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::default(),
            seed: 0,
            block_size: None,
            augment: true,
            class_weighting: Weighting::MedianFrequency,
            simple_rnn_clip: default_clip(),
        }
    }

    /// Head training: 30/5/1 epochs at 1e-4/1e-5/1e-6, batch 1, block
    /// resampling with blocks of 1000 frames.
    pub fn rnn_default() -> Self {
        TrainPlan {
            stage: Stage::Rnn,
            phases: vec![
                LrPhase { epochs: 30, lr: 1e-4 },
                LrPhase { epochs: 5, lr: 1e-5 },
                LrPhase { epochs: 1, lr: 1e-6 },
            ],
            batch_size: 1,
            block_size: Some(1000),
            augment: false,
            ..Self::fcn_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.phases.is_empty() {
            return bad("training plan has no phases".into());
        }
        for p in &self.phases {
            if !(p.lr >= 0.0 && p.lr.is_finite()) {
                return bad(format!("learning rate {} must be finite and >= 0", p.lr));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be >= 0", self.weight_decay));
        }
        if self.stage == Stage::Rnn && self.batch_size != 1 {
            return bad("the head stage trains with batch size 1".into());
        }
        if self.block_size == Some(0) {
            return bad("block_size must be >= 1".into());
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    /// `(epoch index, lr)` for every epoch in order.
    pub fn schedule(&self) -> Vec<(usize, f64)> {
        self.phases
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.lr, p.epochs))
            .enumerate()
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: TrainPlan =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("training config: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub phase_lr: f64,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,phase_lr,mean_loss,wall_seconds";

/// Copy with `wall_seconds` zeroed, for logs that must be byte-identical
/// across reruns.
pub fn without_wall_clock(records: &[LossRecord]) -> Vec<LossRecord> {
    records
        .iter()
        .map(|r| LossRecord {
            wall_seconds: 0.0,
            ..*r
        })
        .collect()
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = format!("{LOSS_CSV_HEADER}\n");
    for r in records {
        text.push_str(&format!(
            "{},{:e},{:e},{:.3}\n",
            r.epoch, r.phase_lr, r.mean_loss, r.wall_seconds
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line != LOSS_CSV_HEADER {
                return Err(Error::format(path, format!("unexpected header {line:?}")));
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::format(path, format!("bad number {s:?} on line {}", i + 1)))
        };
        if cols.len() != 4 {
            return Err(Error::format(path, format!("line {} has {} columns", i + 1, cols.len())));
        }
        out.push(LossRecord {
            epoch: cols[0]
                .parse()
                .map_err(|_| Error::format(path, format!("bad epoch on line {}", i + 1)))?,
            phase_lr: parse(cols[1])?,
            mean_loss: parse(cols[2])?,
            wall_seconds: parse(cols[3])?,
        });
    }
    Ok(out)
}
