use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seqseg::fcn::FcnConfig;
use seqseg::recurrent::RnnConfig;
use seqseg::synthworld::{SynthConfig, NUM_CLASSES};
use seqseg::training::{Stage, TrainPlan};
use seqseg::{Error, Result};

/// Paths a command may read or write. Command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub seq: Option<PathBuf>,
}

/// Everything one invocation needs, read from a JSON file. Missing fields
/// take the desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides the dataset seed and both training seeds.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub fcn: FcnConfig,
    pub rnn: RnnConfig,
    pub fcn_plan: TrainPlan,
    pub rnn_plan: TrainPlan,
    pub paths: Paths,
    /// Write measured times into the loss CSV. Off by default so reruns with
    /// the same seed produce identical files.
    pub record_wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            synth: SynthConfig::default(),
            fcn: FcnConfig::desk(NUM_CLASSES),
            rnn: RnnConfig::default(),
            fcn_plan: TrainPlan::fcn_default(),
            rnn_plan: TrainPlan::rnn_default(),
            paths: Paths::default(),
            record_wall_clock: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_json(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Applies a seed override and checks the sections every command uses.
    pub fn finish(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.synth.seed = s;
            self.fcn_plan.seed = s;
            self.rnn_plan.seed = s;
        }
        if self.fcn_plan.stage != Stage::Fcn {
            return Err(Error::Config("fcn_plan.stage must be \"fcn\"".into()));
        }
        if self.rnn_plan.stage != Stage::Rnn {
            return Err(Error::Config("rnn_plan.stage must be \"rnn\"".into()));
        }
        self.synth.validate()?;
        self.fcn.validate()?;
        self.rnn.validate()?;
        self.fcn_plan.validate()?;
        self.rnn_plan.validate()?;
        Ok(self)
    }

    /// Seed used to initialize weights: the explicit seed, else the plan's.
    pub fn init_seed(&self, plan: &TrainPlan) -> u64 {
        self.seed.unwrap_or(plan.seed)
    }
}

/// `flag` if given, else the config value, else a config error naming the
/// flag.
pub fn require(flag: &Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| config.clone())
        .ok_or_else(|| Error::Config(format!("missing required {name} (flag or paths entry in the config)")))
}
