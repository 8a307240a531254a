//! The end-to-end comparison: render a dataset, train the FCN, train both
//! recurrent heads on the frozen FCN, and score all three variants on the
//! test split.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{evaluate_model, EvalResult};
use crate::fcn::{build_fcn, FcnConfig};
use crate::model::SegModel;
use crate::recurrent::{build_head, CellKind, RnnConfig};
use crate::synthworld::{build_split, SynthConfig, NUM_CLASSES};
use crate::training::{precompute_logits, train_fcn, train_rnn_cached, LossRecord, TrainPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub fcn: FcnConfig,
    pub simple: RnnConfig,
    pub convlstm: RnnConfig,
    pub fcn_plan: TrainPlan,
    pub rnn_plan: TrainPlan,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            fcn: FcnConfig::desk(NUM_CLASSES),
            simple: RnnConfig::desk(CellKind::Simple, NUM_CLASSES),
            convlstm: RnnConfig::desk(CellKind::Convlstm, NUM_CLASSES),
            fcn_plan: TrainPlan::fcn_default(),
            rnn_plan: TrainPlan::rnn_default(),
        }
    }
}

impl ExperimentConfig {
    /// Copy with every stochastic stage seeded from `seed`.
    pub fn seeded(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.synth.seed = seed;
        c.fcn_plan.seed = seed;
        c.rnn_plan.seed = seed;
        c
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    /// FCN, FCN + simple RNN, FCN + ConvLSTM, in that order.
    pub results: Vec<EvalResult>,
    pub models: Vec<SegModel>,
    pub losses: Vec<Vec<LossRecord>>,
    pub seconds: f64,
}

impl Outcome {
    pub fn accuracy(&self, i: usize) -> f64 {
        self.results[i].accuracy
    }
}

/// Runs the whole comparison with the seeds already in `config`. `log`
/// receives one line per epoch and per finished stage.
pub fn run_experiment(config: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<Outcome> {
    let start = Instant::now();
    let seed = config.fcn_plan.seed;
    let train = build_split(&config.synth, "train")?;
    let test = build_split(&config.synth, "test")?;
    log(&format!(
        "data: {} train frames, {} test frames ({:.1}s)",
        train.frame_count(),
        test.frame_count(),
        start.elapsed().as_secs_f64()
    ));

    let mut fcn = build_fcn(&config.fcn, seed)?;
    let fcn_log = train_fcn(&config.fcn_plan, &train, &mut fcn, &mut |r| {
        log(&format!("fcn epoch {} lr {:e} loss {:.4} ({:.0}s)", r.epoch, r.phase_lr, r.mean_loss, r.wall_seconds))
    })?;
    let cached = precompute_logits(&fcn, &train)?;

    let mut models = vec![SegModel::new(fcn.clone(), None)?];
    let mut losses = vec![fcn_log.records];
    for (k, rnn) in [&config.simple, &config.convlstm].into_iter().enumerate() {
        let mut head = build_head(rnn, seed.wrapping_add(k as u64 + 1))?;
        let name = rnn.cell.name();
        let l = train_rnn_cached(&config.rnn_plan, &train, &cached, &mut head, &mut |r| {
            log(&format!("{name} epoch {} lr {:e} loss {:.4} ({:.0}s)", r.epoch, r.phase_lr, r.mean_loss, r.wall_seconds))
        })?;
        losses.push(l.records);
        models.push(SegModel::new(fcn.clone(), Some(head))?);
    }

    let mut results = Vec::with_capacity(3);
    for m in &models {
        let r = evaluate_model(m, &test)?;
        log(&format!("{}: pixel accuracy {:.4}", r.variant, r.accuracy));
        results.push(r);
    }
    Ok(Outcome {
        results,
        models,
        losses,
        seconds: start.elapsed().as_secs_f64(),
    })
}
