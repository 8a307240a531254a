//! `seqseg`: dataset generation, two-stage training, evaluation, gradient
//! checks and single-sequence inference.
//!
//! Exit codes: 0 success, 1 failed check, 2 configuration, 3 I/O or file
//! format, 4 incompatible checkpoint or dataset.

mod config;
mod strip;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seqseg::eval::{emit_report, evaluate_model, format_percent};
use seqseg::fcn::build_fcn;
use seqseg::gradcheck::{run_suite, SuiteOptions, SUITE_THRESHOLD};
use seqseg::model::{load_checkpoint, save_checkpoint, SegModel, Variant};
use seqseg::recurrent::build_head;
use seqseg::synthworld::{generate_dataset, load_sequence, load_split, netpbm, read_manifest, CLASS_NAMES};
use seqseg::training::{train_fcn, train_rnn, without_wall_clock, write_loss_csv, LossRecord};
use seqseg::{Error, Result};

use config::{require, RunConfig};

/// Names the check whose analytic gradient the suite should corrupt.
const FAULT_ENV: &str = "SEQSEG_GRADCHECK_FAULT";
const THREADS_ENV: &str = "SEQSEG_THREADS";

#[derive(Parser)]
#[command(name = "seqseg", version, about = "Temporal semantic segmentation on synthetic bridge video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic train/test video set.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the FCN on the train split.
    TrainFcn(TrainArgs),
    /// Train a recurrent head on top of a frozen FCN checkpoint.
    TrainRnn(TrainArgs),
    /// Score a checkpoint on a split and write the report.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// fcn, fcn+simple or fcn+convlstm; defaults to the checkpoint's own.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Predict one sequence directory; writes label PGMs and SVG strips.
    Infer {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        seq: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// FCN checkpoint to start from (required by train-rnn).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) => 2,
        Error::Io { .. } | Error::Format { .. } | Error::Data(_) => 3,
        Error::Incompatible(_) => 4,
        Error::Numeric(_) => 1,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("{THREADS_ENV}: {e}")))
}

fn parse_variant(name: &str) -> Result<Variant> {
    Variant::parse(name).ok_or_else(|| {
        Error::Config(format!("unknown variant {name:?}; expected fcn, fcn+simple or fcn+convlstm"))
    })
}

fn loss_csv_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

fn progress_line(stage: &str, r: &LossRecord) {
    println!(
        "{stage} epoch {} lr {:e} loss {:.6} ({:.1}s)",
        r.epoch, r.phase_lr, r.mean_loss, r.wall_seconds
    );
}

fn write_log(cfg: &RunConfig, ckpt: &Path, records: &[LossRecord]) -> Result<PathBuf> {
    let records = if cfg.record_wall_clock {
        records.to_vec()
    } else {
        without_wall_clock(records)
    };
    let path = loss_csv_path(ckpt);
    write_loss_csv(&path, &records)?;
    Ok(path)
}

fn gen_data(config: Option<PathBuf>, out: Option<PathBuf>, seed: Option<u64>) -> Result<u8> {
    let cfg = RunConfig::load(config.as_deref())?.finish(seed)?;
    let out = require(&out, &cfg.paths.out, "--out")?;
    let m = generate_dataset(&cfg.synth, &out)?;
    println!("wrote {} (seed {})", out.display(), m.config.seed);
    for (split, seqs) in &m.splits {
        let frames: usize = seqs.iter().map(|s| s.frames).sum();
        let hist = &m.class_histogram[split];
        let total: u64 = hist.iter().sum();
        let shares: Vec<String> = m
            .class_names
            .iter()
            .zip(hist)
            .map(|(n, &c)| format!("{n}={}", format_percent(c as f64 / total.max(1) as f64)))
            .collect();
        println!("{split}: {} sequences, {frames} frames, {}", seqs.len(), shares.join(" "));
    }
    Ok(0)
}

fn train(args: TrainArgs, head: bool) -> Result<u8> {
    let cfg = RunConfig::load(args.config.as_deref())?.finish(args.seed)?;
    let data = require(&args.data, &cfg.paths.data, "--data")?;
    let out = require(&args.out, &cfg.paths.out, "--out")?;
    let init = if head {
        Some(require(&args.init, &cfg.paths.init, "--init")?)
    } else {
        args.init.clone().or(cfg.paths.init.clone())
    };
    let train_set = load_split(&data, "train")?;
    println!("{} training frames from {}", train_set.frame_count(), data.display());

    let (model, records) = if head {
        let base = load_checkpoint(init.as_deref().expect("checked above"))?;
        let fcn = base.fcn;
        if fcn.config.num_classes != cfg.rnn.num_classes {
            return Err(Error::Incompatible(format!(
                "FCN predicts {} classes, head config expects {}",
                fcn.config.num_classes, cfg.rnn.num_classes
            )));
        }
        let mut h = build_head(&cfg.rnn, cfg.init_seed(&cfg.rnn_plan))?;
        let stage = cfg.rnn.cell.name();
        let log = train_rnn(&cfg.rnn_plan, &train_set, &fcn, &mut h, &mut |r| progress_line(stage, r))?;
        (SegModel::new(fcn, Some(h))?, log.records)
    } else {
        let mut fcn = match &init {
            Some(p) => load_checkpoint(p)?.fcn,
            None => build_fcn(&cfg.fcn, cfg.init_seed(&cfg.fcn_plan))?,
        };
        let log = train_fcn(&cfg.fcn_plan, &train_set, &mut fcn, &mut |r| progress_line("fcn", r))?;
        (SegModel::new(fcn, None)?, log.records)
    };
    save_checkpoint(&model, &out)?;
    let csv = write_log(&cfg, &out, &records)?;
    println!("checkpoint {} ({})", out.display(), model.variant());
    println!("loss log {}", csv.display());
    Ok(0)
}

fn eval(
    config: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    data: Option<PathBuf>,
    variant: Option<String>,
    report: Option<PathBuf>,
    split: &str,
) -> Result<u8> {
    let cfg = RunConfig::load(config.as_deref())?.finish(None)?;
    let ckpt = require(&ckpt, &cfg.paths.ckpt, "--ckpt")?;
    let data = require(&data, &cfg.paths.data, "--data")?;
    let report = require(&report, &cfg.paths.report, "--report")?;
    let mut model = load_checkpoint(&ckpt)?;
    if let Some(v) = variant {
        model = model.as_variant(parse_variant(&v)?)?;
    }
    let set = load_split(&data, split)?;
    let class_names = read_manifest(&data)?.class_names;
    let result = evaluate_model(&model, &set)?;
    std::fs::create_dir_all(&report).map_err(|e| Error::io(&report, e))?;
    let files = emit_report(std::slice::from_ref(&result), &class_names, &report)?;
    println!("{} on {} {split} frames", result.variant, set.frame_count());
    for (name, acc) in class_names.iter().zip(&result.per_class) {
        let v = acc.map(format_percent).unwrap_or_else(|| "NA".into());
        println!("  {name}: {v}");
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    println!("pixel_accuracy={:.6}", result.accuracy);
    Ok(0)
}

fn gradcheck(seed: u64) -> Result<u8> {
    let fault = std::env::var(FAULT_ENV).ok().filter(|s| !s.is_empty());
    let entries = run_suite(&SuiteOptions { seed, fault })?;
    let mut failed = 0;
    for e in &entries {
        let r = &e.report;
        println!(
            "{:<24} max_rel_error={:.3e} checked={} skipped_nonsmooth={} {}",
            e.name,
            r.max_rel_error,
            r.checked,
            r.skipped_nonsmooth,
            if e.passed { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!e.passed);
    }
    println!("{} of {} checks within {SUITE_THRESHOLD:e}", entries.len() - failed, entries.len());
    Ok(if failed == 0 { 0 } else { 1 })
}

fn infer(
    config: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    seq: Option<PathBuf>,
    out: Option<PathBuf>,
    variant: Option<String>,
) -> Result<u8> {
    let cfg = RunConfig::load(config.as_deref())?.finish(None)?;
    let ckpt = require(&ckpt, &cfg.paths.ckpt, "--ckpt")?;
    let seq = require(&seq, &cfg.paths.seq, "--seq")?;
    let out = require(&out, &cfg.paths.out, "--out")?;
    let mut model = load_checkpoint(&ckpt)?;
    if let Some(v) = variant {
        model = model.as_variant(parse_variant(&v)?)?;
    }
    let sequence = load_sequence(&seq)?;
    if model.num_classes() != CLASS_NAMES.len() {
        return Err(Error::Incompatible(format!(
            "checkpoint predicts {} classes, the dataset has {}",
            model.num_classes(),
            CLASS_NAMES.len()
        )));
    }
    let frames: Vec<_> = sequence.frames.iter().map(|f| &f.image).collect();
    let preds = model.predict_sequence(&frames)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut correct = 0u64;
    let mut counted = 0u64;
    for (i, (frame, pred)) in sequence.frames.iter().zip(&preds).enumerate() {
        netpbm::write_pgm8(&out.join(format!("pred_{i:04}.pgm")), pred.w, pred.h, &pred.data)?;
        let svg = strip::strip_svg(&frame.image, &frame.labels, pred)?;
        let path = out.join(format!("strip_{i:04}.svg"));
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        for (t, p) in frame.labels.data.iter().zip(&pred.data) {
            if *t != seqseg::IGNORE_LABEL {
                counted += 1;
                correct += u64::from(t == p);
            }
        }
    }
    println!("{} frames predicted with {} into {}", preds.len(), model.variant(), out.display());
    if counted > 0 {
        println!("pixel_accuracy={:.6}", correct as f64 / counted as f64);
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    configure_threads()?;
    match cli.command {
        Command::GenData { config, out, seed } => gen_data(config, out, seed),
        Command::TrainFcn(a) => train(a, false),
        Command::TrainRnn(a) => train(a, true),
        Command::Eval {
            config,
            ckpt,
            data,
            variant,
            report,
            split,
        } => eval(config, ckpt, data, variant, report, &split),
        Command::Gradcheck { seed } => gradcheck(seed),
        Command::Infer {
            config,
            ckpt,
            seq,
            out,
            variant,
        } => infer(config, ckpt, seq, out, variant),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
