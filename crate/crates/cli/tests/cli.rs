use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use seqseg::fcn::{build_fcn, FcnConfig};
use seqseg::model::{load_checkpoint, save_checkpoint, SegModel};
use seqseg::training::read_loss_csv;

const TINY: &str = r#"{
  "seed": 5,
  "synth": {"train_sequences": 2, "test_sequences": 1, "frames_per_sequence": 6},
  "fcn_plan": {"stage": "fcn", "phases": [{"epochs": 1, "lr": 0.001}], "batch_size": 4},
  "rnn_plan": {"stage": "rnn", "phases": [{"epochs": 1, "lr": 0.0001}], "block_size": null}
}"#;

fn seqseg(args: &[&str]) -> Output {
    seqseg_env(args, &[])
}

fn seqseg_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_seqseg"));
    c.args(args).env_remove("SEQSEG_GRADCHECK_FAULT");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

/// Dataset plus FCN and ConvLSTM checkpoints shared by the tests below.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
    fcn: PathBuf,
    head: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("tiny.json");
        std::fs::write(&config, TINY).unwrap();
        let data = root.join("data");
        let o = seqseg(&["gen-data", "--config", s(&config), "--out", s(&data)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let fcn = root.join("fcn.ckpt");
        let o = seqseg(&["train-fcn", "--config", s(&config), "--data", s(&data), "--out", s(&fcn)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let head = root.join("lstm.ckpt");
        let o = seqseg(&[
            "train-rnn", "--config", s(&config), "--data", s(&data), "--out", s(&head), "--init", s(&fcn),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        Fixture {
            _dir: dir,
            root,
            config,
            data,
            fcn,
            head,
        }
    })
}

#[test]
fn gen_data_writes_files_and_prints_a_summary() {
    let f = fixture();
    assert!(f.data.join("manifest.json").is_file());
    assert!(f.data.join("train").is_dir() && f.data.join("test").is_dir());
    let out = f.root.join("again");
    let o = seqseg(&["gen-data", "--config", s(&f.config), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("train: 2 sequences, 12 frames"));
}

#[test]
fn gen_data_rerun_gives_the_same_manifest_hash() {
    let f = fixture();
    let out = f.root.join("rerun");
    assert_eq!(code(&seqseg(&["gen-data", "--config", s(&f.config), "--out", s(&out)])), 0);
    assert_eq!(sha(&out.join("manifest.json")), sha(&f.data.join("manifest.json")));
}

#[test]
fn gen_data_missing_parent_is_an_io_error_naming_the_path() {
    let f = fixture();
    let parent = f.root.join("no_such_parent");
    let out = parent.join("data");
    let o = seqseg(&["gen-data", "--config", s(&f.config), "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains(s(&parent)), "{}", stderr(&o));
}

#[test]
fn bad_config_is_exit_2() {
    let f = fixture();
    let bad = f.root.join("bad.json");
    std::fs::write(&bad, r#"{"synth": {"frames_per_sequence": 0}}"#).unwrap();
    let o = seqseg(&["gen-data", "--config", s(&bad), "--out", s(&f.root.join("x"))]);
    assert_eq!(code(&o), 2);
    std::fs::write(&bad, "{ not json").unwrap();
    let o = seqseg(&["gen-data", "--config", s(&bad), "--out", s(&f.root.join("x"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_config_file_is_exit_3() {
    let f = fixture();
    let o = seqseg(&["gen-data", "--config", s(&f.root.join("absent.json")), "--out", s(&f.root.join("y"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn train_rnn_without_init_names_the_flag() {
    let f = fixture();
    let o = seqseg(&[
        "train-rnn", "--config", s(&f.config), "--data", s(&f.data), "--out", s(&f.root.join("h.ckpt")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--init"), "{}", stderr(&o));
}

#[test]
fn trained_checkpoints_load_and_carry_a_loss_log() {
    let f = fixture();
    assert_eq!(load_checkpoint(&f.fcn).unwrap().variant().name(), "fcn");
    assert_eq!(load_checkpoint(&f.head).unwrap().variant().name(), "fcn+convlstm");
    let log = read_loss_csv(&f.root.join("fcn.ckpt.loss.csv")).unwrap();
    assert_eq!(log.len(), 1);
    assert!(log[0].mean_loss.is_finite());
}

#[test]
fn same_seed_gives_an_identical_loss_csv() {
    let f = fixture();
    let out = f.root.join("fcn_again.ckpt");
    let o = seqseg(&["train-fcn", "--config", s(&f.config), "--data", s(&f.data), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read(f.root.join("fcn_again.ckpt.loss.csv")).unwrap(),
        std::fs::read(f.root.join("fcn.ckpt.loss.csv")).unwrap()
    );
}

fn last_line(o: &Output) -> String {
    stdout(o).lines().last().unwrap_or_default().to_string()
}

#[test]
fn eval_prints_accuracy_last_and_is_deterministic() {
    let f = fixture();
    let report = f.root.join("report_a");
    let run = |dir: &Path| {
        seqseg(&["eval", "--ckpt", s(&f.head), "--data", s(&f.data), "--report", s(dir)])
    };
    let a = run(&report);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let line = last_line(&a);
    let v: f64 = line.strip_prefix("pixel_accuracy=").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&v));
    assert!(report.join("summary.csv").is_file());
    let b = run(&f.root.join("report_b"));
    assert_eq!(last_line(&b), line);
    assert_eq!(
        std::fs::read(report.join("summary.csv")).unwrap(),
        std::fs::read(f.root.join("report_b").join("summary.csv")).unwrap()
    );
}

#[test]
fn eval_can_drop_the_head() {
    let f = fixture();
    let o = seqseg(&[
        "eval", "--ckpt", s(&f.head), "--data", s(&f.data), "--report", s(&f.root.join("r_fcn")),
        "--variant", "fcn",
    ]);
    assert_eq!(code(&o), 0);
    let direct = seqseg(&[
        "eval", "--ckpt", s(&f.fcn), "--data", s(&f.data), "--report", s(&f.root.join("r_fcn2")),
    ]);
    assert_eq!(last_line(&o), last_line(&direct));
    let bad = seqseg(&[
        "eval", "--ckpt", s(&f.fcn), "--data", s(&f.data), "--report", s(&f.root.join("r_x")),
        "--variant", "fcn+convlstm",
    ]);
    assert_eq!(code(&bad), 4);
}

#[test]
fn eval_class_mismatch_is_exit_4() {
    let f = fixture();
    let three = f.root.join("three.ckpt");
    let model = SegModel::new(build_fcn(&FcnConfig::desk(3), 0).unwrap(), None).unwrap();
    save_checkpoint(&model, &three).unwrap();
    let o = seqseg(&["eval", "--ckpt", s(&three), "--data", s(&f.data), "--report", s(&f.root.join("r3"))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn unknown_variant_is_exit_2() {
    let f = fixture();
    let o = seqseg(&[
        "eval", "--ckpt", s(&f.fcn), "--data", s(&f.data), "--report", s(&f.root.join("r_v")),
        "--variant", "lstm",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_passes_and_lists_each_op_once() {
    let o = seqseg(&["gradcheck", "--seed", "0"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    for name in seqseg::gradcheck::SUITE_CHECKS {
        let n = out.lines().filter(|l| l.split_whitespace().next() == Some(name)).count();
        assert_eq!(n, 1, "{name}");
    }
}

#[test]
fn gradcheck_catches_a_corrupted_backward() {
    let o = seqseg_env(&["gradcheck"], &[("SEQSEG_GRADCHECK_FAULT", "conv2d")]);
    assert_eq!(code(&o), 1);
    let line = stdout(&o).lines().find(|l| l.starts_with("conv2d ")).unwrap().to_string();
    assert!(line.ends_with("FAIL"), "{line}");
}

#[test]
fn infer_writes_predictions_and_strips_deterministically() {
    let f = fixture();
    let seq = f.data.join("test").join(seqseg::synthworld::sequence_dir_name(0));
    let run = |out: &Path| seqseg(&["infer", "--ckpt", s(&f.head), "--seq", s(&seq), "--out", s(out)]);
    let a = f.root.join("infer_a");
    let o = run(&a);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for i in 0..6 {
        assert!(a.join(format!("pred_{i:04}.pgm")).is_file());
        let svg = std::fs::read_to_string(a.join(format!("strip_{i:04}.svg"))).unwrap();
        assert_eq!(svg.matches("<image").count(), 3);
    }
    let b = f.root.join("infer_b");
    assert_eq!(code(&run(&b)), 0);
    for i in 0..6 {
        for name in [format!("pred_{i:04}.pgm"), format!("strip_{i:04}.svg")] {
            assert_eq!(sha(&a.join(&name)), sha(&b.join(&name)), "{name}");
        }
    }
}

#[test]
fn infer_missing_sequence_is_exit_3() {
    let f = fixture();
    let o = seqseg(&[
        "infer", "--ckpt", s(&f.fcn), "--seq", s(&f.root.join("nope")), "--out", s(&f.root.join("io")),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn bad_thread_count_is_exit_2() {
    let o = seqseg_env(&["gradcheck"], &[("SEQSEG_THREADS", "zero")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn thread_cap_does_not_change_results() {
    let f = fixture();
    let run = |t: &str, dir: &str| {
        seqseg_env(
            &["eval", "--ckpt", s(&f.head), "--data", s(&f.data), "--report", s(&f.root.join(dir))],
            &[("SEQSEG_THREADS", t)],
        )
    };
    assert_eq!(last_line(&run("1", "t1")), last_line(&run("3", "t3")));
}
