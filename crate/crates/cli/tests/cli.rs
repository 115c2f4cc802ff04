use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn asrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asrf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = asrf(args);
    assert!(
        out.status.success(),
        "asrf {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Dataset plus a trained checkpoint, built once for all tests.
struct Fixture {
    dir: TempDir,
    data: PathBuf,
    run: PathBuf,
    model: PathBuf,
}

impl Fixture {
    fn data(&self) -> &Path {
        &self.data
    }

    fn run(&self) -> &Path {
        &self.run
    }

    fn model(&self) -> &Path {
        &self.model
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let (data, run) = (dir.path().join("data"), dir.path().join("run"));
        let model = run.join("model.ckpt");
        ok(&[
            "synth",
            "--out",
            s(&data),
            "--videos",
            "20",
            "--classes",
            "5",
            "--seed",
            "7",
            "--min-frames",
            "80",
            "--max-frames",
            "140",
        ]);
        ok(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&run),
            "--epochs",
            "6",
            "--channels",
            "16",
            "--layers",
            "4",
            "--asb-stages",
            "2",
            "--brb-stages",
            "2",
            "--lr",
            "0.005",
        ]);
        Fixture {
            dir,
            data,
            run,
            model,
        }
    })
}

#[test]
fn synth_writes_dataset_layout() {
    let f = fixture();
    let d = f.data();
    assert!(d.join("mapping.txt").is_file());
    let train = fs::read_to_string(d.join("splits/train.txt")).unwrap();
    let test = fs::read_to_string(d.join("splits/test.txt")).unwrap();
    assert_eq!(train.lines().count() + test.lines().count(), 20);
    assert_eq!(fs::read_dir(d.join("features")).unwrap().count(), 20);
}

#[test]
fn train_writes_checkpoint_log_and_config() {
    let f = fixture();
    assert!(f.model().is_file());
    let log = fs::read_to_string(f.run().join("train_log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0]["epoch"], 1);
    assert!(
        lines[5]["loss"]["total"].as_f64().unwrap() < lines[0]["loss"]["total"].as_f64().unwrap()
    );
    assert!(lines[0]["held_out"]["edit"].is_number());
    let run = fs::read_to_string(f.run().join("run.toml")).unwrap();
    assert!(run.contains("epochs = 6"));
}

#[test]
fn eval_reports_are_reproducible() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.toml"), dir.path().join("b.toml"));
    let args = |r: &Path| {
        vec![
            "eval".to_string(),
            "--data".into(),
            s(f.data()).into(),
            "--model".into(),
            s(f.model()).into(),
            "--mode".into(),
            "raw".into(),
            "--mode".into(),
            "refined".into(),
            "--report".into(),
            s(r).into(),
        ]
    };
    let table = ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().starts_with("raw"));
    let (ra, rb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(ra, rb);
    let doc: toml::Table = toml::from_str(std::str::from_utf8(&ra).unwrap()).unwrap();
    for mode in ["raw", "refined"] {
        let acc = doc[mode]["acc"].as_float().unwrap();
        assert!((0.0..=100.0).contains(&acc));
        assert!(doc[mode]["f1"]["50"].is_float());
        assert!(doc[mode]["boundary"]["f1"].is_float());
    }
}

#[test]
fn sequential_flag_gives_identical_reports() {
    let f = fixture();
    let base = [
        "eval",
        "--data",
        s(f.data()),
        "--model",
        s(f.model()),
        "--mode",
        "smooth",
    ];
    let par = ok(&base);
    let seq = ok(&[&base[..], &["--sequential"]].concat());
    assert_eq!(par, seq);
}

#[test]
fn refine_writes_labels_for_exported_predictions() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (exp, out) = (dir.path().join("probs"), dir.path().join("labels"));
    ok(&[
        "eval",
        "--data",
        s(f.data()),
        "--model",
        s(f.model()),
        "--export",
        s(&exp),
    ]);
    ok(&[
        "refine",
        "--input",
        s(&exp),
        "--mapping",
        s(&f.data().join("mapping.txt")),
        "--out",
        s(&out),
    ]);
    let test = fs::read_to_string(f.data().join("splits/test.txt")).unwrap();
    let names: Vec<String> = fs::read_to_string(f.data().join("mapping.txt"))
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().nth(1).unwrap().to_string())
        .collect();
    for id in test.lines() {
        let labels = fs::read_to_string(out.join(format!("{id}.txt"))).unwrap();
        let gt = fs::read_to_string(f.data().join(format!("labels/{id}.txt"))).unwrap();
        assert_eq!(labels.lines().count(), gt.lines().count());
        assert!(labels.lines().all(|l| names.iter().any(|n| n == l)));
    }
}

#[test]
fn ablate_theta_table_has_one_row_per_threshold() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("ablate.toml");
    let args = [
        "ablate",
        "--data",
        s(f.data()),
        "--model",
        s(f.model()),
        "--theta-p",
        "0.1,0.3,0.5,0.7,0.9",
        "--report",
        s(&rep),
    ];
    let table = ok(&args);
    assert_eq!(table.lines().count(), 6);
    let doc: toml::Table = toml::from_str(&fs::read_to_string(&rep).unwrap()).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    let counts: Vec<i64> = rows
        .iter()
        .map(|r| r["boundaries"].as_integer().unwrap())
        .collect();
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
    assert_eq!(table, ok(&args));
}

#[test]
fn ablate_stage_sweep_trains_each_count() {
    let f = fixture();
    let table = ok(&[
        "ablate",
        "--data",
        s(f.data()),
        "--stages",
        "0,1",
        "--epochs",
        "1",
        "--config",
        s(&write_small_config()),
    ]);
    // Header plus raw and refined rows per stage count.
    assert_eq!(table.lines().count(), 5);
}

fn write_small_config() -> PathBuf {
    let dir = fixture().dir.path();
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "[train.model]\nchannels = 8\nlayers = 3\nasb_stages = 1\n",
    )
    .unwrap();
    path
}

#[test]
fn config_values_apply_and_flags_win() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "[paths]\ndata = \"{}\"\nout = \"out\"\n[train]\nepochs = 3\n[train.model]\nchannels = 8\nlayers = 2\n",
            s(f.data())
        ),
    )
    .unwrap();
    ok(&["--config", s(&cfg), "train", "--epochs", "1"]);
    let log = fs::read_to_string(dir.path().join("out/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let resolved = fs::read_to_string(dir.path().join("out/run.toml")).unwrap();
    assert!(resolved.contains("channels = 8"));
}

#[test]
fn saved_run_config_is_reusable() {
    let f = fixture();
    let cfg = f.run().join("run.toml");
    let direct = ok(&["eval", "--data", s(f.data()), "--model", s(f.model())]);
    assert_eq!(ok(&["--config", s(&cfg), "eval"]), direct);
}

#[test]
fn bad_usage_exits_nonzero() {
    let out = asrf(&["eval", "--mode", "bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown evaluation mode"));

    let out = asrf(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr)
        .to_lowercase()
        .contains("usage"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nepoch = 3\n").unwrap();
    let out = asrf(&["--config", s(&cfg), "eval"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn format_errors_name_file_and_offset() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("broken.ckpt");
    let mut bytes = fs::read(f.model()).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&bad, bytes).unwrap();
    let out = asrf(&["eval", "--data", s(f.data()), "--model", s(&bad)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("broken.ckpt"), "{err}");
    assert!(err.contains("offset"), "{err}");
}
