use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn hazardcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hazardcast"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = hazardcast(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> (i32, String) {
    let out = hazardcast(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn digest(p: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(p).unwrap()))
}

fn manifest(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Tiny settings so a full run takes seconds.
const CONFIG: &str = r#"{
  "seed": 11,
  "data": {"lookback": 15},
  "model": {"hidden_size": 6, "attention_size": 4},
  "train": {"max_epochs": 2, "patience": 2, "batch_size": 64},
  "explain": {"nsamples": 200, "top_k": 3}
}"#;

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// synth → ingest → train → evaluate → explain → global → render.
fn pipeline() -> Run {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let run = Run { _dir: dir, root };
    let p = |n: &str| run.path(n);
    fs::write(p("cfg.json"), CONFIG).unwrap();
    ok(&["synth", "--config", s(&p("cfg.json")), "--days", "600", "--out", s(&p("synth"))]);
    ok(&[
        "ingest",
        "--weather",
        s(&p("synth/weather.csv")),
        "--events",
        s(&p("synth/events.csv")),
        "--county",
        "SYNTH",
        "--out",
        s(&p("table.csv")),
    ]);
    ok(&["train", "--config", s(&p("cfg.json")), "--data", s(&p("table.csv")), "--arch", "lstm", "--out", s(&p("ckpt.json"))]);
    ok(&[
        "evaluate",
        "--ckpt",
        s(&p("ckpt.json")),
        "--data",
        s(&p("table.csv")),
        "--out",
        s(&p("metrics.csv")),
        "--predictions",
        s(&p("pred.csv")),
    ]);
    ok(&[
        "explain",
        "--config",
        s(&p("cfg.json")),
        "--ckpt",
        s(&p("ckpt.json")),
        "--data",
        s(&p("table.csv")),
        "--count",
        "2",
        "--hazard",
        "Frost",
        "--hazard",
        "Heat",
        "--out",
        s(&p("attr")),
    ]);
    ok(&["global", "--inputs", s(&p("attr")), "--out", s(&p("global.csv"))]);
    ok(&["render", "--matrix", s(&p("global.csv")), "--scale", "log1p", "--out", s(&p("global.svg"))]);
    let spec = format!("SYNTH:LSTM:{}", s(&p("metrics.csv")));
    ok(&["render", "--metrics", &spec, "--out", s(&p("report.csv"))]);
    run
}

#[test]
fn end_to_end_run_writes_outputs_and_manifests() {
    let run = pipeline();
    let p = |n: &str| run.path(n);

    let history = fs::read_to_string(p("ckpt.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3, "{history}");
    let metrics = fs::read_to_string(p("metrics.csv")).unwrap();
    assert!(metrics.starts_with("hazard,MAE,RMSE\n") && metrics.contains("\naverage,"));
    let pred = fs::read_to_string(p("pred.csv")).unwrap();
    assert!(pred.starts_with("anchor_date,ExtremeCold_rate,ExtremeCold_warning,ExtremeCold_count,"));

    let attr: Vec<String> = fs::read_dir(p("attr"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    assert_eq!(attr.len(), 4, "{attr:?}");
    let global = fs::read_to_string(p("global.csv")).unwrap();
    assert!(global.starts_with("feature,Jan,Feb,Mar"));
    assert!(fs::read_to_string(p("global.svg")).unwrap().starts_with("<svg"));
    let text = fs::read_to_string(p("report.txt")).unwrap();
    assert!(text.contains("SYNTH") && text.contains('*'));

    // manifests: resolved config, seed, digests that match the inputs
    let m = manifest(&p("ckpt.json.manifest.json"));
    assert_eq!(m["tool"], "hazardcast");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["seed"], 11);
    assert_eq!(m["config"]["train"]["seed"], 11);
    assert_eq!(m["config"]["data"]["lookback"], 15);
    assert_eq!(m["config"]["model"]["architecture"], "LSTM");
    assert_eq!(m["inputs"][0]["sha256"], digest(&p("table.csv")));
    assert!(m["details"]["splits"]["sizes"]["train"].as_u64().unwrap() > 0);
    let m = manifest(&p("table.csv.manifest.json"));
    assert_eq!(m["inputs"][0]["sha256"], digest(&p("synth/weather.csv")));
    assert_eq!(m["inputs"][1]["sha256"], digest(&p("synth/events.csv")));
    assert_eq!(manifest(&p("synth/manifest.json"))["seed"], 11);
    let m = manifest(&p("attr/manifest.json"));
    assert_eq!((m["seed"].as_u64(), m["config"]["explain"]["nsamples"].as_u64()), (Some(11), Some(200)));
    // evaluate ran without --config and still records the checkpoint's windowing
    let m = manifest(&p("metrics.csv.manifest.json"));
    assert_eq!((m["seed"].as_u64(), m["config"]["data"]["lookback"].as_u64()), (Some(0), Some(15)));
    for name in ["global.csv.manifest.json", "global.svg.manifest.json", "report.csv.manifest.json"] {
        assert!(manifest(&p(name))["seed"].is_u64(), "{name}");
    }
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            files_under(&path, out);
        } else {
            out.push(path);
        }
    }
}

#[test]
fn every_output_ends_with_a_newline() {
    let run = pipeline();
    let mut files = Vec::new();
    files_under(&run.root, &mut files);
    assert!(files.len() > 20, "{files:?}");
    // cfg.json is this test's own input
    for f in files.into_iter().filter(|f| !f.ends_with("cfg.json")) {
        assert_eq!(fs::read(&f).unwrap().last(), Some(&b'\n'), "{}", f.display());
    }
}

#[test]
fn every_manifest_replays_to_identical_outputs() {
    let run = pipeline();
    let p = |n: &str| run.path(n);
    let manifests = [
        "synth/manifest.json",
        "table.csv.manifest.json",
        "ckpt.json.manifest.json",
        "metrics.csv.manifest.json",
        "attr/manifest.json",
        "global.csv.manifest.json",
        "global.svg.manifest.json",
        "report.csv.manifest.json",
    ];
    for name in manifests {
        let mpath = p(name);
        let before = fs::read(&mpath).unwrap();
        let m = manifest(&mpath);
        let outputs: Vec<PathBuf> = m["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| PathBuf::from(o.as_str().unwrap()))
            .collect();
        let digests: Vec<String> = outputs.iter().map(|o| digest(o)).collect();
        // rerun into a clean slate so stale files cannot pass for fresh ones
        outputs.iter().for_each(|o| fs::remove_file(o).unwrap());
        ok(&["replay", "--manifest", s(&mpath)]);
        for (o, d) in outputs.iter().zip(&digests) {
            assert_eq!(&digest(o), d, "{name}: {} differs after replay", o.display());
        }
        assert_eq!(fs::read(&mpath).unwrap(), before, "{name} rewritten differently");
    }
}

#[test]
fn replay_refuses_changed_inputs() {
    let run = pipeline();
    let p = |n: &str| run.path(n);
    let mut table = fs::read_to_string(p("table.csv")).unwrap();
    table.push('\n');
    fs::write(p("table.csv"), table).unwrap();
    let (c, err) = code(&["replay", "--manifest", s(&p("ckpt.json.manifest.json"))]);
    assert_eq!(c, 2, "{err}");
    assert!(err.contains("changed since the recorded run"), "{err}");
}

#[test]
fn synth_is_deterministic_in_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = |n: &str| dir.path().join(n);
    ok(&["synth", "--seed", "5", "--days", "450", "--out", s(&out("a"))]);
    ok(&["synth", "--seed", "5", "--days", "450", "--out", s(&out("b"))]);
    ok(&["synth", "--seed", "6", "--days", "450", "--out", s(&out("c"))]);
    for f in ["weather.csv", "events.csv", "truth.json"] {
        assert_eq!(
            fs::read(out("a").join(f)).unwrap(),
            fs::read(out("b").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(fs::read(out("a/weather.csv")).unwrap(), fs::read(out("c/weather.csv")).unwrap());
    let (c, err) = code(&["synth", "--days", "100", "--out", s(&out("d"))]);
    assert_eq!(c, 1, "{err}");
}

#[test]
fn seed_flag_controls_training() {
    let run = pipeline();
    let p = |n: &str| run.path(n);
    let train = |seed: &str, out: &str| {
        ok(&[
            "train",
            "--config",
            s(&p("cfg.json")),
            "--seed",
            seed,
            "--data",
            s(&p("table.csv")),
            "--epochs",
            "1",
            "--out",
            s(&p(out)),
        ]);
        fs::read(p(out)).unwrap()
    };
    assert_eq!(train("3", "a.json"), train("3", "b.json"));
    assert_ne!(train("3", "a.json"), train("4", "c.json"));
    assert_eq!(manifest(&p("c.json.manifest.json"))["config"]["train"]["seed"], 4);
}

#[test]
fn usage_errors_exit_with_one_and_suggest() {
    let (c, err) = code(&["trian"]);
    assert_eq!(c, 1);
    assert!(err.contains("similar subcommand exists: 'train'"), "{err}");
    let (c, err) = code(&["train", "--data", "t.csv", "--out", "c.json", "--epoch", "3"]);
    assert_eq!(c, 1);
    assert!(err.contains("similar argument exists: '--epochs'"), "{err}");
    let (c, _) = code(&["explain", "--ckpt", "c", "--data", "d", "--out", "o"]);
    assert_eq!(c, 1, "needs --index or --count");
    let (c, err) = code(&["train", "--data", "t.csv", "--out", "c.json", "--arch", "gru"]);
    assert_eq!(c, 1, "{err}");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"modle": {}}"#).unwrap();
    let (c, err) = code(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(c, 1, "{err}");
    assert!(err.contains("unknown field"), "{err}");

    assert_eq!(code(&["--help"]).0, 0);
    assert_eq!(code(&["--version"]).0, 0);
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let (c, _) = code(&["evaluate", "--ckpt", s(&p("none.json")), "--data", s(&p("none.csv")), "--out", s(&p("m.csv"))]);
    assert_eq!(c, 2);

    fs::write(p("w.csv"), "STATION,NAME,DATE,TMAX\nS1,x,not-a-date,3\n").unwrap();
    fs::write(p("e.csv"), "").unwrap();
    let (c, err) = code(&["ingest", "--weather", s(&p("w.csv")), "--events", s(&p("e.csv")), "--county", "X", "--out", s(&p("t.csv"))]);
    assert_eq!(c, 2, "{err}");
}

#[test]
fn divergence_exits_with_three() {
    let run = pipeline();
    let p = |n: &str| run.path(n);
    let (c, err) = code(&[
        "train",
        "--config",
        s(&p("cfg.json")),
        "--data",
        s(&p("table.csv")),
        "--learning-rate",
        "1e300",
        "--epochs",
        "1",
        "--out",
        s(&p("bad.json")),
    ]);
    assert_eq!(c, 3, "{err}");
    assert!(err.contains("diverged"), "{err}");
}

#[test]
fn evaluate_rejects_a_table_the_model_was_not_trained_on() {
    let run = pipeline();
    let p = |n: &str| run.path(n);
    ok(&["synth", "--seed", "99", "--days", "600", "--out", s(&p("other"))]);
    ok(&[
        "ingest",
        "--weather",
        s(&p("other/weather.csv")),
        "--events",
        s(&p("other/events.csv")),
        "--county",
        "SYNTH",
        "--out",
        s(&p("other.csv")),
    ]);
    let (c, err) = code(&["evaluate", "--ckpt", s(&p("ckpt.json")), "--data", s(&p("other.csv")), "--out", s(&p("m2.csv"))]);
    assert_eq!(c, 2, "{err}");
    assert!(err.contains("standardizer"), "{err}");
}
