use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use scone_core::cli::run;
use scone_core::io::read_dataset;
use scone_core::nn::load_model;

const WORLD: &str = "n_landmarks = 60\nn_frames = 6\nseed = 1\ntrain_fraction = 0.67\n";
const TRAIN: &str = "k = 3\nepochs = 2\nsteps_per_epoch = 1\nbatch_size = 8\nval_samples = 20\nn_samples = 50\n";

fn scone(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = run(std::iter::once("scone").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn ok(args: &[&str]) -> String {
    let (code, out) = scone(args);
    assert_eq!(code, 0, "scone {args:?}");
    out
}

struct Ws {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Ws {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("world.cfg"), WORLD).unwrap();
        fs::write(root.join("train.cfg"), TRAIN).unwrap();
        Ws { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_string()
    }
}

fn manifest(path: &str) -> serde_json::Value {
    let text = fs::read_to_string(format!("{path}.manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Manifest with wall-clock timings removed.
fn manifest_without_timings(path: &str) -> serde_json::Value {
    let mut m = manifest(path);
    m.as_object_mut().unwrap().remove("timings_ms");
    m
}

fn snapshot(paths: &[String]) -> Vec<(Vec<u8>, serde_json::Value)> {
    paths
        .iter()
        .map(|p| (fs::read(p).unwrap(), manifest_without_timings(p)))
        .collect()
}

/// Runs `args` twice and checks every listed output and stdout is identical.
fn twice(args: &[&str], outputs: &[String]) -> String {
    let first = ok(args);
    let a = snapshot(outputs);
    let second = ok(args);
    let b = snapshot(outputs);
    assert_eq!(first, second, "stdout of {args:?}");
    assert!(a == b, "outputs of {args:?} differ");
    first
}

fn prepare(ws: &Ws) {
    ok(&["generate", "--config", &ws.p("world.cfg"), "--out", &ws.p("train.scds"), "--val-out", &ws.p("val.scds")]);
    ok(&[
        "train",
        "--dataset",
        &ws.p("train.scds"),
        "--val",
        &ws.p("val.scds"),
        "--config",
        &ws.p("train.cfg"),
        "--model-out",
        &ws.p("m.scmd"),
    ]);
}

#[test]
fn every_subcommand_is_reproducible() {
    let ws = Ws::new();
    let (train, val, model) = (ws.p("train.scds"), ws.p("val.scds"), ws.p("m.scmd"));
    let cfg = ws.p("train.cfg");

    twice(
        &["generate", "--config", &ws.p("world.cfg"), "--out", &train, "--val-out", &val],
        &[train.clone(), val.clone()],
    );
    twice(
        &["train", "--dataset", &train, "--val", &val, "--config", &cfg, "--model-out", &model],
        &[model.clone(), format!("{model}.history.csv")],
    );
    let emb = ws.p("emb.csv");
    twice(&["embed", "--model", &model, "--dataset", &val, "--out", &emb], std::slice::from_ref(&emb));

    let out = twice(&["eval-precision", "--dataset", &val, "--model", &model, "--config", &cfg], &[]);
    assert!(out.starts_with("precision="), "{out}");
    let out = twice(&["eval-precision", "--dataset", &val, "--mode", "raw", "--k", "3", "--n-samples", "40"], &[]);
    assert!(out.starts_with("precision="), "{out}");

    let sweep = ws.p("sweep.csv");
    twice(&["sweep-k", "--dataset", &train, "--val", &val, "--config", &cfg, "--k-list", "1,3", "--out", &sweep], std::slice::from_ref(&sweep));
    let text = fs::read_to_string(&sweep).unwrap();
    assert!(text.starts_with("k,precision\n1,"), "{text}");

    let pose = ws.p("pose.csv");
    twice(
        &["match-pose", "--dataset", &train, "--mode", "raw", "--k", "3", "--out", &pose],
        std::slice::from_ref(&pose),
    );
    twice(
        &["match-pose", "--dataset", &train, "--model", &model, "--pairs", "0:2,3:5", "--out", &pose],
        std::slice::from_ref(&pose),
    );
    let tp = ws.p("tp.csv");
    twice(&["tp-curve", "--dataset", &train, "--model", &model, "--out", &tp], std::slice::from_ref(&tp));

    let dir = ws.p("plain");
    twice(&["export", "--dataset", &val, "--dir", &dir], &[]);
    let imported = ws.p("imported.scds");
    twice(&["import", "--dir", &dir, "--out", &imported], std::slice::from_ref(&imported));

    // bench reports wall-clock times; only its shape is stable
    let bench = ws.p("bench.csv");
    ok(&["bench", "--model", &model, "--dataset", &train, "--out", &bench]);
    let text = fs::read_to_string(&bench).unwrap();
    let stages: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert!(text.starts_with("stage,ms\n"));
    assert_eq!(stages, ["constellations", "embedding", "matching_raw", "matching_scone"]);
}

#[test]
fn manifests_record_the_run() {
    let ws = Ws::new();
    prepare(&ws);
    let m = manifest(&ws.p("m.scmd"));
    assert_eq!(m["subcommand"], "train");
    assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["config"]["k"], "3");
    assert!(m["timings_ms"].as_object().is_some_and(|t| !t.is_empty()));
    let inputs = m["inputs"].to_string();
    assert!(inputs.contains("train.scds") && inputs.contains("train.cfg"));
}

#[test]
fn model_file_round_trips() {
    let ws = Ws::new();
    prepare(&ws);
    let bytes = fs::read(ws.p("m.scmd")).unwrap();
    let model = load_model(Path::new(&ws.p("m.scmd"))).unwrap();
    scone_core::nn::save_model(&model, Path::new(&ws.p("m2.scmd"))).unwrap();
    assert_eq!(bytes, fs::read(ws.p("m2.scmd")).unwrap());
    assert_eq!(load_model(Path::new(&ws.p("m2.scmd"))).unwrap(), model);
}

#[test]
fn flags_override_config_file() {
    let ws = Ws::new();
    prepare(&ws);
    let (train, model) = (ws.p("train.scds"), ws.p("m5.scmd"));
    ok(&["train", "--dataset", &train, "--config", &ws.p("train.cfg"), "--k", "5", "--margin", "2", "--model-out", &model]);
    assert_eq!(load_model(Path::new(&model)).unwrap().k, 5);
    let m = manifest(&model);
    assert_eq!((&m["config"]["k"], &m["config"]["margin"]), (&"5".into(), &"2".into()));
    assert_eq!(m["config"]["epochs"], "2");
    assert_eq!(m["config"]["batch_size"], "8");

    // seed flag beats the file's seed
    fs::write(ws.p("seeded.cfg"), "n_landmarks = 30\nn_frames = 3\nseed = 1\n").unwrap();
    ok(&["generate", "--config", &ws.p("seeded.cfg"), "--out", &ws.p("a.scds")]);
    ok(&["generate", "--config", &ws.p("seeded.cfg"), "--seed", "2", "--out", &ws.p("b.scds")]);
    fs::write(ws.p("seed2.cfg"), "n_landmarks = 30\nn_frames = 3\nseed = 2\n").unwrap();
    ok(&["generate", "--config", &ws.p("seed2.cfg"), "--out", &ws.p("c.scds")]);
    assert_ne!(fs::read(ws.p("a.scds")).unwrap(), fs::read(ws.p("b.scds")).unwrap());
    assert_eq!(fs::read(ws.p("b.scds")).unwrap(), fs::read(ws.p("c.scds")).unwrap());
}

#[test]
fn exit_codes_follow_error_class() {
    let ws = Ws::new();
    prepare(&ws);
    assert_eq!(scone(&[]).0, 1);
    assert_eq!(scone(&["--help"]).0, 0);
    assert_eq!(scone(&["train", "--dataset"]).0, 1);
    assert_eq!(scone(&["eval-precision", "--dataset", &ws.p("val.scds"), "--mode", "fancy"]).0, 1);
    // scone mode without a model
    assert_eq!(scone(&["eval-precision", "--dataset", &ws.p("val.scds"), "--mode", "scone"]).0, 1);
    assert_eq!(scone(&["train", "--dataset", &ws.p("train.scds"), "--k", "0", "--model-out", &ws.p("x")]).0, 1);

    assert_eq!(scone(&["eval-precision", "--dataset", &ws.p("missing.scds"), "--mode", "raw"]).0, 2);
    fs::write(ws.p("garbage.scds"), b"not a dataset").unwrap();
    assert_eq!(scone(&["eval-precision", "--dataset", &ws.p("garbage.scds"), "--mode", "raw"]).0, 2);
    fs::write(ws.p("typo.cfg"), "epohcs = 3\n").unwrap();
    assert_eq!(scone(&["generate", "--config", &ws.p("typo.cfg"), "--out", &ws.p("y")]).0, 2);

    fs::write(ws.p("diverge.cfg"), "k = 3\nepochs = 3\nsteps_per_epoch = 1\nbatch_size = 8\nlearning_rate = 1e300\n").unwrap();
    let (code, _) = scone(&["train", "--dataset", &ws.p("train.scds"), "--config", &ws.p("diverge.cfg"), "--model-out", &ws.p("z")]);
    assert_eq!(code, 3);
    assert!(!Path::new(&ws.p("z")).exists());
}

#[test]
fn inputs_are_not_modified() {
    let ws = Ws::new();
    prepare(&ws);
    let before = (fs::read(ws.p("train.scds")).unwrap(), fs::read(ws.p("m.scmd")).unwrap());
    ok(&["match-pose", "--dataset", &ws.p("train.scds"), "--model", &ws.p("m.scmd"), "--out", &ws.p("p.csv")]);
    ok(&["embed", "--model", &ws.p("m.scmd"), "--dataset", &ws.p("train.scds"), "--out", &ws.p("e.csv")]);
    assert_eq!(before, (fs::read(ws.p("train.scds")).unwrap(), fs::read(ws.p("m.scmd")).unwrap()));
}

#[test]
fn match_pose_on_noise_free_pairs() {
    let ws = Ws::new();
    let cfg = ws.p("clean.cfg");
    fs::write(&cfg, "n_landmarks = 200\nn_frames = 6\ndescriptor_noise = 0\nunlinked_fraction = 0\norientation_jitter = 0\nseed = 3\n").unwrap();
    ok(&["generate", "--config", &cfg, "--out", &ws.p("clean.scds")]);
    let out = ok(&["match-pose", "--dataset", &ws.p("clean.scds"), "--mode", "raw", "--out", &ws.p("p.csv")]);
    let median: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("median_rot_err_rad="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(median.to_degrees() < 0.1, "{out}");
    assert!(out.contains("pairs=5 succeeded=5"), "{out}");
    let ds = read_dataset(Path::new(&ws.p("clean.scds"))).unwrap();
    assert_eq!(ds.frames.len(), 6);
}

#[test]
fn binary_reports_errors_on_stderr() {
    let out = Command::new(env!("CARGO_BIN_EXE_scone"))
        .args(["eval-precision", "--dataset", "/nonexistent.scds", "--mode", "raw"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = Command::new(env!("CARGO_BIN_EXE_scone")).arg("--version").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}
