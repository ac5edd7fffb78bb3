//! The `scone` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Every file output is written atomically and accompanied by a
//! `<output>.manifest.json` run manifest.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::ConfigFile;
use crate::constellation::frame_constellations;
use crate::datagen::{generate_dataset, make_split, WorldConfig};
use crate::error::{Error, ErrorClass, Result};
use crate::geometry::{rotation_error, RansacConfig};
use crate::io::{export_plain_features, import_plain_features, read_dataset, write_atomic, write_dataset};
use crate::matching::{
    curve_to_csv, evaluate_pair_pose, frame_features, nn_match, precision_eval, sweep_k, sweep_to_csv,
    true_positive_curve, EvalMode, DEFAULT_EPIPOLAR_THRESHOLD_PX, DEFAULT_RATIO_THRESHOLD, POSE_CSV_HEADER,
};
use crate::model::Dataset;
use crate::nn::{load_model, save_model, EmbeddingModel, EMBEDDING_DIM};
use crate::rng;
use crate::training::{train, TrainConfig};

pub const DEFAULT_K_GRID: &[usize] = &[1, 5, 10, 15, 20, 25, 30];
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
pub const DEFAULT_PRECISION_SAMPLES: usize = 10_000;

#[derive(Debug, Parser)]
#[command(name = "scone", version, about = "Siamese constellation embeddings for keypoint matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Train an embedding model.
    Train(TrainArgs),
    /// Write the embedding of every keypoint that has a constellation.
    Embed(EmbedArgs),
    /// Nearest-neighbour precision over landmark-linked keypoints.
    EvalPrecision(EvalPrecisionArgs),
    /// Train one model per k and report validation precision.
    SweepK(SweepKArgs),
    /// Match frame pairs, estimate relative poses, and report pose errors.
    MatchPose(MatchPoseArgs),
    /// True positives against a reference frame as a function of viewpoint change.
    TpCurve(TpCurveArgs),
    /// Time constellation building, embedding, and matching per frame pair.
    Bench(BenchArgs),
    /// Convert a directory of plain-text feature files into a dataset.
    Import(ImportArgs),
    /// Write a dataset as plain-text feature files.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Raw descriptors, Hamming distance.
    Raw,
    /// Learned embeddings, Euclidean distance.
    Scone,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Mode::Raw),
            "scone" => Ok(Mode::Scone),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also split the frames and write the validation share here; `--out`
    /// then receives the training share.
    #[arg(long)]
    pub val_out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Validation dataset; enables best-checkpoint selection.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model_out: PathBuf,
    /// Defaults to `<model-out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalPrecisionArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Required in scone mode.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Neighbour count deciding which keypoints are eligible in raw mode.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepKArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Validation dataset; without it `--dataset` is split by `train_fraction`.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated, e.g. `1,5,10`.
    #[arg(long)]
    pub k_list: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub margin: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MatchPoseArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// `consecutive`, `reference`, or explicit pairs `a:b,c:d` of frame ids.
    #[arg(long, default_value = "consecutive")]
    pub pairs: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ratio_threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TpCurveArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Reference frame id; defaults to the first frame.
    #[arg(long)]
    pub reference: Option<i64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ratio_threshold: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "consecutive")]
    pub pairs: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub dir: PathBuf,
}

/// Written next to each output as `<output>.manifest.json`.
#[derive(Debug, Clone, Serialize, Default)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            ..Default::default()
        }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings_ms.insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    /// Writes the manifest next to every recorded output.
    fn write(&self) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for out in &self.outputs {
            write_atomic(&manifest_path(Path::new(out)), json.as_bytes())?;
        }
        Ok(())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Exit code of an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Regular output goes to `out`; diagnostics go to standard error.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Embed(a) => cmd_embed(&a),
        Command::EvalPrecision(a) => cmd_eval_precision(&a, out),
        Command::SweepK(a) => cmd_sweep_k(&a),
        Command::MatchPose(a) => cmd_match_pose(&a, out),
        Command::TpCurve(a) => cmd_tp_curve(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Import(a) => cmd_import(&a),
        Command::Export(a) => cmd_export(&a),
    }
}

fn load_config(path: Option<&Path>, manifest: &mut RunManifest) -> Result<ConfigFile> {
    match path {
        Some(p) => {
            manifest.input(p);
            ConfigFile::load(p)
        }
        None => Ok(ConfigFile::default()),
    }
}

fn load_dataset(path: &Path, manifest: &mut RunManifest) -> Result<Dataset> {
    manifest.input(path);
    read_dataset(path)
}

fn write_text(path: &Path, text: &str, manifest: &mut RunManifest) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    manifest.output(path);
    Ok(())
}

fn record_train_config(m: &mut RunManifest, c: &TrainConfig) {
    m.set("margin", c.margin);
    m.set("batch_size", c.batch_size);
    m.set("pos_fraction", c.pos_fraction);
    m.set("learning_rate", c.learning_rate);
    m.set("epochs", c.epochs);
    m.set("k", c.k);
    m.set("steps_per_epoch", c.steps_per_epoch);
    m.set("val_samples", c.val_samples);
    m.seeds.insert("seed".into(), c.seed);
}

/// Training configuration: defaults, then the file, then flags.
fn resolve_train_config(file: &ConfigFile, seed: Option<u64>, k: Option<usize>, margin: Option<f64>) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    file.apply_train(&mut c)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(k) = k {
        c.k = k;
    }
    if let Some(m) = margin {
        c.margin = m;
    }
    c.validate()?;
    Ok(c)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut m = RunManifest::new("generate");
    let file = load_config(a.config.as_deref(), &mut m)?;
    let mut wc = WorldConfig::default();
    file.apply_world(&mut wc)?;
    if let Some(s) = a.seed {
        wc.seed = s;
    }
    m.set("world", format!("{wc:?}"));
    m.seeds.insert("seed".into(), wc.seed);
    let ds = m.time("generate", || generate_dataset(&wc))?;
    match &a.val_out {
        Some(val_out) => {
            let frac = file.get("train_fraction")?.unwrap_or(DEFAULT_TRAIN_FRACTION);
            m.set("train_fraction", frac);
            let (tr, va) = make_split(&ds, frac)?;
            write_dataset(&tr, &a.out)?;
            write_dataset(&va, val_out)?;
            m.output(&a.out);
            m.output(val_out);
        }
        None => {
            write_dataset(&ds, &a.out)?;
            m.output(&a.out);
        }
    }
    m.write()
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut m = RunManifest::new("train");
    let file = load_config(a.config.as_deref(), &mut m)?;
    let cfg = resolve_train_config(&file, a.seed, a.k, a.margin)?;
    record_train_config(&mut m, &cfg);
    let train_set = load_dataset(&a.dataset, &mut m)?;
    let val_set = a.val.as_deref().map(|p| load_dataset(p, &mut m)).transpose()?;
    let (model, history) = m.time("train", || train(&train_set, val_set.as_ref(), &cfg))?;
    log::info!(
        "best epoch {} (validation precision {:?})",
        history.best_epoch,
        history.best_val_precision()
    );
    save_model(&model, &a.model_out)?;
    m.output(&a.model_out);
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut s = a.model_out.as_os_str().to_owned();
        s.push(".history.csv");
        PathBuf::from(s)
    });
    write_text(&history_path, &history.to_csv(), &mut m)?;
    m.write()
}

fn cmd_embed(a: &EmbedArgs) -> Result<()> {
    let mut m = RunManifest::new("embed");
    m.input(&a.model);
    let model = load_model(&a.model)?;
    let ds = load_dataset(&a.dataset, &mut m)?;
    let mut csv = String::from("frame_id,keypoint_idx");
    for i in 0..EMBEDDING_DIM {
        let _ = write!(csv, ",e{i}");
    }
    csv.push('\n');
    m.time("embed", || -> Result<()> {
        for frame in &ds.frames {
            let cs = frame_constellations(frame, model.k)?;
            for (c, e) in cs.iter().zip(model.embed_all(&cs)?) {
                let _ = write!(csv, "{},{}", frame.frame_id, c.central_index);
                for v in e {
                    let _ = write!(csv, ",{v}");
                }
                csv.push('\n');
            }
        }
        Ok(())
    })?;
    write_text(&a.out, &csv, &mut m)?;
    m.write()
}

/// The matching mode and, in scone mode, the loaded model.
fn resolve_mode(
    flag: Option<Mode>,
    file: &ConfigFile,
    model_path: Option<&Path>,
    manifest: &mut RunManifest,
) -> Result<(Mode, Option<EmbeddingModel>)> {
    let mode = match flag {
        Some(m) => m,
        None => file.get("mode")?.unwrap_or(Mode::Scone),
    };
    manifest.set("mode", format!("{mode:?}").to_lowercase());
    let model = match (mode, model_path) {
        (Mode::Scone, None) => return Err(Error::InvalidArgument("--model is required in scone mode".into())),
        (_, Some(p)) => {
            manifest.input(p);
            Some(load_model(p)?)
        }
        (Mode::Raw, None) => None,
    };
    Ok((mode, model))
}

fn eval_mode<'a>(mode: Mode, model: Option<&'a EmbeddingModel>, k: usize) -> EvalMode<'a> {
    match (mode, model) {
        (Mode::Scone, Some(m)) => EvalMode::Scone(m),
        _ => EvalMode::Raw { k },
    }
}

/// Neighbour count for raw mode: flag, then config, then the model's, then the default.
fn resolve_k(flag: Option<usize>, file: &ConfigFile, model: Option<&EmbeddingModel>) -> Result<usize> {
    let k = match flag {
        Some(k) => k,
        None => match file.get("k")? {
            Some(k) => k,
            None => model.map_or(TrainConfig::default().k, |m| m.k),
        },
    };
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    Ok(k)
}

fn cmd_eval_precision(a: &EvalPrecisionArgs, out: &mut dyn Write) -> Result<()> {
    let mut m = RunManifest::new("eval-precision");
    let file = load_config(a.config.as_deref(), &mut m)?;
    let (mode, model) = resolve_mode(a.mode, &file, a.model.as_deref(), &mut m)?;
    let k = resolve_k(a.k, &file, model.as_ref())?;
    let seed = a.seed.or(file.get("seed")?).unwrap_or(0);
    let n = a.n_samples.or(file.get("n_samples")?).unwrap_or(DEFAULT_PRECISION_SAMPLES);
    let ds = load_dataset(&a.dataset, &mut m)?;
    let mut rng = rng::stream(seed, "eval-precision");
    let r = precision_eval(&eval_mode(mode, model.as_ref(), k), &ds, n, &mut rng)?;
    log::info!("{} of {} nearest neighbours correct", r.n_correct, r.n_sampled);
    writeln!(out, "precision={}", r.precision)?;
    Ok(())
}

fn parse_k_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("invalid k in --k-list: {t:?}")))
        })
        .collect()
}

fn cmd_sweep_k(a: &SweepKArgs) -> Result<()> {
    let mut m = RunManifest::new("sweep-k");
    let file = load_config(a.config.as_deref(), &mut m)?;
    let cfg = resolve_train_config(&file, a.seed, None, a.margin)?;
    record_train_config(&mut m, &cfg);
    let k_values = match &a.k_list {
        Some(s) => parse_k_list(s)?,
        None => DEFAULT_K_GRID.to_vec(),
    };
    m.set("k_list", format!("{k_values:?}"));
    let ds = load_dataset(&a.dataset, &mut m)?;
    let (train_set, val_set) = match &a.val {
        Some(p) => (ds, load_dataset(p, &mut m)?),
        None => {
            let frac = file.get("train_fraction")?.unwrap_or(DEFAULT_TRAIN_FRACTION);
            m.set("train_fraction", frac);
            make_split(&ds, frac)?
        }
    };
    let rows = m.time("sweep", || sweep_k(&train_set, &val_set, &k_values, &cfg))?;
    write_text(&a.out, &sweep_to_csv(&rows), &mut m)?;
    m.write()
}

/// Frame-id pairs named by a pairs spec.
pub fn parse_pairs(spec: &str, ds: &Dataset) -> Result<Vec<(i64, i64)>> {
    let ids: Vec<i64> = ds.frames.iter().map(|f| f.frame_id).collect();
    let pairs = match spec {
        "consecutive" => ids.windows(2).map(|w| (w[0], w[1])).collect(),
        "reference" => ids.iter().skip(1).map(|&b| (ids[0], b)).collect(),
        _ => spec
            .split(',')
            .map(|p| {
                let (a, b) = p
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidArgument(format!("invalid pair {p:?}, expected a:b")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<i64>()
                        .map_err(|_| Error::InvalidArgument(format!("invalid frame id {s:?}")))
                };
                Ok((parse(a)?, parse(b)?))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!("pairs spec {spec:?} selects no pairs")));
    }
    Ok(pairs)
}

fn ransac_config(file: &ConfigFile, seed: u64) -> Result<RansacConfig> {
    let mut r = RansacConfig {
        seed,
        ..Default::default()
    };
    if let Some(v) = file.get("ransac_iterations")? {
        r.max_iterations = v;
    }
    if let Some(v) = file.get("ransac_threshold")? {
        r.inlier_threshold = v;
    }
    if let Some(v) = file.get("ransac_confidence")? {
        r.confidence = v;
    }
    Ok(r)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn cmd_match_pose(a: &MatchPoseArgs, out: &mut dyn Write) -> Result<()> {
    let mut m = RunManifest::new("match-pose");
    let file = load_config(a.config.as_deref(), &mut m)?;
    let (mode, model) = resolve_mode(a.mode, &file, a.model.as_deref(), &mut m)?;
    let k = resolve_k(a.k, &file, model.as_ref())?;
    let ratio = a.ratio_threshold.or(file.get("ratio_threshold")?).unwrap_or(DEFAULT_RATIO_THRESHOLD);
    let seed = a.seed.or(file.get("seed")?).unwrap_or(0);
    m.set("ratio_threshold", ratio);
    m.set("pairs", &a.pairs);
    m.seeds.insert("seed".into(), seed);
    let ds = load_dataset(&a.dataset, &mut m)?;
    let pairs = parse_pairs(&a.pairs, &ds)?;
    let em = eval_mode(mode, model.as_ref(), k);
    let mut csv = format!("{POSE_CSV_HEADER}\n");
    let mut rot_errs = Vec::new();
    m.time("match_pose", || -> Result<()> {
        for &(fa, fb) in &pairs {
            let ransac = ransac_config(&file, rng::derive_seed(seed, &format!("ransac/{fa}:{fb}")))?;
            match evaluate_pair_pose(&ds, &em, fa, fb, ratio, &ransac) {
                Ok(r) => {
                    rot_errs.push(r.rot_err);
                    csv.push_str(&r.csv_row());
                    csv.push('\n');
                }
                Err(e) if e.class() != ErrorClass::Usage => {
                    log::warn!("pair {fa}:{fb}: {e}");
                    let angular = match (ds.frame_by_id(fa).and_then(|f| f.pose), ds.frame_by_id(fb).and_then(|f| f.pose)) {
                        (Some(pa), Some(pb)) => rotation_error(&pa.rotation, &pb.rotation),
                        _ => f64::NAN,
                    };
                    let _ = writeln!(csv, "{fa}:{fb},{angular},nan,nan,0,0");
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    })?;
    write_text(&a.out, &csv, &mut m)?;
    writeln!(out, "pairs={} succeeded={}", pairs.len(), rot_errs.len())?;
    writeln!(out, "median_rot_err_rad={}", median(rot_errs))?;
    m.write()
}

fn cmd_tp_curve(a: &TpCurveArgs) -> Result<()> {
    let mut m = RunManifest::new("tp-curve");
    let file = load_config(a.config.as_deref(), &mut m)?;
    let (mode, model) = resolve_mode(a.mode, &file, a.model.as_deref(), &mut m)?;
    let k = resolve_k(a.k, &file, model.as_ref())?;
    let ratio = a.ratio_threshold.or(file.get("ratio_threshold")?).unwrap_or(DEFAULT_RATIO_THRESHOLD);
    let epi = file.get("epipolar_threshold_px")?.unwrap_or(DEFAULT_EPIPOLAR_THRESHOLD_PX);
    m.set("ratio_threshold", ratio);
    m.set("epipolar_threshold_px", epi);
    let ds = load_dataset(&a.dataset, &mut m)?;
    let reference = match a.reference {
        Some(r) => r,
        None => ds
            .frames
            .first()
            .map(|f| f.frame_id)
            .ok_or_else(|| Error::InsufficientData("dataset has no frames".into()))?,
    };
    m.set("reference", reference);
    let frames: Vec<i64> = ds.frames.iter().map(|f| f.frame_id).filter(|&f| f != reference).collect();
    let em = eval_mode(mode, model.as_ref(), k);
    let points = m.time("curve", || true_positive_curve(&ds, &em, reference, &frames, ratio, epi))?;
    write_text(&a.out, &curve_to_csv(&points), &mut m)?;
    m.write()
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut m = RunManifest::new("bench");
    m.input(&a.model);
    let model = load_model(&a.model)?;
    let ds = load_dataset(&a.dataset, &mut m)?;
    let pairs = parse_pairs(&a.pairs, &ds)?;
    let raw = EvalMode::Raw { k: model.k };
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    let mut add = |stage: &'static str, start: Instant| {
        *totals.entry(stage).or_default() += start.elapsed().as_secs_f64() * 1e3;
    };
    for &(fa, fb) in &pairs {
        let get = |id: i64| {
            ds.frame_by_id(id)
                .ok_or_else(|| Error::InvalidArgument(format!("no frame with id {id}")))
        };
        let (a_frame, b_frame) = (get(fa)?, get(fb)?);
        let t = Instant::now();
        let ca = frame_constellations(a_frame, model.k)?;
        let cb = frame_constellations(b_frame, model.k)?;
        add("constellations", t);
        let t = Instant::now();
        let ea = crate::matching::Features::Real(model.embed_all(&ca)?);
        let eb = crate::matching::Features::Real(model.embed_all(&cb)?);
        add("embedding", t);
        let t = Instant::now();
        nn_match(&eb, &ea)?;
        add("matching_scone", t);
        let t = Instant::now();
        let (_, ra) = frame_features(&raw, a_frame)?;
        let (_, rb) = frame_features(&raw, b_frame)?;
        nn_match(&rb, &ra)?;
        add("matching_raw", t);
    }
    let mut csv = String::from("stage,ms\n");
    for (stage, total) in &totals {
        let _ = writeln!(csv, "{stage},{}", total / pairs.len() as f64);
    }
    m.set("pairs", &a.pairs);
    write_text(&a.out, &csv, &mut m)?;
    m.write()
}

fn cmd_import(a: &ImportArgs) -> Result<()> {
    let mut m = RunManifest::new("import");
    m.input(&a.dir);
    let ds = import_plain_features(&a.dir)?;
    write_dataset(&ds, &a.out)?;
    m.output(&a.out);
    m.write()
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let mut m = RunManifest::new("export");
    let ds = load_dataset(&a.dataset, &mut m)?;
    export_plain_features(&ds, &a.dir)
}
