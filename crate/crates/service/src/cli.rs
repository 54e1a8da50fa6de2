//! Command-line subcommands. Each is a thin composition of `weldqa-core`
//! operations over a data directory laid out as
//!
//! ```text
//! <data>/scans/<id>.pgm          16-bit raw scans
//! <data>/ground_truth.csv        generator labels
//! <data>/labels.jsonl            committee label store
//! <data>/processed/<mode>/       8-bit network inputs + JSON sidecars
//! <data>/manifest.csv            split manifest
//! <data>/runs/<mode>/            models, traces, summary, evaluation
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use weldqa_core::dataset::{self, flip, DatasetManifest, Split};
use weldqa_core::metrics::{
    aggregate_runs, aoi_reference, best_run, comparison_table, confusion, metrics, runs_table, MetricsReport,
    ReferenceBaseline,
};
use weldqa_core::nn::{self, load_model, save_model, ImageStore, TrainConfig, DESK_LEARNING_RATE, PAPER_LEARNING_RATE};
use weldqa_core::pgm::{read_scan_pgm, write_image_pgm, write_scan_pgm};
use weldqa_core::preprocess::{to_network_input, PreprocessConfig, DEFAULT_GAMMA};
use weldqa_core::synth::{self, GenConfig, Interference};
use weldqa_core::{ConsensusRule, ResizeMode, Verdict};

use crate::registry::{ScanRegistry, SCANS_DIR};
use crate::store::LabelStore;

pub const GROUND_TRUTH: &str = "ground_truth.csv";
pub const LABELS: &str = "labels.jsonl";
pub const MANIFEST: &str = "manifest.csv";
pub const SUMMARY: &str = "summary.json";
pub const DATA_DIR_ENV: &str = "WELDQA_DATA_DIR";
pub const MODEL_ENV: &str = "WELDQA_MODEL";

#[derive(Debug, Parser)]
#[command(name = "weldqa", version, about = "Weld seam scan classification toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a seeded synthetic corpus of 16-bit scans.
    Generate(GenerateArgs),
    /// Convert raw scans into 299×299 8-bit network inputs.
    Preprocess(PreprocessArgs),
    /// Build the train/validation/test manifest.
    Split(SplitArgs),
    /// Train seeded runs of the classifier.
    Train(TrainArgs),
    /// Evaluate trained runs on a manifest split.
    Eval(EvalArgs),
    /// Side-by-side table of the best shrunk run, best scaled run and a reference.
    Compare(CompareArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Measure model load and classification latency.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataDir {
    /// Data directory.
    #[arg(long = "data-dir", env = DATA_DIR_ENV, default_value = "data")]
    pub path: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub data: DataDir,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// 553 faultless and 63 erroneous scans.
    #[arg(long, conflicts_with_all = ["faultless", "erroneous"])]
    pub paper_corpus: bool,
    #[arg(long, default_value_t = 10)]
    pub faultless: usize,
    #[arg(long, default_value_t = 10)]
    pub erroneous: usize,
    #[arg(long, default_value_t = 1600)]
    pub width: usize,
    #[arg(long, default_value_t = 200)]
    pub height: usize,
    /// Disable displacement, gain shift and noise.
    #[arg(long)]
    pub no_interference: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub data: DataDir,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Output directory [default: <data>/processed/<mode>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub data: DataDir,
    #[arg(long, default_value_t = 16)]
    pub val_per_class: usize,
    #[arg(long, default_value_t = 16)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Take labels from committee consensus in this label store instead of
    /// the generator ground truth. Scans without consensus are left out.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Output manifest [default: <data>/manifest.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Shrink,
    Scale,
}

impl From<Mode> for ResizeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Shrink => ResizeMode::Shrink,
            Mode::Scale => ResizeMode::Scale,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataDir,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Manifest [default: <data>/manifest.csv].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = DESK_LEARNING_RATE, conflicts_with = "paper_lr")]
    pub lr: f64,
    /// Use the published learning rate of 1e-6.
    #[arg(long)]
    pub paper_lr: bool,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Loss weighting: `none`, `balanced` (inverse class frequency in the
    /// training split) or a number used as the erroneous-class weight.
    #[arg(long, default_value = "none")]
    pub class_weight: String,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Output directory [default: <data>/runs/<mode>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Checkpoint {
    Best,
    Final,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataDir,
    /// Directory written by `train` [default: <data>/runs/<mode>].
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
    /// Evaluate a single model file instead of a runs directory.
    #[arg(long, conflicts_with = "runs_dir")]
    pub model: Option<PathBuf>,
    /// Resize mode; read from the run summary when omitted.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, value_enum, default_value = "final")]
    pub checkpoint: Checkpoint,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// JSON report path [default: <runs-dir>/eval-<checkpoint>.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// `eval` report of the shrink-mode runs.
    #[arg(long)]
    pub shrunk: PathBuf,
    /// `eval` report of the scale-mode runs.
    #[arg(long)]
    pub scaled: PathBuf,
    /// Reference baseline JSON [default: the shipped AOI fixture].
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Leave the reference column out.
    #[arg(long, conflicts_with = "reference")]
    pub no_reference: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub data: DataDir,
    #[arg(long, env = MODEL_ENV)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long, default_value_t = 5)]
    pub quorum: usize,
    /// Accept votes on scans that already have consensus.
    #[arg(long)]
    pub allow_relabel: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataDir,
    #[arg(long, env = MODEL_ENV)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "scale")]
    pub mode: Mode,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(&a).map(|_| ()),
        Command::Preprocess(a) => preprocess(&a).map(|_| ()),
        Command::Split(a) => split(&a).map(|_| ()),
        Command::Train(a) => train(&a).map(|_| ()),
        Command::Eval(a) => eval(&a).map(|_| ()),
        Command::Compare(a) => compare(&a).map(|t| print!("{t}")),
        Command::Serve(a) => serve(&a),
        Command::Bench(a) => {
            let report = crate::bench::bench(&a.model, &a.data.path, a.n, a.mode.into())?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(out) = &a.out {
                write_file(out, json.as_bytes())?;
            }
            println!("{json}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthRow {
    scan_id: String,
    verdict: Verdict,
    defects: String,
    seed: u64,
}

/// Writes the corpus and returns the number of scans.
pub fn generate(a: &GenerateArgs) -> Result<usize> {
    let (nf, ne) = if a.paper_corpus {
        (synth::PAPER_FAULTLESS, synth::PAPER_ERRONEOUS)
    } else {
        (a.faultless, a.erroneous)
    };
    let mut cfg = GenConfig::new(a.seed, nf, ne);
    cfg.width = a.width;
    cfg.height = a.height;
    if a.no_interference {
        cfg.interference = Interference::none();
    }
    let corpus = synth::generate(&cfg)?;
    let scans = a.data.path.join(SCANS_DIR);
    std::fs::create_dir_all(&scans).with_context(|| format!("creating {}", scans.display()))?;
    let mut gt = csv::Writer::from_writer(Vec::new());
    for g in &corpus {
        write_file(&scans.join(format!("{}.pgm", g.scan.id())), &write_scan_pgm(&g.scan))?;
        gt.serialize(GroundTruthRow {
            scan_id: g.scan.id().to_string(),
            verdict: g.verdict,
            defects: g.defects.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(";"),
            seed: a.seed,
        })?;
    }
    write_file(&a.data.path.join(GROUND_TRUTH), &gt.into_inner()?)?;
    eprintln!("wrote {} scans ({nf} faultless, {ne} erroneous) to {}", corpus.len(), scans.display());
    Ok(corpus.len())
}

pub fn read_ground_truth(data: &Path) -> Result<Vec<(String, Verdict)>> {
    let path = data.join(GROUND_TRUTH);
    let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize::<GroundTruthRow>()
        .map(|row| {
            let row = row.with_context(|| format!("parsing {}", path.display()))?;
            Ok((row.scan_id, row.verdict))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    source_scan_id: String,
    resize_mode: ResizeMode,
    gamma: f64,
    side: usize,
    source_width: usize,
    source_height: usize,
}

/// Preprocesses every registered scan; returns the output directory.
pub fn preprocess(a: &PreprocessArgs) -> Result<PathBuf> {
    let mode: ResizeMode = a.mode.into();
    let cfg = PreprocessConfig::new(mode).with_gamma(a.gamma);
    cfg.validate()?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.data.path.join("processed").join(mode.as_str()));
    let registry = ScanRegistry::load(&a.data.path)?;
    if registry.is_empty() {
        bail!("no scans under {}", a.data.path.join(SCANS_DIR).display());
    }
    for id in registry.ids() {
        let scan = registry.scan(id).expect("listed id")?;
        let img = to_network_input(&scan, &cfg)?;
        write_file(&out.join(format!("{id}.pgm")), &write_image_pgm(&img))?;
        let sidecar = Sidecar {
            source_scan_id: id.to_string(),
            resize_mode: mode,
            gamma: a.gamma,
            side: img.side(),
            source_width: scan.width(),
            source_height: scan.height(),
        };
        write_file(&out.join(format!("{id}.json")), serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    }
    eprintln!("preprocessed {} scans ({mode}) into {}", registry.len(), out.display());
    Ok(out)
}

pub fn split(a: &SplitArgs) -> Result<DatasetManifest> {
    let labels = match &a.labels {
        Some(path) => {
            let store = LabelStore::open(path, ConsensusRule::default(), false)?;
            store
                .records()
                .filter_map(|r| r.consensus.map(|v| (r.scan_id.clone(), v)))
                .collect()
        }
        None => read_ground_truth(&a.data.path)?,
    };
    let manifest = dataset::split(&labels, a.val_per_class, a.test_per_class, a.seed)?;
    let violations = manifest.verify();
    if !violations.is_empty() {
        bail!("manifest violates split invariants: {violations:?}");
    }
    let out = a.out.clone().unwrap_or_else(|| a.data.path.join(MANIFEST));
    let mut buf = Vec::new();
    manifest.write_csv(&mut buf)?;
    write_file(&out, &buf)?;
    for (split, (f, e)) in manifest.counts() {
        eprintln!("{split:<10} faultless {f:>5}  erroneous {e:>5}");
    }
    Ok(manifest)
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let f = std::fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    DatasetManifest::read_csv(f).with_context(|| format!("parsing {}", path.display()))
}

/// Preprocesses the raw scans named in `manifest`.
pub fn load_images(data: &Path, manifest: &DatasetManifest, cfg: &PreprocessConfig) -> Result<ImageStore> {
    let registry = ScanRegistry::load(data)?;
    let mut images = ImageStore::new();
    for e in &manifest.entries {
        if images.contains_key(&e.scan_id) {
            continue;
        }
        let bytes = registry
            .bytes(&e.scan_id)
            .with_context(|| format!("manifest names scan {} missing from {}", e.scan_id, data.display()))??;
        let scan = read_scan_pgm(&bytes, &e.scan_id)?;
        images.insert(e.scan_id.clone(), to_network_input(&scan, cfg)?);
    }
    Ok(images)
}

fn class_weights(spec: &str, manifest: &DatasetManifest) -> Result<Option<[f64; 2]>> {
    match spec {
        "none" => Ok(None),
        "balanced" => {
            let (f, e) = manifest.counts().get(&Split::Train).copied().unwrap_or((0, 0));
            if f == 0 || e == 0 {
                bail!("balanced class weights need both classes in the training split");
            }
            let n = (f + e) as f64;
            Ok(Some([n / (2.0 * f as f64), n / (2.0 * e as f64)]))
        }
        w => {
            let w: f64 = w
                .parse()
                .with_context(|| format!("--class-weight expects none, balanced or a number, got {w:?}"))?;
            Ok(Some([1.0, w]))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub max_validation_accuracy: Option<f64>,
    pub final_model: String,
    pub best_model: String,
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: ResizeMode,
    pub gamma: f64,
    pub manifest_seed: u64,
    pub config: TrainConfig,
    pub runs: Vec<RunSummary>,
}

/// Trains `--runs` runs and writes models, traces and `summary.json`.
/// Wall times go to `timing.json` so the summary stays reproducible.
pub fn train(a: &TrainArgs) -> Result<TrainSummary> {
    let mode: ResizeMode = a.mode.into();
    let manifest_path = a.manifest.clone().unwrap_or_else(|| a.data.path.join(MANIFEST));
    let manifest = read_manifest(&manifest_path)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: if a.paper_lr { PAPER_LEARNING_RATE } else { a.lr },
        batch_size: a.batch_size,
        seed: a.seed,
        runs: a.runs,
        class_weights: class_weights(&a.class_weight, &manifest)?,
    };
    cfg.validate()?;
    let pre = PreprocessConfig::new(mode).with_gamma(a.gamma);
    pre.validate()?;
    let out = a.out.clone().unwrap_or_else(|| a.data.path.join("runs").join(mode.as_str()));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let images = load_images(&a.data.path, &manifest, &pre)?;
    let mut runs = Vec::new();
    let mut timing = Vec::new();
    for k in 0..cfg.runs {
        let run = k + 1;
        let run_cfg = TrainConfig {
            seed: cfg.run_seed(k),
            runs: 1,
            ..cfg.clone()
        };
        let start = Instant::now();
        let outcome = nn::train::train_with_progress(&manifest, &images, &run_cfg, |e| {
            eprintln!(
                "[{mode} run {run}] epoch {:>3}  train acc {:.4} loss {:.4}  val acc {} loss {}",
                e.epoch,
                e.train_accuracy,
                e.train_loss,
                e.val_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
                e.val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            )
        })?;
        timing.push(serde_json::json!({ "run": run, "wall_s": start.elapsed().as_secs_f64() }));
        let names = [
            format!("run-{run}.final.wsqa"),
            format!("run-{run}.best.wsqa"),
            format!("run-{run}.trace.csv"),
        ];
        write_file(&out.join(&names[0]), &save_model(&outcome.final_model))?;
        write_file(&out.join(&names[1]), &save_model(&outcome.best_model))?;
        let mut trace = Vec::new();
        outcome.trace.write_csv(&mut trace)?;
        write_file(&out.join(&names[2]), &trace)?;
        let [final_model, best_model, trace] = names;
        runs.push(RunSummary {
            run,
            seed: run_cfg.seed,
            best_epoch: outcome.best_epoch,
            max_validation_accuracy: outcome.max_validation_accuracy,
            final_model,
            best_model,
            trace,
        });
    }
    let summary = TrainSummary {
        mode,
        gamma: a.gamma,
        manifest_seed: manifest.seed,
        config: cfg,
        runs,
    };
    write_file(&out.join(SUMMARY), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    write_file(
        &out.join("timing.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "runs": timing }))?.as_bytes(),
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: ResizeMode,
    pub checkpoint: Checkpoint,
    pub split: Split,
    pub runs: Vec<MetricsReport>,
    pub average: Option<MetricsReport>,
}

/// Test-split metrics of one model.
pub fn evaluate_model(
    model: &nn::ModelParams,
    images: &ImageStore,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<MetricsReport> {
    let mut predictions = Vec::new();
    let mut truth = Vec::new();
    for e in manifest.split_entries(split) {
        let img = images
            .get(&e.scan_id)
            .with_context(|| format!("no image for {}", e.scan_id))?;
        predictions.push(nn::classify(model, &flip(img, e.variant), nn::DEFAULT_THRESHOLD)?);
        truth.push(e.verdict);
    }
    Ok(metrics(&confusion(&predictions, &truth)?)?)
}

pub fn eval(a: &EvalArgs) -> Result<EvalReport> {
    let split: Split = a.split.parse()?;
    let manifest = read_manifest(&a.manifest.clone().unwrap_or_else(|| a.data.path.join(MANIFEST)))?;
    let (models, mode, out) = if let Some(path) = &a.model {
        let Some(mode) = a.mode else {
            bail!("--mode is required with --model");
        };
        let model = load_model(&std::fs::read(path).with_context(|| format!("reading {}", path.display()))?)?;
        let name = path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
        let out = a.out.clone().unwrap_or_else(|| path.with_extension("eval.json"));
        (vec![(name, model, None)], ResizeMode::from(mode), out)
    } else {
        let dir = match (&a.runs_dir, a.mode) {
            (Some(d), _) => d.clone(),
            (None, Some(m)) => a.data.path.join("runs").join(ResizeMode::from(m).as_str()),
            (None, None) => bail!("give --runs-dir, --mode or --model"),
        };
        let summary: TrainSummary = serde_json::from_slice(
            &std::fs::read(dir.join(SUMMARY)).with_context(|| format!("reading {}", dir.join(SUMMARY).display()))?,
        )?;
        let mut models = Vec::new();
        for r in &summary.runs {
            let file = match a.checkpoint {
                Checkpoint::Best => &r.best_model,
                Checkpoint::Final => &r.final_model,
            };
            let model = load_model(&std::fs::read(dir.join(file)).with_context(|| format!("reading {file}"))?)?;
            models.push((format!("run {}", r.run), model, r.max_validation_accuracy));
        }
        let out = a.out.clone().unwrap_or_else(|| {
            dir.join(format!(
                "eval-{}.json",
                match a.checkpoint {
                    Checkpoint::Best => "best",
                    Checkpoint::Final => "final",
                }
            ))
        });
        (models, summary.mode, out)
    };
    let side = models[0].1.input_shape().1;
    let images = load_images(&a.data.path, &manifest, &crate::http::preprocess_for(&models[0].1, mode))?;
    let mut runs = Vec::new();
    for (name, model, max_val) in &models {
        if model.input_shape().1 != side {
            bail!("models of one evaluation must share an input size");
        }
        let mut r = evaluate_model(model, &images, &manifest, split)?;
        r.run_id = name.clone();
        r.max_validation_accuracy = *max_val;
        runs.push(r);
    }
    let average = aggregate_runs(&runs).ok();
    let table = runs_table(&runs, average.as_ref());
    print!("{table}");
    let report = EvalReport {
        mode,
        checkpoint: a.checkpoint,
        split,
        runs,
        average,
    };
    write_file(&out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    write_file(&out.with_extension("txt"), table.as_bytes())?;
    Ok(report)
}

fn read_eval(path: &Path) -> Result<EvalReport> {
    serde_json::from_slice(&std::fs::read(path).with_context(|| format!("reading {}", path.display()))?)
        .with_context(|| format!("parsing {}", path.display()))
}

/// Table of the best run of each mode against the reference baseline.
pub fn compare(a: &CompareArgs) -> Result<String> {
    let pick = |path: &Path| -> Result<MetricsReport> {
        let report = read_eval(path)?;
        best_run(&report.runs)
            .cloned()
            .with_context(|| format!("{} has no runs", path.display()))
    };
    let shrunk = pick(&a.shrunk)?;
    let scaled = pick(&a.scaled)?;
    let reference = if a.no_reference {
        None
    } else {
        match &a.reference {
            Some(p) => match ReferenceBaseline::load(p) {
                Ok(b) => Some(b),
                Err(e) => {
                    eprintln!("reference baseline {} unavailable: {e}", p.display());
                    None
                }
            },
            None => Some(aoi_reference()),
        }
    };
    Ok(comparison_table(&shrunk, &scaled, reference.map(|r| r.report()).as_ref()))
}

/// Builds the application state for `serve`.
pub fn app_state(data_dir: &Path, model: Option<&Path>, quorum: usize, allow_relabel: bool) -> Result<crate::http::AppState> {
    let registry = ScanRegistry::load(data_dir)?;
    let rule = ConsensusRule::new(quorum)?;
    let store = LabelStore::open(data_dir.join(LABELS), rule, allow_relabel)?;
    let model = match model {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            Some(std::sync::Arc::new(load_model(&bytes).with_context(|| format!("loading {}", p.display()))?))
        }
        None => None,
    };
    Ok(crate::http::AppState {
        registry,
        store: std::sync::Mutex::new(store),
        model,
    })
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    std::fs::create_dir_all(&a.data.path)?;
    let state = app_state(&a.data.path, a.model.as_deref(), a.quorum, a.allow_relabel)?;
    eprintln!(
        "serving {} scans from {} (model {}) on {}",
        state.registry.len(),
        a.data.path.display(),
        if state.model.is_some() { "loaded" } else { "not loaded" },
        a.bind
    );
    let app = crate::http::router(state);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind).await?;
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(())
}
