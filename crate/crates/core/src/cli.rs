//! `xmc` command line: one subcommand per pipeline stage.
//!
//! Settings come from an optional flat `key = value` file (`--config`) with
//! command-line flags taking precedence. Keys are the long flag names; `_`
//! and `-` are interchangeable. Data goes to files under `--out`, messages
//! to standard error.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 missing input,
//! 4 input violates a file contract, 5 computation failed.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::alignment_lesson::{self, AlignmentConfig, AlignmentError, WarmupConfig};
use crate::bench_eval::{self, EvalError};
use crate::curriculum::{self, CurriculumError, ScheduleKind, DEFAULT_TIERS};
use crate::ingest::{self, IngestError};
use crate::kernel_lesson::{self, Bandwidth, KernelConfig, KernelError, VisualScoresHeader};
use crate::pairgen::{self, PairgenError, ReidEntry, ResampleConfig, ResampleMode};
use crate::stats::Histogram;
use crate::trainer::{self, TrainConfig, TrainError, WeightMap};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing input: {0}")]
    MissingInput(PathBuf),
    #[error("{0}")]
    Contract(String),
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::Contract(_) => 4,
            CliError::Compute(_) => 5,
        }
    }

    fn ingest(path: &Path, e: IngestError) -> Self {
        match e {
            IngestError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingInput(path.to_path_buf())
            }
            other => CliError::Contract(format!("{}: {other}", path.display())),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::Compute(format!("visual scoring: {e}"))
    }
}

impl From<AlignmentError> for CliError {
    fn from(e: AlignmentError) -> Self {
        match e {
            AlignmentError::InvalidParameter(_) => CliError::Usage(e.to_string()),
            _ => CliError::Compute(format!("alignment scoring: {e}")),
        }
    }
}

impl From<CurriculumError> for CliError {
    fn from(e: CurriculumError) -> Self {
        match e {
            CurriculumError::ZeroTiers | CurriculumError::TooManyTiers { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Contract(format!("curriculum: {e}")),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            TrainError::NonFiniteLogits(_) => CliError::Compute(format!("training: {e}")),
            _ => CliError::Contract(format!("training: {e}")),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Contract(format!("evaluation: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "xmc", version, about = "Cross-modal curriculum pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub options: Options,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Projection scores of infrared samples against the visible domain.
    ScoreVisual,
    /// Warm up the contrastive scorer; per-pair loss, rate and weight.
    ScoreAlignment,
    /// Borda-fuse the visual and alignment rankings.
    Fuse,
    /// Cut the fused ranking into tiers and emit a sample order.
    Schedule,
    /// Train the reference classifier along a plan.
    Train,
    /// Captions and benchmark questions from detection annotations.
    GeneratePairs,
    /// Score benchmark predictions, or aggregate per-task values.
    Evaluate,
    /// Difficulty-score histograms.
    Histogram,
}

/// Every flag may also be set in the config file under the same name.
#[derive(Debug, Default, Clone, Args)]
pub struct Options {
    /// Flat key=value settings file; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<String>,
    /// Number of difficulty tiers.
    #[arg(long, global = true, value_name = "INT")]
    pub tiers: Option<String>,
    #[arg(long, global = true, value_name = "KIND")]
    pub schedule: Option<String>,
    /// Gaussian kernel bandwidth, or `median` for the median heuristic.
    #[arg(long, global = true, value_name = "FLOAT|median")]
    pub bandwidth: Option<String>,
    #[arg(long, global = true, value_name = "FLOAT")]
    pub epsilon: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<String>,
    #[arg(long, global = true, value_name = "INT")]
    pub epochs: Option<String>,
    #[arg(long, global = true, value_name = "FLOAT")]
    pub lr: Option<String>,
    #[arg(long, global = true, value_name = "INT")]
    pub batch_size: Option<String>,
    /// Scale each sample's loss by its alignment weight.
    #[arg(long, global = true)]
    pub use_weights: bool,
    #[arg(long, global = true, value_name = "INT")]
    pub shared_dim: Option<String>,
    #[arg(long, global = true, value_name = "FLOAT")]
    pub temperature: Option<String>,
    /// Fraction of annotated frames kept before generation.
    #[arg(long, global = true, value_name = "FLOAT")]
    pub retain_rate: Option<String>,
    #[arg(long, global = true, value_name = "stride|seeded-uniform")]
    pub resample_mode: Option<String>,
    #[arg(long, global = true, value_name = "INT")]
    pub bins: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub embeddings: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub paired: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub visual_scores: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub alignment_scores: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub fused: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub plan: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub data: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub holdout: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub annotations: Option<String>,
    /// Object categories, one per line.
    #[arg(long, global = true, value_name = "PATH")]
    pub vocabulary: Option<String>,
    /// Scene labels, one per line.
    #[arg(long, global = true, value_name = "PATH")]
    pub scenes: Option<String>,
    /// Re-id gallery JSONL of `{image_id, identity}`.
    #[arg(long, global = true, value_name = "PATH")]
    pub reid_gallery: Option<String>,
    /// JSON object of metric values keyed by task name.
    #[arg(long, global = true, value_name = "PATH")]
    pub per_task: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub predictions: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub truth: Option<String>,
}

impl Options {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("seed", self.seed.clone()),
            ("tiers", self.tiers.clone()),
            ("schedule", self.schedule.clone()),
            ("bandwidth", self.bandwidth.clone()),
            ("epsilon", self.epsilon.clone()),
            ("out", self.out.clone()),
            ("epochs", self.epochs.clone()),
            ("lr", self.lr.clone()),
            ("batch-size", self.batch_size.clone()),
            ("use-weights", self.use_weights.then(|| "true".to_string())),
            ("shared-dim", self.shared_dim.clone()),
            ("temperature", self.temperature.clone()),
            ("retain-rate", self.retain_rate.clone()),
            ("resample-mode", self.resample_mode.clone()),
            ("bins", self.bins.clone()),
            ("embeddings", self.embeddings.clone()),
            ("paired", self.paired.clone()),
            ("visual-scores", self.visual_scores.clone()),
            ("alignment-scores", self.alignment_scores.clone()),
            ("fused", self.fused.clone()),
            ("plan", self.plan.clone()),
            ("data", self.data.clone()),
            ("holdout", self.holdout.clone()),
            ("annotations", self.annotations.clone()),
            ("vocabulary", self.vocabulary.clone()),
            ("scenes", self.scenes.clone()),
            ("reid-gallery", self.reid_gallery.clone()),
            ("per-task", self.per_task.clone()),
            ("predictions", self.predictions.clone()),
            ("truth", self.truth.clone()),
        ]
    }
}

/// Resolved settings: config file values overlaid by flags.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn resolve(options: &Options) -> Result<Self, CliError> {
        let flags = options.flags();
        let mut values = BTreeMap::new();
        if let Some(path) = &options.config {
            let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => CliError::MissingInput(path.clone()),
                _ => CliError::Usage(format!("{}: {e}", path.display())),
            })?;
            for (key, value) in parse_config(&text)? {
                if !flags.iter().any(|(k, _)| *k == key) {
                    return Err(CliError::Usage(format!(
                        "{}: unknown key {key:?}",
                        path.display()
                    )));
                }
                values.insert(key, value);
            }
        }
        for (key, value) in flags {
            if let Some(v) = value {
                values.insert(key.to_string(), v);
            }
        }
        Ok(Self { values })
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| CliError::Usage(format!("--{key} {v:?}: {e}")))
            })
            .transpose()
    }

    fn get_or<T>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(PathBuf::from)
    }

    /// Path of a required input; absent flag is a usage error, absent file a
    /// missing input.
    fn input(&self, key: &str) -> Result<PathBuf, CliError> {
        let path = self
            .path(key)
            .ok_or_else(|| CliError::Usage(format!("--{key} is required")))?;
        existing(path)
    }

    fn optional_input(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        self.path(key).map(existing).transpose()
    }

    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.path("out").unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn seed(&self) -> Result<u64, CliError> {
        self.get_or("seed", 0)
    }
}

fn existing(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingInput(path))
    }
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_bandwidth(s: &str) -> Result<Bandwidth, CliError> {
    if s == "median" {
        return Ok(Bandwidth::MedianHeuristic);
    }
    s.parse()
        .map(Bandwidth::Fixed)
        .map_err(|_| CliError::Usage(format!("--bandwidth {s:?}: expected a number or median")))
}

fn parse_resample_mode(s: &str) -> Result<ResampleMode, CliError> {
    match s {
        "stride" => Ok(ResampleMode::Stride),
        "seeded-uniform" => Ok(ResampleMode::SeededUniform),
        _ => Err(CliError::Usage(format!("unknown resample mode {s:?}"))),
    }
}

fn read_lines(path: &Path) -> Result<std::collections::BTreeSet<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::ingest(path, IngestError::Io {
        path: path.to_path_buf(),
        source: e,
    }))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string(value).map_err(|e| CliError::Compute(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn written(path: &Path, e: IngestError) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

/// Run one subcommand with resolved settings.
pub fn run(command: Command, settings: &Settings) -> Result<(), CliError> {
    match command {
        Command::ScoreVisual => score_visual(settings),
        Command::ScoreAlignment => score_alignment(settings),
        Command::Fuse => fuse(settings),
        Command::Schedule => schedule(settings),
        Command::Train => train(settings),
        Command::GeneratePairs => generate_pairs(settings),
        Command::Evaluate => evaluate(settings),
        Command::Histogram => histogram(settings),
    }
}

fn score_visual(s: &Settings) -> Result<(), CliError> {
    let input = s.input("embeddings")?;
    let set = ingest::load_embeddings(&input).map_err(|e| CliError::ingest(&input, e))?;
    let cfg = KernelConfig {
        bandwidth: match s.values.get("bandwidth") {
            Some(b) => parse_bandwidth(b)?,
            None => Bandwidth::MedianHeuristic,
        },
        epsilon: s.get_or("epsilon", kernel_lesson::DEFAULT_EPSILON)?,
    };
    let kernel = cfg.resolve(&set).map_err(|e| match e {
        KernelError::InvalidBandwidth(_) => CliError::Usage(e.to_string()),
        other => other.into(),
    })?;
    let scoring = kernel_lesson::projection_scores(&set, &kernel, cfg.epsilon)?;
    let header = VisualScoresHeader {
        mmd: scoring.geometry.mmd,
        bandwidth: kernel.bandwidth(),
        n_ir: set.count(ingest::Domain::Infrared),
        n_vis: set.count(ingest::Domain::Visible),
    };
    let out = s.out_dir()?.join("visual_scores.jsonl");
    kernel_lesson::write_visual_scores(&out, &header, &scoring.scores).map_err(|e| written(&out, e))
}

fn score_alignment(s: &Settings) -> Result<(), CliError> {
    let input = s.input("paired")?;
    let data = ingest::load_paired_embeddings(&input).map_err(|e| CliError::ingest(&input, e))?;
    let defaults = AlignmentConfig::default();
    let cfg = AlignmentConfig {
        shared_dim: s.get_or("shared-dim", defaults.shared_dim)?,
        temperature: s.get_or("temperature", defaults.temperature)?,
        warmup: WarmupConfig {
            epochs: s.get_or("epochs", defaults.warmup.epochs)?,
            lr: s.get_or("lr", defaults.warmup.lr)?,
        },
        seed: s.seed()?,
    };
    let scoring = alignment_lesson::score_alignment(&data, &cfg)?;
    if scoring.warmup.increasing_steps > 0 {
        eprintln!(
            "warning: warm-up loss rose on {} of {} steps; consider a smaller --lr",
            scoring.warmup.increasing_steps, cfg.warmup.epochs
        );
    }
    let out = s.out_dir()?.join("alignment_scores.jsonl");
    alignment_lesson::write_alignment_scores(&out, &scoring.scores).map_err(|e| written(&out, e))
}

fn fuse(s: &Settings) -> Result<(), CliError> {
    let vpath = s.input("visual-scores")?;
    let apath = s.input("alignment-scores")?;
    let (_, visual) =
        kernel_lesson::read_visual_scores(&vpath).map_err(|e| CliError::ingest(&vpath, e))?;
    let alignment =
        alignment_lesson::read_alignment_scores(&apath).map_err(|e| CliError::ingest(&apath, e))?;
    let ranking = curriculum::fuse_rankings(
        &kernel_lesson::rank_by_visual_difficulty(&visual),
        &alignment_lesson::rank_by_alignment_difficulty(&alignment),
    )?;
    let out = s.out_dir()?.join("fused_ranking.jsonl");
    curriculum::write_fused_ranking(&out, &ranking).map_err(|e| written(&out, e))
}

fn schedule(s: &Settings) -> Result<(), CliError> {
    let input = s.input("fused")?;
    let ranking = curriculum::read_fused_ranking(&input).map_err(|e| CliError::ingest(&input, e))?;
    let tiers = curriculum::partition_tiers(&ranking, s.get_or("tiers", DEFAULT_TIERS)?)?;
    let kind = s.get_or("schedule", ScheduleKind::AscendingStratifiedRandom)?;
    let plan = curriculum::build_schedule(&tiers, kind, s.seed()?);
    let out = s.out_dir()?.join("plan.jsonl");
    curriculum::write_plan(&out, &plan).map_err(|e| written(&out, e))
}

fn train(s: &Settings) -> Result<(), CliError> {
    let dpath = s.input("data")?;
    let ppath = s.input("plan")?;
    let data = ingest::load_labeled_set(&dpath).map_err(|e| CliError::ingest(&dpath, e))?;
    let plan = curriculum::read_plan(&ppath).map_err(|e| CliError::ingest(&ppath, e))?;
    let holdout = match s.optional_input("holdout")? {
        Some(p) => Some(ingest::load_labeled_set(&p).map_err(|e| CliError::ingest(&p, e))?),
        None => None,
    };
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        lr: s.get_or("lr", defaults.lr)?,
        epochs: s.get_or("epochs", defaults.epochs)?,
        batch_size: s.get_or("batch-size", defaults.batch_size)?,
        seed: s.seed()?,
        use_weights: s.get_or("use-weights", false)?,
    };
    let weights: Option<WeightMap> = if cfg.use_weights {
        let apath = s.input("alignment-scores")?;
        let scores = alignment_lesson::read_alignment_scores(&apath)
            .map_err(|e| CliError::ingest(&apath, e))?;
        Some(scores.into_iter().map(|a| (a.id, a.weight)).collect())
    } else {
        None
    };
    let model = cfg.init_model(data.num_classes(), data.dim());
    let (_, report) = trainer::train(model, &data, &plan, weights.as_ref(), &cfg, holdout.as_ref())?;
    let out = s.out_dir()?.join("train_report.json");
    trainer::write_report(&out, &report)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", out.display())))
}

fn generate_pairs(s: &Settings) -> Result<(), CliError> {
    let apath = s.input("annotations")?;
    let vpath = s.input("vocabulary")?;
    let vocabulary = read_lines(&vpath)?;
    let scenes = match s.optional_input("scenes")? {
        Some(p) => read_lines(&p)?,
        None => Default::default(),
    };
    let annotations =
        ingest::load_annotations(&apath, &vocabulary).map_err(|e| CliError::ingest(&apath, e))?;
    let seed = s.seed()?;
    let resample = ResampleConfig {
        retain_rate: s.get_or("retain-rate", 1.0)?,
        mode: match s.values.get("resample-mode") {
            Some(m) => parse_resample_mode(m)?,
            None => ResampleMode::Stride,
        },
    };
    let kept = pairgen::resample_frames(&annotations, resample, seed).map_err(|e| match e {
        PairgenError::InvalidRetainRate(_) => CliError::Usage(e.to_string()),
        other => CliError::Compute(other.to_string()),
    })?;

    let mut captions = Vec::with_capacity(kept.len());
    let mut questions = Vec::new();
    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    for ann in &kept {
        let g = pairgen::generate_for_annotation(ann, &vocabulary, &scenes, seed);
        captions.push(g.caption);
        questions.extend(g.questions);
        for (task, _) in g.skipped {
            *skipped.entry(task.to_string()).or_default() += 1;
        }
    }
    if let Some(gpath) = s.optional_input("reid-gallery")? {
        let gallery: Vec<ReidEntry> = ingest::read_jsonl(&gpath)
            .map_err(|e| CliError::ingest(&gpath, e))?
            .into_iter()
            .map(|(_, r)| r)
            .collect();
        for (i, entry) in gallery.iter().enumerate() {
            let rseed = pairgen::record_seed(seed, &entry.image_id, crate::TaskKind::Reid);
            match pairgen::generate_reid(&gallery, i, rseed) {
                Ok(q) => questions.push(q),
                Err(_) => *skipped.entry("reid".into()).or_default() += 1,
            }
        }
    }
    for (task, n) in &skipped {
        eprintln!("skipped {n} {task} question(s): preconditions not met");
    }
    let out = s.out_dir()?;
    let cpath = out.join("captions.jsonl");
    ingest::write_jsonl(&cpath, None::<&()>, &captions).map_err(|e| written(&cpath, e))?;
    let qpath = out.join("qa.jsonl");
    ingest::write_jsonl(&qpath, None::<&()>, &questions).map_err(|e| written(&qpath, e))
}

fn evaluate(s: &Settings) -> Result<(), CliError> {
    let per_task = if let Some(p) = s.optional_input("per-task")? {
        bench_eval::read_per_task(&p).map_err(|e| CliError::ingest(&p, e))?
    } else {
        let ppath = s.input("predictions")?;
        let tpath = s.input("truth")?;
        let preds = bench_eval::read_predictions(&ppath).map_err(|e| CliError::ingest(&ppath, e))?;
        let truths = bench_eval::read_truths(&tpath).map_err(|e| CliError::ingest(&tpath, e))?;
        bench_eval::evaluate(&preds, &truths)?
    };
    let report = bench_eval::aggregate(&per_task)?;
    write_json(&s.out_dir()?.join("report.json"), &report)
}

#[derive(Debug, Serialize)]
struct HistogramReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<Histogram>,
    #[serde(skip_serializing_if = "Option::is_none")]
    l_prime: Option<Histogram>,
}

fn histogram(s: &Settings) -> Result<(), CliError> {
    let bins = s.get_or("bins", HISTOGRAM_BINS)?;
    if bins == 0 {
        return Err(CliError::Usage("--bins must be positive".into()));
    }
    let vpath = s.optional_input("visual-scores")?;
    let apath = s.optional_input("alignment-scores")?;
    if vpath.is_none() && apath.is_none() {
        return Err(CliError::Usage(
            "--visual-scores or --alignment-scores is required".into(),
        ));
    }
    let d = match vpath {
        Some(p) => {
            let (_, scores) =
                kernel_lesson::read_visual_scores(&p).map_err(|e| CliError::ingest(&p, e))?;
            let values: Vec<f64> = scores.iter().map(|v| v.d).collect();
            Some(Histogram::from_values(&values, bins).ok_or_else(|| {
                CliError::Contract(format!("{}: no scores", p.display()))
            })?)
        }
        None => None,
    };
    let l_prime = match apath {
        Some(p) => {
            let scores =
                alignment_lesson::read_alignment_scores(&p).map_err(|e| CliError::ingest(&p, e))?;
            let values: Vec<f64> = scores.iter().map(|a| a.l_prime).collect();
            Some(Histogram::from_values(&values, bins).ok_or_else(|| {
                CliError::Contract(format!("{}: no scores", p.display()))
            })?)
        }
        None => None,
    };
    write_json(&s.out_dir()?.join("histogram.json"), &HistogramReport { d, l_prime })
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = Settings::resolve(&cli.options).and_then(|s| run(cli.command, &s));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
