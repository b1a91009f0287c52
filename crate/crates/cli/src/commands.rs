//! Subcommands. Each one loads its inputs, calls the matching library
//! operation and records what it wrote in the run manifest.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use radreg_core::augment::{clean_with_report, CleanReport};
use radreg_core::data::{
    generate_synthetic, load_manifest, split_dataset, write_manifest, DatasetIndex, Split, SplitRatios, SyntheticConfig,
};
use radreg_core::eval::{
    apply_verdicts, attach_image_refs, ensemble_predict, evaluate, flag_mismatches, paper_fixture, read_candidates, write_candidates,
    AuditCandidate, PredictionSet, Verdict, VerdictLedger,
};
use radreg_core::explain::{checkpoint_gradcam, export_embeddings, CamLayer};
use radreg_core::train::{
    baseline_sweep, pretrain, probe_sweep, subsample_indices, train_linear_head, train_supervised_baseline, write_curve_csv,
    EncoderCheckpoint, ImageBank, LinearHead, Method, ProbeData, SweepTable, TrainConfig,
};
use radreg_core::Image;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::run::{Run, RunManifest};
use crate::service::{serve, AuditService};
use crate::settings::{flag_object, layered};
use crate::UsageError;

pub const DATA_ROOT_ENV: &str = "RADREG_DATA_ROOT";
pub const PORT_ENV: &str = "RADREG_PORT";

#[derive(Debug, Parser)]
#[command(name = "radreg", version, about = "Self-supervised radiograph region classification and label auditing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic 14-region corpus and split it.
    Synth(SynthArgs),
    /// Remove borders and normalise rotation for every image of a dataset.
    Clean(CleanArgs),
    /// Self-supervised pretraining of an encoder.
    Pretrain(PretrainArgs),
    /// Fit a linear head on a frozen encoder with a fraction of the labels.
    LinearEval(LinearEvalArgs),
    /// Train an encoder and head end to end from random initialisation.
    Baseline(BaselineArgs),
    /// Test accuracy across label fractions and seeds.
    Sweep(SweepArgs),
    /// Accuracy and confusion matrix of a prediction set.
    Evaluate(EvaluateArgs),
    /// Softmax-sum ensemble of prediction sets.
    Ensemble(EnsembleArgs),
    /// Label audit: flag disagreements, record verdicts, apply them, serve the queue.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Guided Grad-CAM heatmaps.
    Gradcam(GradcamArgs),
    /// Export encoder embeddings as CSV.
    Embed(EmbedArgs),
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Write the disagreement queue of a prediction set.
    Flag(FlagArgs),
    /// Append verdicts to a ledger through the same validation as the service.
    Record(RecordArgs),
    /// Corrected accuracy after applying verdicts.
    Apply(ApplyArgs),
    /// Serve the candidate queue over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    /// 64-pixel inputs, narrow encoder, short schedules.
    Desk,
    /// 224-pixel inputs and the full schedules.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fixture {
    Paper,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset index (`.jsonl`) or manifest (`.csv`); relative paths resolve
    /// against $RADREG_DATA_ROOT when set.
    #[arg(long, default_value = "index.jsonl")]
    pub data: PathBuf,
    /// Feed images to the models without border removal and rotation normalisation.
    #[arg(long)]
    pub no_clean: bool,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// JSON or TOML file overlaid on the defaults; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: Scale,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Channels of the first residual stage.
    #[arg(long)]
    pub base_width: Option<usize>,
}

impl TrainFlags {
    fn overlay(&self, extra: &[(&str, Option<Value>)]) -> Value {
        let mut pairs = vec![
            ("epochs", self.epochs.map(|v| json!(v))),
            ("learning_rate", self.learning_rate.map(|v| json!(v))),
            ("batch_size", self.batch_size.map(|v| json!(v))),
            ("seed", self.seed.map(|v| json!(v))),
            ("model.base_width", self.base_width.map(|v| json!(v))),
        ];
        pairs.extend(extra.iter().cloned());
        flag_object(&pairs)
    }

    fn resolve(&self, standard: TrainConfig, extra: &[(&str, Option<Value>)]) -> anyhow::Result<TrainConfig> {
        let defaults = match self.scale {
            Scale::Desk => standard.desk(),
            Scale::Standard => standard,
        };
        self.resolve_from(defaults, extra)
    }

    fn resolve_from(&self, defaults: TrainConfig, extra: &[(&str, Option<Value>)]) -> anyhow::Result<TrainConfig> {
        let config: TrainConfig = layered(&defaults, self.config.as_deref(), self.overlay(extra))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// JSON or TOML generator settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Leave every record unassigned instead of a stratified 64/16/20 split.
    #[arg(long)]
    pub no_split: bool,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Base rate of the moving-average target schedule.
    #[arg(long)]
    pub tau_base: Option<f64>,
    /// Save a checkpoint every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LinearEvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Encoder checkpoint written by `pretrain`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Encoder checkpoint to probe; without it the supervised baseline is swept.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long, num_args = 2.., required = true)]
    pub members: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlagArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dataset whose image paths are attached to the candidates.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[arg(long, required_unless_present = "fixture")]
    pub candidates: Option<PathBuf>,
    /// JSONL verdicts to append.
    #[arg(long, required_unless_present = "fixture")]
    pub verdicts: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with_all = ["candidates", "verdicts"])]
    pub fixture: Option<Fixture>,
    #[arg(long)]
    pub ledger: PathBuf,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long, required_unless_present = "fixture")]
    pub predictions: Option<PathBuf>,
    /// JSONL verdict ledger.
    #[arg(long, required_unless_present = "fixture")]
    pub verdicts: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with_all = ["predictions", "verdicts"])]
    pub fixture: Option<Fixture>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, required_unless_present = "fixture")]
    pub predictions: Option<PathBuf>,
    #[arg(long, required_unless_present = "fixture")]
    pub candidates: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with_all = ["predictions", "candidates"])]
    pub fixture: Option<Fixture>,
    /// JSONL verdict ledger, created if absent.
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long, env = PORT_ENV, default_value_t = 8080)]
    pub port: u16,
    /// Static review UI served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CamTarget {
    Predicted,
    Label,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Linear head written by `linear-eval` or `baseline`.
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    pub split: Split,
    /// Record ids; the first `--count` records of the split when omitted.
    #[arg(long, num_args = 1..)]
    pub ids: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, value_enum, default_value = "predicted")]
    pub target: CamTarget,
    /// Residual stage whose activations weight the map (1 to 4).
    #[arg(long, default_value_t = CamLayer::LAST.0)]
    pub layer: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: radreg_core::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: radreg_core::Error| e.to_string())
}

/// Outcome of a command: its manifest (when it writes a run directory) and
/// a JSON summary for stdout.
pub struct Outcome {
    pub manifest: Option<RunManifest>,
    pub summary: Value,
}

/// Runs `command`; on failure a partial manifest is left flagged incomplete.
pub fn execute(command: Command) -> anyhow::Result<Outcome> {
    let (name, out) = match &command {
        Command::Synth(a) => ("synth", Some(a.out.clone())),
        Command::Clean(a) => ("clean", Some(a.out.clone())),
        Command::Pretrain(a) => ("pretrain", Some(a.out.clone())),
        Command::LinearEval(a) => ("linear-eval", Some(a.out.clone())),
        Command::Baseline(a) => ("baseline", Some(a.out.clone())),
        Command::Sweep(a) => ("sweep", Some(a.out.clone())),
        Command::Evaluate(a) => ("evaluate", Some(a.out.clone())),
        Command::Ensemble(a) => ("ensemble", Some(a.out.clone())),
        Command::Audit(AuditCommand::Flag(a)) => ("audit flag", Some(a.out.clone())),
        Command::Audit(AuditCommand::Apply(a)) => ("audit apply", Some(a.out.clone())),
        Command::Audit(AuditCommand::Record(_)) => ("audit record", None),
        Command::Audit(AuditCommand::Serve(_)) => ("audit serve", None),
        Command::Gradcam(a) => ("gradcam", Some(a.out.clone())),
        Command::Embed(a) => ("embed", Some(a.out.clone())),
    };
    let Some(out) = out else {
        let summary = match command {
            Command::Audit(AuditCommand::Record(a)) => record(a)?,
            Command::Audit(AuditCommand::Serve(a)) => serve_cmd(a)?,
            _ => unreachable!("commands without a run directory"),
        };
        return Ok(Outcome { manifest: None, summary });
    };
    let mut run = Run::start(&out, name)?;
    let result = match command {
        Command::Synth(a) => synth(a, &mut run),
        Command::Clean(a) => clean_cmd(a, &mut run),
        Command::Pretrain(a) => pretrain_cmd(a, &mut run),
        Command::LinearEval(a) => linear_eval(a, &mut run),
        Command::Baseline(a) => baseline(a, &mut run),
        Command::Sweep(a) => sweep(a, &mut run),
        Command::Evaluate(a) => evaluate_cmd(a, &mut run),
        Command::Ensemble(a) => ensemble(a, &mut run),
        Command::Audit(AuditCommand::Flag(a)) => flag(a, &mut run),
        Command::Audit(AuditCommand::Apply(a)) => apply(a, &mut run),
        Command::Gradcam(a) => gradcam(a, &mut run),
        Command::Embed(a) => embed(a, &mut run),
        Command::Audit(_) => unreachable!("handled above"),
    };
    match result {
        Ok(summary) => Ok(Outcome {
            manifest: Some(run.finish()?),
            summary,
        }),
        Err(e) => {
            let (_, body) = crate::classify(&e);
            if let Err(write_err) = run.abort(body) {
                log::error!("could not write the incomplete run manifest: {write_err:#}");
            }
            Err(e)
        }
    }
}

/// Resolves `path` against $RADREG_DATA_ROOT when it is relative.
pub fn data_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn load_index(path: &Path) -> anyhow::Result<DatasetIndex> {
    let path = data_path(path);
    let index = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => load_manifest(&path)?,
        _ => {
            if !path.exists() {
                return Err(radreg_core::Error::MissingFile(path).into());
            }
            DatasetIndex::load_jsonl(&path)?
        }
    };
    Ok(index)
}

struct Banks {
    train: ImageBank,
    val: ImageBank,
    test: ImageBank,
}

fn load_split(index: &DatasetIndex, split: Split, clean: bool) -> anyhow::Result<ImageBank> {
    let bank = ImageBank::load(index, Some(split), clean)?;
    if bank.is_empty() {
        return Err(radreg_core::Error::EmptySplit(split.name().into()).into());
    }
    Ok(bank)
}

fn load_banks(data: &DataArgs) -> anyhow::Result<Banks> {
    let index = load_index(&data.data)?;
    let clean = !data.no_clean;
    Ok(Banks {
        train: load_split(&index, Split::Train, clean)?,
        val: load_split(&index, Split::Val, clean)?,
        test: load_split(&index, Split::Test, clean)?,
    })
}

fn synth(a: SynthArgs, run: &mut Run) -> anyhow::Result<Value> {
    let flags = flag_object(&[
        ("images_per_class", a.per_class.map(|v| json!(v))),
        ("seed", a.seed.map(|v| json!(v))),
        ("image_size", a.image_size.map(|v| json!(v))),
    ]);
    let config: SyntheticConfig = layered(&SyntheticConfig::default(), a.config.as_deref(), flags)?;
    run.set_config(&config)?;
    let corpus = generate_synthetic(&config, run.dir())?;
    let index = if a.no_split {
        corpus.index
    } else {
        let split = split_dataset(&corpus.index, SplitRatios::ARCHIVE, a.split_seed, false)?;
        write_manifest(&split, &corpus.manifest)?;
        split.save_jsonl(&run.path("index.jsonl"))?;
        split
    };
    for name in ["manifest.csv", "index.jsonl", "boxes.csv"] {
        run.record(&run.path(name))?;
    }
    Ok(json!({
        "images": index.len(),
        "train": index.split_records(Split::Train).count(),
        "val": index.split_records(Split::Val).count(),
        "test": index.split_records(Split::Test).count(),
        "manifest": corpus.manifest,
    }))
}

#[derive(Serialize, Deserialize)]
struct CleanEntry {
    id: String,
    report: CleanReport,
}

fn clean_cmd(a: CleanArgs, run: &mut Run) -> anyhow::Result<Value> {
    let index = load_index(&a.data.data)?;
    let image_dir = run.path("images");
    std::fs::create_dir_all(&image_dir)?;
    let mut records = Vec::with_capacity(index.len());
    let mut reports = String::new();
    let mut warned = 0;
    for r in index.records() {
        let (cleaned, report) = clean_with_report(&Image::load_png(&r.image_ref)?);
        let path = image_dir.join(format!("{}.png", r.id));
        cleaned.save_png(&path)?;
        warned += usize::from(!report.warnings.is_empty());
        reports.push_str(&serde_json::to_string(&CleanEntry { id: r.id.clone(), report })?);
        reports.push('\n');
        let mut record = r.clone();
        record.image_ref = path;
        records.push(record);
    }
    let cleaned = DatasetIndex::new(records)?;
    write_manifest(&cleaned, &run.path("manifest.csv"))?;
    cleaned.save_jsonl(&run.path("index.jsonl"))?;
    std::fs::write(run.path("clean-report.jsonl"), reports)?;
    for name in ["manifest.csv", "index.jsonl", "clean-report.jsonl"] {
        run.record(&run.path(name))?;
    }
    Ok(json!({ "images": cleaned.len(), "with_warnings": warned }))
}

/// Pretraining defaults for `scale`.
pub fn pretrain_defaults(method: Method, scale: Scale) -> TrainConfig {
    match scale {
        Scale::Desk => TrainConfig::desk_pretrain(method),
        Scale::Standard => TrainConfig::pretrain(method),
    }
}

fn pretrain_cmd(a: PretrainArgs, run: &mut Run) -> anyhow::Result<Value> {
    if a.method == Method::Supervised {
        return Err(UsageError("pretrain takes --method simclr, byol or supcon; use `baseline` for supervised training".into()).into());
    }
    let config = a.train.resolve_from(
        pretrain_defaults(a.method, a.train.scale),
        &[
            ("ssl.tau_base", a.tau_base.map(|v| json!(v))),
            ("checkpoint_every", a.checkpoint_every.map(|v| json!(v))),
        ],
    )?;
    run.set_config(&config)?;
    let index = load_index(&a.data.data)?;
    let train = load_split(&index, Split::Train, !a.data.no_clean)?;
    let outcome = pretrain(a.method, &train, &config, Some(run.dir()))?;
    for path in &outcome.saved {
        run.record(path)?;
        run.record(&radreg_core::train::sidecar_path(path))?;
    }
    let curve = run.path(&format!("{}-loss.csv", a.method));
    write_curve_csv(&curve, &outcome.curve)?;
    run.record(&curve)?;
    Ok(json!({
        "method": a.method,
        "epochs": config.epochs,
        "final_loss": outcome.curve.last().map(|r| r.loss),
        "checkpoint": run.path(&format!("{}.ckpt", a.method)),
    }))
}

fn save_head_outputs(run: &mut Run, head: &mut LinearHead, encoder: &mut EncoderCheckpoint, config: &TrainConfig, test: &ImageBank) -> anyhow::Result<f64> {
    let head_path = run.path("head.ckpt");
    head.save(&head_path, encoder.method(), config)?;
    run.record(&head_path)?;
    run.record(&radreg_core::train::sidecar_path(&head_path))?;
    let predictions = PredictionSet::from_model(encoder.method().name(), &mut encoder.encoder, head, test)?;
    let pred_path = run.path("predictions-test.csv");
    predictions.write_csv(&pred_path)?;
    run.record(&pred_path)?;
    let report = evaluate(&predictions)?;
    let report_path = run.path("report-test.csv");
    report.write_csv(&report_path)?;
    run.record(&report_path)?;
    Ok(report.accuracy)
}

fn linear_eval(a: LinearEvalArgs, run: &mut Run) -> anyhow::Result<Value> {
    let mut checkpoint = EncoderCheckpoint::load(&a.checkpoint)?;
    let model = checkpoint.config.model;
    let config = a.train.resolve(
        TrainConfig::linear_eval(),
        &[("model", Some(serde_json::to_value(model)?))],
    )?;
    run.set_config(&json!({ "fraction": a.fraction, "checkpoint": a.checkpoint, "train": config }))?;
    let banks = load_banks(&a.data)?;
    let picked = subsample_indices(banks.train.labels(), a.fraction, config.seed)?;
    let labeled = banks.train.subset(&picked);
    let mut outcome = train_linear_head(&mut checkpoint, &labeled, Some(&banks.val), &config)?;
    let test_accuracy = save_head_outputs(run, &mut outcome.head, &mut checkpoint, &config, &banks.test)?;
    Ok(json!({
        "method": checkpoint.method(),
        "fraction": a.fraction,
        "labeled": labeled.len(),
        "val_accuracy": outcome.val_accuracy,
        "best_epoch": outcome.best_epoch,
        "test_accuracy": test_accuracy,
    }))
}

fn baseline(a: BaselineArgs, run: &mut Run) -> anyhow::Result<Value> {
    let config = a.train.resolve(TrainConfig::baseline(), &[])?;
    run.set_config(&json!({ "fraction": a.fraction, "train": config }))?;
    let banks = load_banks(&a.data)?;
    let picked = subsample_indices(banks.train.labels(), a.fraction, config.seed)?;
    let labeled = banks.train.subset(&picked);
    let mut outcome = train_supervised_baseline(&labeled, Some(&banks.val), &config)?;
    let enc_path = run.path("encoder.ckpt");
    outcome.checkpoint.save(&enc_path)?;
    run.record(&enc_path)?;
    run.record(&radreg_core::train::sidecar_path(&enc_path))?;
    let curve = run.path("supervised-loss.csv");
    write_curve_csv(&curve, &outcome.curve)?;
    run.record(&curve)?;
    let test_accuracy = save_head_outputs(run, &mut outcome.head, &mut outcome.checkpoint, &config, &banks.test)?;
    Ok(json!({
        "fraction": a.fraction,
        "labeled": labeled.len(),
        "val_accuracy": outcome.val_accuracy.last().map(|v| v.1),
        "test_accuracy": test_accuracy,
    }))
}

fn sweep(a: SweepArgs, run: &mut Run) -> anyhow::Result<Value> {
    let banks = load_banks(&a.data)?;
    let cells = match &a.checkpoint {
        Some(path) => {
            let mut checkpoint = EncoderCheckpoint::load(path)?;
            let model = checkpoint.config.model;
            let config = a.train.resolve(TrainConfig::linear_eval(), &[("model", Some(serde_json::to_value(model)?))])?;
            run.set_config(&json!({ "fractions": a.fractions, "seeds": a.seeds, "checkpoint": path, "train": config }))?;
            let data = ProbeData::new(&mut checkpoint, &banks.train, &banks.val, &banks.test, &config)?;
            probe_sweep(checkpoint.method().name(), &data, &a.fractions, &a.seeds, &config)?
        }
        None => {
            let config = a.train.resolve(TrainConfig::baseline(), &[])?;
            run.set_config(&json!({ "fractions": a.fractions, "seeds": a.seeds, "train": config }))?;
            baseline_sweep(&banks.train, &banks.val, &banks.test, &a.fractions, &a.seeds, &config)?
        }
    };
    let table = SweepTable::new(cells);
    let csv = run.path("sweep.csv");
    table.write_csv(&csv)?;
    run.record(&csv)?;
    run.record(&run.path("sweep-summary.csv"))?;
    let svg = run.path("sweep.svg");
    table.write_svg(&svg)?;
    run.record(&svg)?;
    Ok(serde_json::to_value(table.summary())?)
}

/// Model name for a prediction file: its stem.
fn model_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

fn evaluate_cmd(a: EvaluateArgs, run: &mut Run) -> anyhow::Result<Value> {
    let predictions = PredictionSet::read_csv(&a.predictions, model_name(&a.predictions))?;
    let report = evaluate(&predictions)?;
    let csv = run.path("report.csv");
    report.write_csv(&csv)?;
    run.record(&csv)?;
    let png = run.path("confusion.png");
    radreg_core::eval::archive_confusion(&predictions).to_png(&png)?;
    run.record(&png)?;
    Ok(serde_json::to_value(&report)?)
}

fn ensemble(a: EnsembleArgs, run: &mut Run) -> anyhow::Result<Value> {
    let members = a
        .members
        .iter()
        .map(|p| PredictionSet::read_csv(p, model_name(p)))
        .collect::<radreg_core::Result<Vec<_>>>()?;
    run.set_config(&json!({ "members": a.members }))?;
    let combined = ensemble_predict(&members)?;
    let path = run.path("predictions.csv");
    combined.write_csv(&path)?;
    run.record(&path)?;
    let accuracy = |p: &PredictionSet| evaluate(p).map(|r| r.accuracy);
    Ok(json!({
        "model": combined.model,
        "accuracy": accuracy(&combined)?,
        "members": members.iter().map(|m| Ok(json!({ "model": m.model, "accuracy": accuracy(m)? }))).collect::<radreg_core::Result<Vec<_>>>()?,
    }))
}

fn flag(a: FlagArgs, run: &mut Run) -> anyhow::Result<Value> {
    let predictions = PredictionSet::read_csv(&a.predictions, model_name(&a.predictions))?;
    let mut candidates = flag_mismatches(&predictions);
    if let Some(data) = &a.data {
        attach_image_refs(&mut candidates, &load_index(data)?);
    }
    let path = run.path("candidates.json");
    write_candidates(&path, &candidates)?;
    run.record(&path)?;
    Ok(json!({ "records": predictions.len(), "candidates": candidates.len() }))
}

fn read_verdicts(path: &Path) -> anyhow::Result<Vec<Verdict>> {
    Ok(VerdictLedger::open(&data_path(path)).and_then(|l| {
        if l.is_empty() && !data_path(path).exists() {
            Err(radreg_core::Error::MissingFile(path.to_path_buf()))
        } else {
            Ok(l.entries().to_vec())
        }
    })?)
}

fn record(a: RecordArgs) -> anyhow::Result<Value> {
    let (candidates, verdicts): (Vec<AuditCandidate>, Vec<Verdict>) = match a.fixture {
        Some(Fixture::Paper) => {
            let f = paper_fixture();
            (flag_mismatches(&f.predictions), f.verdicts)
        }
        None => (
            read_candidates(a.candidates.as_deref().expect("required by clap"))?,
            read_verdicts(a.verdicts.as_deref().expect("required by clap"))?,
        ),
    };
    let mut ledger = VerdictLedger::open(&a.ledger)?;
    let mut appended = 0;
    for v in verdicts {
        appended += usize::from(ledger.record_verdict(&candidates, v)?);
    }
    Ok(json!({ "appended": appended, "entries": ledger.len(), "ledger": a.ledger }))
}

fn apply(a: ApplyArgs, run: &mut Run) -> anyhow::Result<Value> {
    let (predictions, verdicts) = match a.fixture {
        Some(Fixture::Paper) => {
            let f = paper_fixture();
            f.write(run.dir())?;
            run.record(&run.path("predictions.csv"))?;
            run.record(&run.path("verdicts.jsonl"))?;
            (f.predictions, f.verdicts)
        }
        None => {
            let path = a.predictions.as_deref().expect("required by clap");
            (
                PredictionSet::read_csv(path, model_name(path))?,
                read_verdicts(a.verdicts.as_deref().expect("required by clap"))?,
            )
        }
    };
    let ledger = {
        let mut l = VerdictLedger::in_memory();
        let candidates = flag_mismatches(&predictions);
        for v in verdicts {
            l.record_verdict(&candidates, v)?;
        }
        l
    };
    let result = apply_verdicts(&predictions, ledger.active().values().copied())?;
    let json_path = run.path("corrected.json");
    std::fs::write(&json_path, serde_json::to_vec_pretty(&result)?)?;
    run.record(&json_path)?;
    let pngs = [
        ("confusion-before.png", result.confusion_before.to_png(&run.path("confusion-before.png"))),
        ("confusion-after.png", result.confusion_after.to_png(&run.path("confusion-after.png"))),
        ("confusion-delta.png", result.delta.to_png(&run.path("confusion-delta.png"))),
    ];
    for (name, written) in pngs {
        written?;
        run.record(&run.path(name))?;
    }
    eprintln!(
        "original accuracy {:.1}% -> corrected accuracy {:.1}% ({} relabeled, {} to the model prediction, {} excluded)",
        100.0 * result.original.accuracy,
        100.0 * result.corrected.accuracy,
        result.relabeled,
        result.relabeled_to_prediction,
        result.excluded
    );
    Ok(json!({
        "original_accuracy": result.original.accuracy,
        "corrected_accuracy": result.corrected.accuracy,
        "original": format!("{:.1}%", 100.0 * result.original.accuracy),
        "corrected": format!("{:.1}%", 100.0 * result.corrected.accuracy),
        "relabeled": result.relabeled,
        "relabeled_to_prediction": result.relabeled_to_prediction,
        "excluded": result.excluded,
        "delta_diagonal": result.delta.diagonal_sum(),
    }))
}

/// Builds the service state for `audit serve`.
pub fn audit_service(
    predictions: Option<&Path>,
    candidates: Option<&Path>,
    fixture: Option<Fixture>,
    ledger: &Path,
) -> anyhow::Result<AuditService> {
    let (predictions, candidates) = match fixture {
        Some(Fixture::Paper) => {
            let p = paper_fixture().predictions;
            let c = flag_mismatches(&p);
            (p, c)
        }
        None => {
            let path = predictions.context("--predictions is required")?;
            let p = PredictionSet::read_csv(path, model_name(path))?;
            (p, read_candidates(candidates.context("--candidates is required")?)?)
        }
    };
    Ok(AuditService::new(predictions, candidates, VerdictLedger::open(ledger)?)?)
}

fn serve_cmd(a: ServeArgs) -> anyhow::Result<Value> {
    let service = Arc::new(audit_service(a.predictions.as_deref(), a.candidates.as_deref(), a.fixture, &a.ledger)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(service, a.ui_dir, a.port))?;
    Ok(json!({ "stopped": true }))
}

fn gradcam(a: GradcamArgs, run: &mut Run) -> anyhow::Result<Value> {
    let mut checkpoint = EncoderCheckpoint::load(&a.checkpoint)?;
    let (mut head, _) = LinearHead::load(&a.head)?;
    let index = load_index(&a.data.data)?;
    let bank = load_split(&index, a.split, !a.data.no_clean)?;
    let positions: Vec<usize> = if a.ids.is_empty() {
        (0..bank.len().min(a.count)).collect()
    } else {
        a.ids
            .iter()
            .map(|id| bank.ids().iter().position(|b| b == id).ok_or_else(|| UsageError(format!("no record `{id}` in the {} split", a.split))))
            .collect::<Result<_, _>>()?
    };
    let mut maps = Vec::new();
    for i in positions {
        let image = bank.image(i);
        let target = match a.target {
            CamTarget::Label => bank.label(i).code(),
            CamTarget::Predicted => {
                let set = radreg_core::train::embed_bank(&mut checkpoint.encoder, &bank.subset(&[i]))?;
                head.predict(set.primary())?[0].code()
            }
        };
        let map = checkpoint_gradcam(&mut checkpoint, &mut head, image, bank.id(i), target, CamLayer(a.layer))?;
        map.save(run.dir(), bank.id(i))?;
        for suffix in ["", "-raw"] {
            run.record(&run.path(&format!("{}{suffix}.png", bank.id(i))))?;
        }
        maps.push(json!({ "id": bank.id(i), "target": radreg_core::AnatomicalRegion::from_code(target), "untrained": map.untrained }));
    }
    Ok(json!({ "maps": maps }))
}

fn embed(a: EmbedArgs, run: &mut Run) -> anyhow::Result<Value> {
    let mut checkpoint = EncoderCheckpoint::load(&a.checkpoint)?;
    let index = load_index(&a.data.data)?;
    let bank = load_split(&index, a.split, !a.data.no_clean)?;
    let path = run.path("embeddings.csv");
    export_embeddings(&mut checkpoint.encoder, &bank, &path)?;
    run.record(&path)?;
    Ok(json!({ "records": bank.len(), "width": checkpoint.encoder.embedding_width() }))
}
