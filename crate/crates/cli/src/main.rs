use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use gczone::cgtrain::{train, TrainTrace};
use gczone::features::{csv_header, csv_row, extract_features, normalize};
use gczone::harness::pipeline::features_from_skeleton;
use gczone::harness::{
    builtin_glyphs, evaluate, featurize_split, load_corpus, preprocess, run_experiment, synth_generate, Dataset, RunConfig, Split,
};
use gczone::imagecore::{binarize_with, bounding_box, crop, load_pgm, save_binary_pgm, scale_to, BinaryImage};
use gczone::neuralnet::{load_model, save_model, Layout, ModelMeta};
use gczone::thinning::thin_with;

#[derive(Parser)]
#[command(name = "gczone", version, about = "Gradient-change zoning handwriting recognizer", propagate_version = true, arg_required_else_help = true)]
struct Cli {
    /// Seed for weight initialization and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Threshold a grayscale PGM into ink (255) and background (0).
    Binarize(StageArgs),
    /// Binarize and cut the image down to its ink bounding box.
    Crop(StageArgs),
    /// Binarize and scale to a square raster without cropping.
    Scale(StageArgs),
    /// Binarize and thin to a one-pixel skeleton.
    Thin(StageArgs),
    /// Run the whole pipeline and print one CSV feature row per image.
    Extract(ExtractArgs),
    /// Train a network on a corpus directory.
    Train(TrainArgs),
    /// Classify images with a saved model.
    Predict(PredictArgs),
    /// Accuracy and confusion matrix of a model on a corpus split.
    Evaluate(EvaluateArgs),
    /// Sweep grid sizes and normalization factors.
    Experiment(ExperimentArgs),
    /// Write a synthetic corpus as PGM files.
    Synth(SynthArgs),
}

/// Preprocessing settings shared by the image subcommands.
#[derive(Args, Clone, Default)]
struct PreArgs {
    /// Ink threshold; defaults to half of maxval.
    #[arg(long)]
    threshold: Option<String>,
    /// `intensity` or `packed-rgb`.
    #[arg(long)]
    threshold_mode: Option<String>,
    /// `bright` (ink is high) or `dark`.
    #[arg(long)]
    polarity: Option<String>,
    /// `sequential` or `simultaneous`.
    #[arg(long)]
    schedule: Option<String>,
    /// Side of the canonical raster.
    #[arg(long)]
    size: Option<String>,
}

#[derive(Args)]
struct StageArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pre: PreArgs,
}

#[derive(Args)]
struct ExtractArgs {
    /// One or more grayscale PGM files.
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Grid side.
    #[arg(long, short)]
    k: usize,
    /// Normalization half-range.
    #[arg(long)]
    factor: Option<f64>,
    /// Print raw gc values instead of normalized ones.
    #[arg(long, conflicts_with = "factor")]
    raw: bool,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    pre: PreArgs,
}

/// Config file plus `key=value` overrides.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set beta=fr`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus root with train/<class>/*.pgm.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, short)]
    k: usize,
    #[arg(long)]
    factor: f64,
    /// Where to write the model.
    #[arg(long)]
    model: PathBuf,
    /// Write the per-iteration trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    pre: PreArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[command(flatten)]
    pre: PreArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    pre: PreArgs,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Corpus root; a synthetic corpus is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// CSV report path.
    #[arg(long)]
    report: PathBuf,
    /// Also write the grouped accuracy table here.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

/// Bad flag value or config file contents; exits like a clap error.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is::<UsageError>() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let seed = cli.seed;
    match cli.command {
        Command::Binarize(a) => stage(&a, |img, _| Ok(img)),
        Command::Crop(a) => stage(&a, |img, _| Ok(crop(&img, &bounding_box(&img)?)?)),
        Command::Scale(a) => stage(&a, |img, cfg| Ok(scale_to(&img, cfg.experiment.preprocess.size, cfg.experiment.preprocess.size)?)),
        Command::Thin(a) => stage(&a, |img, cfg| Ok(thin_with(&img, cfg.experiment.preprocess.schedule).image)),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train_cmd(a, seed),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Experiment(a) => experiment(a, seed),
        Command::Synth(a) => synth(a, seed),
    }
}

fn build_config(cfg: &ConfigArgs, pre: &PreArgs) -> Result<RunConfig, UsageError> {
    let usage = |e: gczone::harness::HarnessError| UsageError(e.to_string());
    let mut rc = match &cfg.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    let flags = [
        ("threshold", &pre.threshold),
        ("threshold_mode", &pre.threshold_mode),
        ("polarity", &pre.polarity),
        ("schedule", &pre.schedule),
        ("size", &pre.size),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            rc.set(key, v).map_err(usage)?;
        }
    }
    for o in &cfg.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| UsageError(format!("override '{o}' is not KEY=VALUE")))?;
        rc.set(k.trim(), v.trim()).map_err(usage)?;
    }
    Ok(rc)
}

fn stage(a: &StageArgs, f: impl Fn(BinaryImage, &RunConfig) -> StageResult) -> CliResult {
    let rc = build_config(&ConfigArgs::default(), &a.pre)?;
    let img = load_pgm(&a.input)?;
    let binary = binarize_with(&img, &rc.experiment.preprocess.binarize);
    let out = f(binary, &rc)?;
    save_binary_pgm(&out, &a.out)?;
    info!("wrote {}x{} image to {}", out.width(), out.height(), a.out.display());
    Ok(())
}

type StageResult = Result<BinaryImage, Box<dyn std::error::Error>>;

fn write_or_print(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn extract(a: ExtractArgs) -> CliResult {
    let rc = build_config(&ConfigArgs::default(), &a.pre)?;
    let mut text = csv_header(a.k * a.k);
    text.push('\n');
    for path in &a.input {
        let skeleton = preprocess(&load_pgm(path)?, &rc.experiment.preprocess).map_err(|e| format!("{}: {e}", path.display()))?;
        let raw = extract_features(&skeleton, a.k)?;
        let v = match a.factor {
            Some(f) => normalize(&raw, f)?,
            None if a.raw => raw,
            None => return Err(UsageError("either --factor or --raw is required".into()).into()),
        };
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        text.push_str(&csv_row(&label, &v));
        text.push('\n');
    }
    write_or_print(a.out.as_deref(), &text)
}

fn trace_summary(trace: &TrainTrace) -> serde_json::Value {
    json!({
        "iterations": trace.iterations(),
        "final_loss": trace.final_loss,
        "final_grad_norm": trace.final_grad_norm,
        "stop": format!("{:?}", trace.stop),
    })
}

fn train_cmd(a: TrainArgs, seed: Option<u64>) -> CliResult {
    let mut rc = build_config(&a.cfg, &a.pre)?;
    if let Some(s) = seed {
        rc.experiment.train.seed = s;
    }
    let data = load_corpus(&a.data)?;
    let (samples, excluded) = featurize_split(&data, Split::Train, &rc.experiment.preprocess, a.k, a.factor)?;
    let n_in = a.k * a.k;
    let layout = Layout::new(n_in, rc.experiment.hidden.resolve(n_in), data.class_names.len());
    let (model, trace) = train(&samples, layout, &rc.experiment.train)?;
    let meta = ModelMeta { k: Some(a.k), factor: Some(a.factor), class_names: data.class_names.clone() };
    save_model(&model, &meta, &a.model)?;
    if let Some(p) = &a.trace {
        fs::write(p, trace.to_csv()).map_err(|e| format!("cannot write {}: {e}", p.display()))?;
    }
    let acc = evaluate(&model, &samples)?.accuracy;
    if a.json {
        let mut v = trace_summary(&trace);
        v["layout"] = json!(layout.to_string());
        v["train_samples"] = json!(samples.len());
        v["excluded"] = json!(excluded.len());
        v["train_accuracy"] = json!(acc);
        println!("{v}");
    } else {
        println!("{layout}: {} iterations, loss {:.6}, train accuracy {acc:.2}%", trace.iterations(), trace.final_loss);
    }
    Ok(())
}

fn model_params(meta: &ModelMeta) -> Result<(usize, f64), Box<dyn std::error::Error>> {
    match (meta.k, meta.factor) {
        (Some(k), Some(f)) => Ok((k, f)),
        _ => Err("model file lacks the grid side or normalization factor".into()),
    }
}

fn predict(a: PredictArgs) -> CliResult {
    let rc = build_config(&ConfigArgs::default(), &a.pre)?;
    let (model, meta) = load_model(&a.model)?;
    let (k, factor) = model_params(&meta)?;
    for path in &a.input {
        let skeleton = preprocess(&load_pgm(path)?, &rc.experiment.preprocess).map_err(|e| format!("{}: {e}", path.display()))?;
        let v = features_from_skeleton(&skeleton, k, factor)?;
        let class = model.predict(v.values())?;
        let name = meta.class_names.get(class).cloned().unwrap_or_else(|| class.to_string());
        println!("{}\t{name}", path.display());
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> CliResult {
    let rc = build_config(&ConfigArgs::default(), &a.pre)?;
    let (model, meta) = load_model(&a.model)?;
    let (k, factor) = model_params(&meta)?;
    let data = load_corpus(&a.data)?;
    if !meta.class_names.is_empty() && meta.class_names != data.class_names {
        return Err(format!("corpus classes {:?} differ from the model's {:?}", data.class_names, meta.class_names).into());
    }
    let (samples, excluded) = featurize_split(&data, a.split, &rc.experiment.preprocess, k, factor)?;
    let eval = evaluate(&model, &samples)?;
    if a.json {
        let v = json!({
            "split": a.split.dir_name(),
            "samples": samples.len(),
            "excluded": excluded.len(),
            "accuracy": eval.accuracy,
            "classes": data.class_names,
            "confusion": eval.confusion.rows(),
        });
        println!("{v}");
    } else {
        println!("{} accuracy: {:.2}% ({} samples)", a.split.dir_name(), eval.accuracy, samples.len());
        print!("{}", eval.confusion.to_text(&data.class_names));
    }
    Ok(())
}

fn synthetic(rc: &RunConfig) -> Result<Dataset, Box<dyn std::error::Error>> {
    Ok(synth_generate(&builtin_glyphs(), rc.synth_counts, rc.canvas, rc.experiment.train.seed)?)
}

fn experiment(a: ExperimentArgs, seed: Option<u64>) -> CliResult {
    let mut rc = build_config(&a.cfg, &PreArgs::default())?;
    if let Some(s) = seed {
        rc.experiment.train.seed = s;
    }
    if let Some(j) = a.jobs {
        rc.experiment.jobs = j;
    }
    let data = match &a.data {
        Some(p) => load_corpus(p)?,
        None => {
            info!("no --data given; generating a synthetic corpus");
            synthetic(&rc)?
        }
    };
    let report = run_experiment(&rc.experiment, &data)?;
    fs::write(&a.report, report.to_csv()).map_err(|e| format!("cannot write {}: {e}", a.report.display()))?;
    if let Some(p) = &a.table {
        fs::write(p, report.to_table()).map_err(|e| format!("cannot write {}: {e}", p.display()))?;
    }
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        warn!("{failed} of {} cells failed", report.cells.len());
    }
    print!("{}", report.to_table());
    Ok(())
}

fn synth(a: SynthArgs, seed: Option<u64>) -> CliResult {
    let mut rc = build_config(&a.cfg, &PreArgs::default())?;
    if let Some(s) = seed {
        rc.experiment.train.seed = s;
    }
    let data = synthetic(&rc)?;
    data.write_corpus(&a.out)?;
    println!(
        "wrote {} train and {} test images for {} classes to {}",
        data.count(Split::Train),
        data.count(Split::Test),
        data.class_names.len(),
        a.out.display()
    );
    Ok(())
}
