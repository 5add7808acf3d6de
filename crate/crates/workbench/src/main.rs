use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tsxil_core::attribution::IgConfig;
use tsxil_core::data::SplitTag;
use tsxil_core::decoys::{DecoyConfig, DecoyKind};
use tsxil_core::experiment::{run_experiment_with, Stat};
use tsxil_core::feedback::Feedback;
use tsxil_core::losses::TaskKind;
use tsxil_core::models::{Architecture, Network};
use tsxil_core::presets;
use tsxil_core::synthetic::{BumpTask, SeasonalSeries};
use tsxil_core::train::{evaluate, train, TrainConfig};
use tsxil_workbench::checkpoint::Checkpoint;
use tsxil_workbench::dataset::Dataset;
use tsxil_workbench::export::explain_sample;
use tsxil_workbench::masks::{Domain, MaskFile};
use tsxil_workbench::service::{serve, ServiceConfig};
use tsxil_workbench::spec::load_experiment;
use tsxil_workbench::store::{Store, DATA_ROOT_ENV};
use tsxil_workbench::{csvio, write_log};

#[derive(Parser)]
#[command(name = "tsxil", version, about = "Shortcut decoys, explanation feedback and revision for time series models")]
struct Cli {
    /// Print results and errors as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic CSV.
    Generate(GenerateArgs),
    /// Split and standardize a CSV into a dataset directory.
    Import(ImportArgs),
    /// Inject a decoy into the training part of a CSV or dataset directory.
    Decoy(DecoyArgs),
    /// Train a model, optionally with feedback penalties.
    Train(TrainArgs),
    /// Dump the attribution of one sample.
    Explain(ExplainArgs),
    /// Evaluate a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// Sweep feedback coverage and noise.
    Ablate(AblateArgs),
    /// Run an experiment file (JSON or TOML).
    Run(RunArgs),
    /// Serve the HTTP API over a data root.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Classification,
    Forecasting,
}

impl From<Task> for TaskKind {
    fn from(t: Task) -> Self {
        match t {
            Task::Classification => TaskKind::Classification,
            Task::Forecasting => TaskKind::Forecasting,
        }
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Task of a CSV input; dataset directories carry their own.
    #[arg(long, value_enum, default_value = "classification")]
    task: Task,
    /// Split seed of a CSV input.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Lookback `T` of a forecasting CSV.
    #[arg(long, default_value_t = presets::LOOKBACK)]
    lookback: usize,
    /// Horizon `W` of a forecasting CSV.
    #[arg(long, default_value_t = presets::HORIZON)]
    horizon: usize,
    /// Window stride of a forecasting CSV; half the lookback by default.
    #[arg(long)]
    window_stride: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Synthetic {
    /// Two-class bump task.
    Bump,
    /// Sum of sines.
    Seasonal,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(value_enum)]
    kind: Synthetic,
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples of the bump task or length of the series.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct ImportArgs {
    input: PathBuf,
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct DecoyArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: DecoyKind,
    /// Segment length of the spatial decoy.
    #[arg(long = "m")]
    segment_len: Option<usize>,
    /// Amplitude.
    #[arg(long = "A", allow_negative_numbers = true)]
    amplitude: Option<f64>,
    #[arg(long)]
    offset: Option<usize>,
    #[arg(long)]
    base_frequency: Option<usize>,
    /// Impulse spacing `k`.
    #[arg(long)]
    spacing: Option<usize>,
    /// Back-copy window stride.
    #[arg(long)]
    stride: Option<usize>,
    /// CSV file or dataset directory.
    input: PathBuf,
    /// Output dataset directory.
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

fn parse_kind(s: &str) -> Result<DecoyKind, String> {
    s.parse().map_err(|e: tsxil_core::Error| e.to_string())
}

#[derive(Args)]
struct TrainArgs {
    /// CSV file or dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Mask file; defaults to the dataset's masks.json when a penalty is on.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Weight of the spatial penalty.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Weight of the frequency penalty.
    #[arg(long)]
    lambda2: Option<f64>,
    #[command(flatten)]
    train: TrainOverrides,
    /// Architecture file (JSON or TOML); a preset by task otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Per-epoch JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    data_args: DataArgs,
}

#[derive(Args, Clone)]
struct TrainOverrides {
    /// Training config file (JSON or TOML); preset values otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seeds initialization and batch order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    sample: usize,
    #[arg(long, default_value = "time")]
    domain: String,
    /// Integration steps.
    #[arg(long, default_value_t = 32)]
    steps: usize,
    #[command(flatten)]
    data_args: DataArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    #[command(flatten)]
    data_args: DataArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

impl From<Split> for SplitTag {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => SplitTag::Train,
            Split::Val => SplitTag::Val,
            Split::Test => SplitTag::Test,
        }
    }
}

#[derive(Args)]
struct AblateArgs {
    /// Decoyed dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Feedback coverages `p`.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    fractions: Vec<f64>,
    /// Feedback noise shares `q`.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    noise: Vec<f64>,
    /// Penalty weights at full coverage; divided by `p` for each coverage.
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Runs per setting, seeded 0..n.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args)]
struct RunArgs {
    spec: PathBuf,
    /// Write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Data root; falls back to the environment variable.
    #[arg(long, env = DATA_ROOT_ENV)]
    root: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Jobs running at once.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Integration steps of served explanations.
    #[arg(long, default_value_t = 32)]
    steps: usize,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    })
}

fn load_data(path: &Path, args: &DataArgs) -> anyhow::Result<Dataset> {
    if path.is_dir() {
        return Ok(Dataset::load_dir(path)?);
    }
    Ok(match args.task {
        Task::Classification => Dataset::prepare_classification(csvio::load_classification(path)?, args.split_seed)?,
        Task::Forecasting => {
            let name = path.file_stem().map_or("series".into(), |s| s.to_string_lossy().into_owned());
            Dataset::prepare_series(&name, csvio::load_series(path)?, args.lookback, args.horizon, args.window_stride)?
        }
    })
}

fn dir_name(path: &Path) -> String {
    path.file_name().map_or("dataset".into(), |n| n.to_string_lossy().into_owned())
}

fn rename(mut dataset: Dataset, name: String) -> Dataset {
    match &mut dataset {
        Dataset::Classification(d) => d.header.name = name,
        Dataset::Forecasting(f) => f.header.name = name,
    }
    dataset
}

fn default_model(d: &Dataset) -> Architecture {
    let h = d.header();
    match d.task() {
        TaskKind::Classification => presets::classifier(h.num_classes.unwrap_or(2).max(2)),
        TaskKind::Forecasting => presets::forecaster(h.len, h.horizon.unwrap_or(presets::HORIZON)),
    }
}

fn train_config(d: &Dataset, o: &TrainOverrides, lambda1: Option<f64>, lambda2: Option<f64>) -> anyhow::Result<TrainConfig> {
    let mut cfg = match &o.config {
        Some(p) => read_config(p)?,
        None => presets::training(d.task()),
    };
    if let Some(e) = o.epochs {
        cfg.epochs = e;
    }
    if let Some(l) = o.lr {
        cfg.learning_rate = l;
    }
    if let Some(b) = o.batch_size {
        cfg.batch_size = b;
    }
    cfg.seed = o.seed;
    if let Some(l) = lambda1 {
        cfg.loss.lambda_sp = l;
    }
    if let Some(l) = lambda2 {
        cfg.loss.lambda_fr = l;
    }
    if cfg.loss.task != d.task() {
        bail!("the training config is for {:?} but the data is {:?}", cfg.loss.task, d.task());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn feedback_for(d: &Dataset, dir: &Path, masks: Option<&Path>) -> anyhow::Result<Feedback> {
    Ok(match masks {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            MaskFile::parse(&bytes)?.to_feedback(d.len(), d.input_len())?
        }
        None if dir.is_dir() => d.load_masks(dir)?.unwrap_or_else(Feedback::none),
        None => Feedback::none(),
    })
}

struct Output {
    json: bool,
}

impl Output {
    fn emit(&self, value: Value, text: impl FnOnce() -> String) {
        let mut out = std::io::stdout().lock();
        if self.json {
            let _ = writeln!(out, "{value}");
        } else {
            let _ = writeln!(out, "{}", text());
        }
    }
}

fn cmd_generate(a: GenerateArgs, out: &Output) -> anyhow::Result<()> {
    let file = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let rows = match a.kind {
        Synthetic::Bump => {
            let mut task = BumpTask::default();
            task.samples = a.size.unwrap_or(task.samples);
            let d = task.generate(a.seed)?;
            csvio::write_classification(&d, file)?;
            d.len()
        }
        Synthetic::Seasonal => {
            let mut series = SeasonalSeries::default();
            series.len = a.size.unwrap_or(series.len);
            let v = series.generate(a.seed)?;
            csvio::write_series(&v, file)?;
            v.len()
        }
    };
    out.emit(json!({ "out": a.out, "rows": rows }), || format!("wrote {rows} rows to {}", a.out.display()));
    Ok(())
}

fn cmd_import(a: ImportArgs, out: &Output) -> anyhow::Result<()> {
    let d = rename(load_data(&a.input, &a.data)?, dir_name(&a.out));
    d.save_dir(&a.out)?;
    out.emit(json!({ "out": a.out, "samples": d.len() }), || format!("wrote {} samples to {}", d.len(), a.out.display()));
    Ok(())
}

fn cmd_decoy(a: DecoyArgs, out: &Output) -> anyhow::Result<()> {
    let input = load_data(&a.input, &a.data)?;
    let mut cfg = DecoyConfig::new(a.kind);
    if let Some(v) = a.segment_len {
        cfg.segment_len = v;
    }
    if let Some(v) = a.amplitude {
        cfg.amplitude = v;
    }
    if let Some(v) = a.offset {
        cfg.offset = v;
    }
    if let Some(v) = a.base_frequency {
        cfg.base_frequency = v;
    }
    if let Some(v) = a.spacing {
        cfg.spacing = v;
    }
    cfg.window_stride = a.stride;
    let previous = if a.input.is_dir() { input.load_masks(&a.input)? } else { None };
    let (decoyed, mut masks) = input.apply_decoy(&cfg, Some(a.data.split_seed))?;
    if let Some(prev) = previous {
        if decoyed.stride() != input.stride() {
            bail!("the new stride changes the windows the existing masks refer to");
        }
        let mut entries = MaskFile::from_feedback(&prev).0;
        entries.extend(masks.0);
        masks = MaskFile(entries);
    }
    let decoyed = rename(decoyed, dir_name(&a.out));
    decoyed.save_dir(&a.out)?;
    let mask_path = a.out.join("masks.json");
    std::fs::write(&mask_path, masks.to_bytes()).with_context(|| format!("writing {}", mask_path.display()))?;
    out.emit(json!({ "out": a.out, "kind": a.kind, "masks": masks.0.len(), "samples": decoyed.len() }), || {
        format!("{} decoy: {} samples, {} masks written to {}", a.kind.name(), decoyed.len(), masks.0.len(), a.out.display())
    });
    Ok(())
}

fn cmd_train(a: TrainArgs, out: &Output) -> anyhow::Result<()> {
    let d = load_data(&a.data, &a.data_args)?;
    let cfg = train_config(&d, &a.train, a.lambda1, a.lambda2)?;
    let penalized = cfg.loss.lambda_sp != 0.0 || cfg.loss.lambda_fr != 0.0;
    let feedback = if penalized { feedback_for(&d, &a.data, a.masks.as_deref())? } else { Feedback::none() };
    let model = match (&a.init, &a.model) {
        (Some(p), _) => Checkpoint::load(p)?.model,
        (None, Some(p)) => Network::new(read_config(p)?, a.train.seed)?,
        (None, None) => Network::new(default_model(&d), a.train.seed)?,
    };
    let (samples, feedback) = d.training_set(&feedback)?;
    let outcome = train(&model, &samples, &feedback, &cfg)?;
    let ckpt = Checkpoint::new(outcome.model, Some(d.header().clone()));
    ckpt.save(&a.out)?;
    if let Some(p) = &a.log {
        write_log(&outcome.log, std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)?;
    }
    let train_metric = evaluate(&ckpt.model, &samples)?.value();
    let test = d.split_samples(SplitTag::Test);
    let test_metric = if test.is_empty() { None } else { Some(evaluate(&ckpt.model, &test)?.value()) };
    let hash = ckpt.hash();
    out.emit(json!({ "checkpoint": a.out, "sha256": hash, "epochs": outcome.log.len(), "train": train_metric, "test": test_metric }), || {
        let test = test_metric.map_or("n/a".into(), |v| format!("{v:.4}"));
        format!("{}  sha256 {hash}\ntrain {train_metric:.4}  test {test}", a.out.display())
    });
    Ok(())
}

fn cmd_explain(a: ExplainArgs, out: &Output) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let d = load_data(&a.data, &a.data_args)?;
    if a.sample >= d.len() {
        bail!("sample {} is beyond the {} samples", a.sample, d.len());
    }
    let domain: Domain = a.domain.parse()?;
    let export = explain_sample(&ckpt.model, d.input(a.sample), a.sample, domain, &IgConfig::with_steps(a.steps))?;
    let value = serde_json::to_value(&export)?;
    out.emit(value.clone(), || value.to_string());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, out: &Output) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let d = load_data(&a.data, &a.data_args)?;
    let samples = d.split_samples(a.split.into());
    if samples.is_empty() {
        bail!("the split is empty");
    }
    let metric = evaluate(&ckpt.model, &samples)?;
    out.emit(json!({ "split": SplitTag::from(a.split), "samples": samples.len(), "metric": metric }), || format!("{metric:?}"));
    Ok(())
}

fn cmd_ablate(a: AblateArgs, out: &Output) -> anyhow::Result<()> {
    let d = Dataset::load_dir(&a.data)?;
    let mut cfg = train_config(&d, &a.train, a.lambda1, a.lambda2)?;
    if a.lambda1.is_none() && a.lambda2.is_none() {
        (cfg.loss.lambda_sp, cfg.loss.lambda_fr) = (presets::LAMBDA_SP, presets::LAMBDA_FR);
    }
    let feedback = feedback_for(&d, &a.data, a.masks.as_deref())?;
    let (samples, feedback) = d.training_set(&feedback)?;
    let test = d.split_samples(SplitTag::Test);
    let arch = match &a.model {
        Some(p) => read_config(p)?,
        None => default_model(&d),
    };
    let mut rows = Vec::new();
    for &p in &a.fractions {
        for &q in &a.noise {
            let mut scores = Vec::new();
            for seed in 0..a.seeds.max(1) {
                let fb = Feedback {
                    time: feedback.time.as_ref().map(|s| s.subset(p, seed)?.noisy(q, seed ^ 0x9e37)).transpose()?,
                    frequency: feedback.frequency.as_ref().map(|s| s.subset(p, seed)?.noisy(q, seed ^ 0x9e37)).transpose()?,
                };
                let mut c = cfg.clone();
                c.seed = a.train.seed + seed;
                c.loss.lambda_sp = presets::coverage_lambda(cfg.loss.lambda_sp, p);
                c.loss.lambda_fr = presets::coverage_lambda(cfg.loss.lambda_fr, p);
                let model = Network::new(arch.clone(), c.seed)?;
                let outcome = train(&model, &samples, &fb, &c)?;
                scores.push(evaluate(&outcome.model, &test)?.value());
            }
            rows.push((p, q, Stat::of(&scores)));
        }
    }
    let value = json!(rows.iter().map(|(p, q, s)| json!({ "fraction": p, "noise": q, "test": s })).collect::<Vec<_>>());
    out.emit(value, || {
        let mut t = format!("{:>9} {:>7} {:>18}\n", "fraction", "noise", "test");
        for (p, q, s) in &rows {
            t.push_str(&format!("{p:>9.3} {q:>7.3} {:>9.4} ± {:<6.4}\n", s.mean, s.std));
        }
        t.trim_end().to_string()
    });
    Ok(())
}

fn cmd_run(a: RunArgs, out: &Output) -> anyhow::Result<()> {
    let spec = load_experiment(&a.spec)?;
    let json = out.json;
    let report = run_experiment_with(&spec, &mut |row, seed, result| {
        if !json {
            match result {
                Ok((_, m)) => eprintln!("{:<20} seed {seed:<3} train {:.4} test {:.4}", row.label, m.train, m.test),
                Err(e) => eprintln!("{:<20} seed {seed:<3} failed: {e}", row.label),
            }
        }
    })?;
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_vec_pretty(&report)?).with_context(|| format!("writing {}", p.display()))?;
    }
    out.emit(serde_json::to_value(&report)?, || report.to_table().trim_end().to_string());
    if let Some(row) = report.rows.iter().find(|r| r.failed()) {
        bail!("row {} failed: {}", row.label, row.error.as_deref().unwrap_or_default());
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> anyhow::Result<()> {
    let store = Store::open(&a.root)?;
    let config = ServiceConfig { workers: a.workers, explain_steps: a.steps, ..ServiceConfig::default() };
    tokio::runtime::Runtime::new()?.block_on(serve(store, config, a.addr))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let out = Output { json: cli.json };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a, &out),
        Command::Import(a) => cmd_import(a, &out),
        Command::Decoy(a) => cmd_decoy(a, &out),
        Command::Train(a) => cmd_train(a, &out),
        Command::Explain(a) => cmd_explain(a, &out),
        Command::Evaluate(a) => cmd_evaluate(a, &out),
        Command::Ablate(a) => cmd_ablate(a, &out),
        Command::Run(a) => cmd_run(a, &out),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if out.json {
                println!("{}", json!({ "error": format!("{e:#}") }));
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}
