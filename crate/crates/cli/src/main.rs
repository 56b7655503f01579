use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use langcycle_core::backends::{
    Backend, BackendError, OracleBackend, OracleNoise, RemoteBackend, RetryPolicy,
};
use langcycle_core::cycle_engine::{
    evaluate, in_pool, self_improve, CycleConfig, CycleError, EvalSettings, FrozenHook,
    NoiseShrinkHook, RetrainHook, RoundMetrics,
};
use langcycle_core::datagen::{
    self, gen_dataset, type_distribution, Catalog, DatagenConfig, DatagenError, DatasetSpec,
    Demonstration,
};
use langcycle_core::semantics_eval::{format_table, EvalConfig, MetricsReport};
use langcycle_core::spatial_lang::{TemplateBank, ThresholdConfig};
use langcycle_core::{scene::DEFAULT_MIN_SEPARATION, seed};

#[derive(Debug, Parser)]
#[command(
    name = "langcycle",
    version,
    about = "Language-action cycle data engine"
)]
struct Cli {
    /// Print a JSON summary as the last line of stdout.
    #[arg(long, global = true)]
    json: bool,
    /// JSON file with default values for any flag; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset of scripted demonstrations.
    GenDataset(GenArgs),
    /// Augment a dataset with the confidence-gated cycle and retrain between rounds.
    RunCycle(CycleArgs),
    /// Score a backend on L2A, A2L and L2C over a dataset.
    Evaluate(EvalArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct GenArgs {
    /// Built-in catalog (`ycb`, `real`) or a catalog file.
    #[arg(long)]
    catalog: Option<String>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    objects_min: Option<usize>,
    #[arg(long)]
    objects_max: Option<usize>,
    #[arg(long)]
    min_separation: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BackendKind {
    Oracle,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum NoiseProfile {
    /// Perfect oracle.
    None,
    /// Wrong object 30% of the time, place jitter σ = 0.05.
    Noisy,
    /// Noisy, plus wrong relations in 20% of descriptions and jittered L2C logits.
    Heavy,
}

impl NoiseProfile {
    fn noise(self) -> OracleNoise {
        match self {
            NoiseProfile::None => OracleNoise::noiseless(),
            NoiseProfile::Noisy => OracleNoise {
                p_wrong_object: 0.3,
                place_sigma: 0.05,
                ..OracleNoise::noiseless()
            },
            NoiseProfile::Heavy => OracleNoise {
                p_wrong_object: 0.3,
                place_sigma: 0.05,
                p_wrong_relation: 0.2,
                l2c_logit_noise: 2.0,
                ..OracleNoise::noiseless()
            },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Base URL of a remote backend.
    #[arg(long, env = "LACY_BACKEND_URL")]
    backend_url: Option<String>,
    /// Per-request timeout of the remote backend, in seconds.
    #[arg(long)]
    timeout_secs: Option<f64>,
    /// Retries after a failed remote request.
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long, value_enum)]
    noise_profile: Option<NoiseProfile>,
    #[arg(long)]
    p_wrong_object: Option<f64>,
    #[arg(long)]
    place_sigma: Option<f64>,
    #[arg(long)]
    p_wrong_relation: Option<f64>,
    #[arg(long)]
    l2c_logit_scale: Option<f64>,
    #[arg(long)]
    l2c_logit_noise: Option<f64>,
    /// Template bank file; defaults to the built-in bank.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RetrainKind {
    /// Oracle noise shrinks with the accuracy of the added data.
    Shrink,
    /// The backend is left unchanged.
    Frozen,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct CycleArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Held-out dataset for per-round metrics; generated when absent.
    #[arg(long)]
    holdout: Option<PathBuf>,
    /// Size of the generated held-out set.
    #[arg(long)]
    holdout_count: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    backend: BackendArgs,
    /// Stochastic samples per stage.
    #[arg(long = "N", id = "N")]
    #[serde(rename = "N")]
    n: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// New triplets per round.
    #[arg(long)]
    quota: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_passes: Option<usize>,
    #[arg(long, value_enum)]
    retrain: Option<RetrainKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    backend: BackendArgs,
    /// Metrics JSON output; the CSV is written next to it.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// CSV output path (default: metrics path with a `.csv` extension).
    #[arg(long)]
    csv_out: Option<PathBuf>,
    /// Training-set size reported in the CSV (default: evaluated items).
    #[arg(long)]
    train_size: Option<usize>,
    /// Print the aligned metrics table.
    #[arg(long)]
    #[serde(skip)]
    table: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Backend(_) => 4,
        }
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::Io { .. } | DatagenError::SchemaViolation { .. } => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<CycleError> for CliError {
    fn from(e: CycleError) -> Self {
        match e {
            CycleError::InvalidConfig(_) | CycleError::EmptyDataset => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::InvalidRequest(_) => CliError::Config(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

/// Fills unset fields of `args` from `section` of the config file.
fn merge<T: Serialize + serde::de::DeserializeOwned>(
    args: T,
    config: &Value,
    section: &str,
) -> Result<T, CliError> {
    let Some(base) = config.get(section) else {
        return Ok(args);
    };
    let mut merged: Map<String, Value> = base
        .as_object()
        .ok_or_else(|| CliError::Config(format!("config section {section:?} must be an object")))?
        .clone();
    let flags = serde_json::to_value(&args).map_err(|e| CliError::Config(e.to_string()))?;
    for (k, v) in flags.as_object().into_iter().flatten() {
        if !v.is_null() {
            merged.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::Config(format!("config {section}: {e}")))
}

fn load_config(path: Option<&Path>) -> Result<Value, CliError> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::Config(format!(
            "{}: config must be a JSON object",
            path.display()
        )));
    }
    Ok(value)
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("missing required option --{flag}")))
}

fn bank(args: &BackendArgs) -> Result<TemplateBank, CliError> {
    match &args.templates {
        None => Ok(TemplateBank::default()),
        Some(p) => {
            TemplateBank::load(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn noise(args: &BackendArgs) -> OracleNoise {
    let mut n = args.noise_profile.unwrap_or(NoiseProfile::None).noise();
    if let Some(v) = args.p_wrong_object {
        n.p_wrong_object = v;
    }
    if let Some(v) = args.place_sigma {
        n.place_sigma = v;
    }
    if let Some(v) = args.p_wrong_relation {
        n.p_wrong_relation = v;
    }
    if let Some(v) = args.l2c_logit_scale {
        n.l2c_logit_scale = v;
    }
    if let Some(v) = args.l2c_logit_noise {
        n.l2c_logit_noise = v;
    }
    n
}

enum BuiltBackend {
    Oracle(OracleBackend),
    Remote(RemoteBackend),
}

impl BuiltBackend {
    fn handle(&self) -> Arc<dyn Backend> {
        match self {
            BuiltBackend::Oracle(o) => Arc::new(o.clone()),
            BuiltBackend::Remote(r) => Arc::new(r.clone()),
        }
    }
}

fn build_backend(args: &BackendArgs, bank: &TemplateBank) -> Result<BuiltBackend, CliError> {
    match args.backend.unwrap_or(BackendKind::Oracle) {
        BackendKind::Oracle => {
            let b = OracleBackend::with_config(noise(args), EvalConfig::default(), bank.clone())
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(BuiltBackend::Oracle(b))
        }
        BackendKind::Remote => {
            let url = args.backend_url.clone().ok_or_else(|| {
                CliError::Config("remote backend needs --backend-url or LACY_BACKEND_URL".into())
            })?;
            let mut retry = RetryPolicy::default();
            if let Some(t) = args.timeout_secs {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(CliError::Config(format!(
                        "--timeout-secs must be > 0, got {t}"
                    )));
                }
                retry.timeout = Duration::from_secs_f64(t);
            }
            if let Some(r) = args.retries {
                retry.max_retries = r;
            }
            let remote = RemoteBackend::new(url, retry)?;
            remote.health()?;
            Ok(BuiltBackend::Remote(remote))
        }
    }
}

fn csv(rows: &[(usize, &MetricsReport)]) -> String {
    let mut out = String::from("dataset_size,l2a,a2l,l2c\n");
    for (size, m) in rows {
        out.push_str(&format!(
            "{size},{:.4},{:.4},{:.4}\n",
            m.l2a_pct, m.a2l_pct, m.l2c_pct
        ));
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(datagen::write_atomic(path, text.as_bytes())?)
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn gen_cmd(args: GenArgs) -> Result<Value, CliError> {
    let catalog = Catalog::resolve(args.catalog.as_deref().unwrap_or("ycb"))?;
    let out = required(args.out, "out")?;
    let count = args.count.unwrap_or(1000);
    let spec = DatasetSpec::new(
        count,
        args.objects_min.unwrap_or(3),
        args.objects_max.unwrap_or(6),
    );
    let cfg = DatagenConfig {
        min_separation: args.min_separation.unwrap_or(DEFAULT_MIN_SEPARATION),
        ..DatagenConfig::default()
    };
    cfg.eval
        .validate(cfg.min_separation)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let seed = args.seed.unwrap_or(0);
    let data = gen_dataset(&catalog, &spec, &cfg, seed)?;
    datagen::save(&data, &out)?;
    let (abs, rel) = type_distribution(&data);
    println!("wrote {} demonstrations to {}", data.len(), out.display());
    println!("absolute: {abs}  relative: {rel}");
    Ok(json!({
        "command": "gen-dataset",
        "out": out.display().to_string(),
        "count": data.len(),
        "absolute": abs,
        "relative": rel,
        "seed": seed,
    }))
}

#[derive(Serialize)]
struct CycleMetricsFile<'a> {
    config: &'a CycleConfig,
    seed: u64,
    rounds: Vec<&'a RoundMetrics>,
    error: Option<String>,
}

fn cycle_cmd(args: CycleArgs) -> Result<Value, CliError> {
    let dataset_path = required(args.dataset.clone(), "dataset")?;
    let out_dir = required(args.out_dir.clone(), "out-dir")?;
    let seed = args.seed.unwrap_or(0);
    let defaults = CycleConfig::default();
    let cfg = CycleConfig {
        n: args.n.unwrap_or(defaults.n),
        tau: args.tau.unwrap_or(defaults.tau),
        nu: args.nu.unwrap_or(defaults.nu),
        iterations: args.iterations.unwrap_or(defaults.iterations),
        per_round_quota: args.quota,
        temperature: args.temperature.unwrap_or(defaults.temperature),
        max_passes: args.max_passes.unwrap_or(defaults.max_passes),
        workers: None,
    };
    cfg.validate()?;
    let bank = bank(&args.backend)?;
    let dataset = datagen::load(&dataset_path)?;
    if dataset.is_empty() {
        return Err(CliError::Config(format!(
            "{} is empty",
            dataset_path.display()
        )));
    }
    let holdout = match &args.holdout {
        Some(p) => datagen::load(p)?,
        None => gen_dataset(
            &Catalog::ycb(),
            &DatasetSpec {
                id_prefix: "holdout".into(),
                ..DatasetSpec::new(args.holdout_count.unwrap_or(200), 3, 6)
            },
            &DatagenConfig::default(),
            seed::derive_tagged(seed, "holdout"),
        )?,
    };
    let built = build_backend(&args.backend, &bank)?;
    let mut hook: Box<dyn RetrainHook> = match (&built, args.retrain.unwrap_or(RetrainKind::Shrink))
    {
        (BuiltBackend::Oracle(o), RetrainKind::Shrink) => Box::new(NoiseShrinkHook::new(o.clone())),
        (BuiltBackend::Remote(_), RetrainKind::Shrink) if args.retrain.is_some() => {
            return Err(CliError::Config(
                "--retrain shrink needs the oracle backend".into(),
            ));
        }
        (b, _) => Box::new(FrozenHook(b.handle())),
    };
    let settings = EvalSettings {
        eval: EvalConfig::default(),
        bank,
    };
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let out = self_improve(
        &dataset,
        &holdout,
        built.handle(),
        hook.as_mut(),
        &cfg,
        &settings,
        seed,
    )?;

    let last = out.rounds.last().expect("round 0 is always present");
    datagen::save(&last.dataset, &out_dir.join("d_aug.jsonl"))?;
    let mut records = Vec::new();
    for r in &out.rounds[1..] {
        datagen::save(
            &r.dataset,
            &out_dir.join(format!("round_{}.jsonl", r.metrics.round)),
        )?;
        records.extend(r.records.iter().cloned());
    }
    datagen::write_jsonl(&records, &out_dir.join("records.jsonl"))?;
    let metrics = CycleMetricsFile {
        config: &cfg,
        seed,
        rounds: out.rounds.iter().map(|r| &r.metrics).collect(),
        error: out.error.as_ref().map(|e| e.to_string()),
    };
    write_text(&out_dir.join("metrics.json"), &to_pretty(&metrics))?;
    let rows: Vec<(usize, &MetricsReport)> = out
        .rounds
        .iter()
        .map(|r| (r.metrics.dataset_size, &r.metrics.metrics))
        .collect();
    write_text(&out_dir.join("metrics.csv"), &csv(&rows))?;

    let new_total: usize = out.rounds.iter().map(|r| r.metrics.new_items).sum();
    if new_total == 0 && cfg.iterations > 0 {
        eprintln!("warning: no new triplets were generated; every demonstration passed the confidence gate");
    }
    let labelled: Vec<(String, &MetricsReport)> = out
        .rounds
        .iter()
        .map(|r| {
            (
                format!("round {} (n={})", r.metrics.round, r.metrics.dataset_size),
                &r.metrics.metrics,
            )
        })
        .collect();
    print!("{}", format_table(&labelled));
    println!("wrote {}", out_dir.display());
    let summary = json!({
        "command": "run-cycle",
        "out_dir": out_dir.display().to_string(),
        "dataset_sizes": out.rounds.iter().map(|r| r.metrics.dataset_size).collect::<Vec<_>>(),
        "new_items": new_total,
        "l2a_pct": out.rounds.iter().map(|r| r.metrics.metrics.l2a_pct).collect::<Vec<_>>(),
        "error": metrics.error,
    });
    if let Some(e) = out.error {
        return Err(CliError::from(e));
    }
    Ok(summary)
}

fn eval_cmd(args: EvalArgs) -> Result<Value, CliError> {
    let dataset_path = required(args.dataset.clone(), "dataset")?;
    let bank = bank(&args.backend)?;
    let data: Vec<Demonstration> = datagen::load(&dataset_path)?;
    if data.is_empty() {
        return Err(CliError::Config(format!(
            "{} is empty",
            dataset_path.display()
        )));
    }
    let built = build_backend(&args.backend, &bank)?;
    let backend = built.handle();
    let settings = EvalSettings {
        eval: EvalConfig {
            thresholds: ThresholdConfig::default(),
            ..EvalConfig::default()
        },
        bank,
    };
    let seed = args.seed.unwrap_or(0);
    let (_, report) = evaluate(&data, backend.as_ref(), &settings, seed, None)?;
    if let Some(path) = &args.metrics_out {
        write_text(path, &to_pretty(&report))?;
        let csv_path = args
            .csv_out
            .clone()
            .unwrap_or_else(|| path.with_extension("csv"));
        write_text(
            &csv_path,
            &csv(&[(args.train_size.unwrap_or(data.len()), &report)]),
        )?;
    } else if let Some(csv_path) = &args.csv_out {
        write_text(
            csv_path,
            &csv(&[(args.train_size.unwrap_or(data.len()), &report)]),
        )?;
    }
    if args.table {
        print!("{}", format_table(&[(backend.model_id(), &report)]));
    } else {
        println!(
            "L2A {:.1}%  A2L {:.1}%  L2C {:.1}%  ({} items)",
            report.l2a_pct,
            report.a2l_pct,
            report.l2c_pct,
            data.len()
        );
    }
    Ok(json!({
        "command": "evaluate",
        "items": data.len(),
        "l2a_pct": report.l2a_pct,
        "a2l_pct": report.a2l_pct,
        "l2c_pct": report.l2c_pct,
    }))
}

fn run(cli: Cli) -> Result<Value, CliError> {
    let config = load_config(cli.config.as_deref())?;
    let workers =
        match (cli.workers, config.get("workers")) {
            (Some(w), _) => Some(w),
            (None, Some(v)) => Some(v.as_u64().ok_or_else(|| {
                CliError::Config("config workers must be a positive integer".into())
            })? as usize),
            (None, None) => None,
        };
    if workers == Some(0) {
        return Err(CliError::Config("--workers must be >= 1".into()));
    }
    let command = cli.command;
    in_pool(workers, move || match command {
        Command::GenDataset(a) => gen_cmd(merge(a, &config, "gen-dataset")?),
        Command::RunCycle(a) => cycle_cmd(merge(a, &config, "run-cycle")?),
        Command::Evaluate(a) => {
            let table = a.table;
            let mut a = merge(a, &config, "evaluate")?;
            a.table = table
                || config
                    .pointer("/evaluate/table")
                    .and_then(Value::as_bool)
                    .unwrap_or(false);
            eval_cmd(a)
        }
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let json_out = cli.json;
    match run(cli) {
        Ok(summary) => {
            if json_out {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if json_out {
                println!(
                    "{}",
                    json!({"error": e.to_string(), "exit_code": e.exit_code()})
                );
            }
            ExitCode::from(e.exit_code())
        }
    }
}
