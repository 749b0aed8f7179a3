use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use vfm_core::data::{load_dataset, save_dataset, CsvSchema};
use vfm_core::experiment::{ablation_study, evaluate_bundle, run_experiment};
use vfm_core::synth::{generate, SynthError, SyntheticConfig, WellScenario};
use vfm_core::{Error, EvaluationReport, ExperimentConfig, ModelKind, Variant, WellId};

/// Environment variable that relocates relative output paths.
const OUTPUT_ROOT_VAR: &str = "VFM_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "vfm", version, about = "Multi-task virtual flow metering lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic asset and write it as CSV.
    Generate(GenerateArgs),
    /// Fit the requested models and evaluate them.
    Train(TrainArgs),
    /// Re-evaluate every checkpoint of an existing bundle.
    Evaluate(EvaluateArgs),
    /// Compare the task-parameter ablations over several seeds.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario config (TOML). Defaults to twelve wells on two assets.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives data.csv and generation.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the default scenario config as TOML and exit.
    #[arg(long, conflicts_with_all = ["config", "out"])]
    print_default_config: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated model names; defaults to those in the grid config.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    models: Option<Vec<ModelKind>>,
    /// Experiment config (TOML) with grids, epochs and split rules.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_variant, default_value = "full,no-beta,no-gamma,no-beta-no-gamma")]
    variants: Vec<Variant>,
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| {
        let known: Vec<&str> = ModelKind::ALL.iter().map(|k| k.tag()).collect();
        format!("unknown model '{s}' (expected one of {})", known.join(", "))
    })
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| {
        let known: Vec<&str> = Variant::ALL.iter().map(|v| v.tag()).collect();
        format!("unknown variant '{s}' (expected one of {})", known.join(", "))
    })
}

/// Failure classes mapped to exit codes 1 and 2.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn thread_pool(jobs: Option<usize>) -> anyhow::Result<()> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        anyhow::ensure!(n > 0, "--jobs must be positive");
        b = b.num_threads(n);
    }
    b.build_global().context("building worker pool")
}

fn load_data(path: &Path) -> Result<vfm_core::AssetDataset, Failure> {
    load_dataset(path, &CsvSchema::default())
        .map_err(|e| Failure::Validation(anyhow::Error::new(e).context(format!("reading {}", path.display()))))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

#[derive(Serialize)]
struct GenerationManifest<'a> {
    package_version: &'static str,
    seed: u64,
    wells: usize,
    observations: usize,
    data: &'a str,
    config: &'a SyntheticConfig,
    scenarios: &'a BTreeMap<WellId, WellScenario>,
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    if a.print_default_config {
        let text = toml::to_string(&SyntheticConfig::default()).context("serializing default config")?;
        print!("{text}");
        return Ok(());
    }
    let out = resolve(a.out.as_deref().ok_or_else(|| Failure::Validation(anyhow::anyhow!("--out is required")))?);
    let mut config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SyntheticConfig>(&text)
                .map_err(|e| Failure::Validation(anyhow::anyhow!("{}: {e}", p.display())))?
        }
        None => SyntheticConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let generated = generate(&config).map_err(|e| match e {
        SynthError::ScenarioInfeasible { .. } => Failure::Runtime(e.into()),
        other => Failure::from(Error::from(other)),
    })?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let data = out.join("data.csv");
    save_dataset(&generated.dataset, &data).map_err(Error::from)?;
    let manifest = GenerationManifest {
        package_version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        wells: generated.dataset.n_wells(),
        observations: generated.dataset.len(),
        data: "data.csv",
        config: &config,
        scenarios: &generated.scenarios,
    };
    let path = out.join("generation.json");
    let text = serde_json::to_string_pretty(&manifest).context("serializing generation manifest")?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    log::info!("wrote {} observations of {} wells to {}", manifest.observations, manifest.wells, data.display());
    Ok(())
}

fn print_summary(report: &EvaluationReport) {
    println!("{:<16} {:>10} {:>12} {:>12}", "model", "mape", "sensitivity", "parameters");
    for m in &report.models {
        println!("{:<16} {:>10.3} {:>12.3} {:>12}", m.label, m.mean_mape(), m.mean_sensitivity(), m.parameters.map_or("-".to_string(), |p| p.to_string()));
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    thread_pool(a.jobs)?;
    let mut config = load_config(a.grid.as_deref())?;
    if let Some(m) = a.models {
        config.models = m;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    let ds = load_data(&a.data)?;
    let out = resolve(&a.out);
    let outcome = run_experiment(&config, ds, &out)?;
    print_summary(&outcome.report);
    if !outcome.all_trained() {
        for f in &outcome.failures {
            log::error!("{f}");
        }
        return Err(Failure::Runtime(anyhow::anyhow!(
            "{} of {} models failed; see {}",
            outcome.failures.len(),
            outcome.manifest.models.len(),
            out.join("manifest.json").display()
        )));
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    thread_pool(a.jobs)?;
    let ds = load_data(&a.data)?;
    let bundle = resolve(&a.bundle);
    let eval = evaluate_bundle(&bundle, ds)?;
    print_summary(&eval.report);
    if !eval.failures.is_empty() {
        for f in &eval.failures {
            log::error!("{f}");
        }
        return Err(Failure::Runtime(anyhow::anyhow!(
            "{} checkpoints could not be evaluated; see {}",
            eval.failures.len(),
            bundle.join("reports/failures.json").display()
        )));
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), Failure> {
    thread_pool(a.jobs)?;
    if a.seeds.is_empty() || a.variants.is_empty() {
        return Err(Failure::Validation(anyhow::anyhow!("--seeds and --variants must be non-empty")));
    }
    let config = load_config(a.grid.as_deref())?;
    let ds = load_data(&a.data)?;
    let out = resolve(&a.out);
    let tables = ablation_study(&config, &ds, &a.seeds, &a.variants, &out)?;
    for t in &tables {
        for r in &t.rows {
            println!("seed {} {:<18} mape {:>8.3} sensitivity {:>6.3}", t.seed, r.variant.tag(), r.mean_mape, r.mean_sensitivity);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
