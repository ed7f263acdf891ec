use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dml_core::backbones::BackboneKind;
use dml_core::data::DatasetKind;
use dml_core::dml::HeadVariant;
use dml_core::harness::audit::{grad_audit, AUDIT_SEED};
use dml_core::harness::{
    compare, default_direction, emit_report, prepare_data, read_runs, report_table, run_experiment,
    write_outputs, ExperimentConfig, RUNS_FILE,
};
use dml_core::metrics::Direction;

#[derive(Parser)]
#[command(name = "dml", version, about = "Multi-task recommender experiments")]
struct Cli {
    /// Log at debug level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, label, augment and split a dataset, then write the cache.
    PrepareData(CommonArgs),
    /// Train every configured backbone/variant for every seed.
    Train(CommonArgs),
    /// One-tailed Welch test between two models' runs.
    Compare(CompareArgs),
    /// Rebuild the report tables from saved run records.
    Report(ReportArgs),
    /// Finite-difference, isolation and forward-equivalence checks.
    GradAudit(AuditArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single seed (overrides the config's list).
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated backbones, or `all`.
    #[arg(long, value_delimiter = ',')]
    backbone: Option<Vec<String>>,
    /// Comma-separated head variants, or `all`.
    #[arg(long, value_delimiter = ',')]
    variant: Option<Vec<String>>,
    #[arg(long)]
    dataset: Option<String>,
    /// Raw data path (MovieLens directory or interactions file).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Run records; defaults to `<out>/runs.jsonl`.
    #[arg(long)]
    runs: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Baseline model id, e.g. `shared_bottom+none`.
    #[arg(long)]
    base: String,
    /// Treatment model id, e.g. `shared_bottom+full`.
    #[arg(long)]
    treat: String,
    /// Task name or `consistency`.
    #[arg(long)]
    metric: String,
    /// `greater` or `less`; defaults to `less` for MSE and `greater` otherwise.
    #[arg(long)]
    direction: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    runs: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long, default_value_t = AUDIT_SEED)]
    seed: u64,
}

fn parse_all<T>(values: &[String], all: &[T]) -> Result<Vec<T>>
where
    T: std::str::FromStr<Err = dml_core::Error> + Copy,
{
    if values.iter().any(|v| v == "all") {
        return Ok(all.to_vec());
    }
    values
        .iter()
        .map(|v| v.parse::<T>().map_err(Into::into))
        .collect()
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => {
            let Some(kind) = &args.dataset else {
                bail!("either --config or --dataset is required");
            };
            ExperimentConfig::for_dataset(kind.parse()?, args.data.clone())
        }
    };
    if let Some(kind) = &args.dataset {
        config.dataset.kind = kind.parse()?;
    }
    if let Some(path) = &args.data {
        config.dataset.path = Some(path.clone());
    }
    if let Some(seed) = args.seed {
        config.training.seeds = vec![seed];
    }
    if let Some(seeds) = &args.seeds {
        config.training.seeds = seeds.clone();
    }
    if let Some(b) = &args.backbone {
        config.model.backbones = parse_all(b, &BackboneKind::ALL)?;
    }
    if let Some(v) = &args.variant {
        config.model.variants = parse_all(v, &HeadVariant::ALL)?;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn runs_path(runs: &Option<PathBuf>, out: &Path) -> PathBuf {
    runs.clone().unwrap_or_else(|| out.join(RUNS_FILE))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::PrepareData(args) => {
            let mut config = load_config(&args)?;
            if config.dataset.cache.is_none() {
                config.dataset.cache = Some(
                    config
                        .output_dir
                        .join(format!("{}.cache.json", config.dataset.kind)),
                );
            }
            let data = prepare_data(&config.dataset)?;
            println!(
                "{}: {} examples ({} train / {} validation / {} test), {} fields, cache {}",
                data.dataset.kind,
                data.dataset.len(),
                data.split.train.len(),
                data.split.validation.len(),
                data.split.test.len(),
                data.dataset.fields.len(),
                config
                    .dataset
                    .cache
                    .as_deref()
                    .unwrap_or(Path::new("-"))
                    .display()
            );
        }
        Command::Train(args) => {
            let config = load_config(&args)?;
            let artifacts = run_experiment(&config)?;
            write_outputs(&artifacts, &config.output_dir)?;
            for a in &artifacts {
                if a.trainable_params != a.analytic_params {
                    bail!(
                        "{}: {} trainable parameters but the closed form gives {}",
                        a.model,
                        a.trainable_params,
                        a.analytic_params
                    );
                }
            }
            print!("{}", report_table(&artifacts).to_text());
            println!("wrote {}", config.output_dir.display());
        }
        Command::Compare(args) => {
            let runs = read_runs(&runs_path(&args.runs, &args.out))?;
            let dataset: Option<DatasetKind> =
                args.dataset.as_deref().map(str::parse).transpose()?;
            let select = |model: &str| {
                runs.iter()
                    .filter(|r| r.model == model && dataset.is_none_or(|d| r.dataset == d))
                    .cloned()
                    .collect::<Vec<_>>()
            };
            let (base, treat) = (select(&args.base), select(&args.treat));
            let direction: Direction = match &args.direction {
                Some(d) => d.parse()?,
                None => default_direction(&runs, &args.metric),
            };
            let c = compare(&base, &treat, &args.metric, direction)?;
            println!(
                "{} ({}): {} {:.4} ± {:.4} (n={}) vs {} {:.4} ± {:.4} (n={}); delta {:+.4}, p = {:.4} ({})",
                c.metric,
                c.direction,
                c.base_model,
                c.base.mean,
                c.base.std,
                c.base.n,
                c.treat_model,
                c.treat.mean,
                c.treat.std,
                c.treat.n,
                c.delta,
                c.p_value,
                if c.significant { "significant" } else { "not significant" }
            );
        }
        Command::Report(args) => {
            let runs = read_runs(&runs_path(&args.runs, &args.out))?;
            let (tsv, txt) = emit_report(&runs, &args.out)?;
            print!("{}", report_table(&runs).to_text());
            println!("wrote {} and {}", tsv.display(), txt.display());
        }
        Command::GradAudit(args) => {
            let checks = grad_audit(args.seed)?;
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} {} ({})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                ok &= c.passed;
            }
            let passed = checks.iter().filter(|c| c.passed).count();
            println!("{passed}/{} checks passed", checks.len());
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
