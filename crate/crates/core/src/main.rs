use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use lora_curve::bma::Temperature;
use lora_curve::experiment::{
    cmd_evaluate, cmd_profile, cmd_sweep, cmd_train_anchors, cmd_train_curve, exit_code, ExperimentConfig,
};
use lora_curve::method::Method;
use lora_curve::Result;

#[derive(Parser, Debug)]
#[command(name = "lora-curve", version, about = "Train, evaluate and profile curves of low-rank adapters")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config; SECTION__KEY environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// MAP | DE(N) | Lin(N) | ALC(N,m) | FLC(N,m)
    #[arg(long, global = true)]
    method: Option<Method>,

    /// Comma-separated seed list.
    #[arg(long, global = true, value_delimiter = ',')]
    seed: Option<Vec<u64>>,

    /// Number of inference grid points.
    #[arg(long = "grid-M", global = true)]
    grid_m: Option<usize>,

    /// `inf` or a positive number.
    #[arg(long, global = true)]
    temperature: Option<Temperature>,

    /// Full-size step counts, batch size and learning rate.
    #[arg(long, global = true)]
    paper_scale: bool,

    /// Output root; defaults to the config's `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Sweep worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one anchor adapter per seed and write a manifest.
    TrainAnchors,
    /// Train (or assemble) a curve for --method.
    TrainCurve,
    /// Test-split metrics of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write per-grid-point predictions.
        #[arg(long)]
        dump_predictions: bool,
    },
    /// Loss profile, barrier report and probability evolution of a checkpoint.
    Profile {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Profile resolution; defaults to the config's value.
        #[arg(long)]
        points_per_segment: Option<usize>,
    },
    /// Every method over every seed, summarized as mean and std.
    Sweep {
        /// Methods to compare; defaults to --method.
        #[arg(long, value_delimiter = ';')]
        methods: Option<Vec<Method>>,
    },
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(m) = cli.method {
        config.method = m;
    }
    if let Some(seeds) = &cli.seed {
        config.seeds = seeds.clone();
    }
    if cli.grid_m.is_some() {
        config.inference.grid_m = cli.grid_m;
    }
    if let Some(t) = cli.temperature {
        config.inference.temperature = t;
    }
    if cli.paper_scale {
        config.train = config.train.paper_scale();
    }
    if let Some(out) = &cli.out {
        config.output = out.clone();
    }
    if cli.workers.is_some() {
        config.workers = cli.workers;
    }
    match &cli.command {
        Command::Evaluate { dump_predictions, .. } => config.inference.dump_predictions |= dump_predictions,
        Command::Profile {
            points_per_segment: Some(p),
            ..
        } => config.profile.points_per_segment = *p,
        Command::Sweep { methods: Some(m) } => config.sweep_methods = m.clone(),
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

/// Prints one line; a closed pipe on the reader side is not an error.
fn emit(line: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}").and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let config = build_config(cli)?;
    match &cli.command {
        Command::TrainAnchors => emit(&cmd_train_anchors(&config)?.display().to_string())?,
        Command::TrainCurve => emit(&cmd_train_curve(&config)?.display().to_string())?,
        Command::Evaluate { checkpoint, .. } => {
            emit(&serde_json::to_string_pretty(&cmd_evaluate(&config, checkpoint)?)?)?
        }
        Command::Profile { checkpoint, .. } => emit(&cmd_profile(&config, checkpoint)?.display().to_string())?,
        Command::Sweep { .. } => {
            let outcome = cmd_sweep(&config)?;
            for row in &outcome.rows {
                emit(&format!(
                    "{:<12} acc {:.4}±{:.4}  ll {:.4}±{:.4}  ece {:.4}±{:.4}  mi {:.4}±{:.4}  failed {:?}",
                    row.method.to_string(),
                    row.accuracy.mean,
                    row.accuracy.std,
                    row.log_likelihood.mean,
                    row.log_likelihood.std,
                    row.ece.mean,
                    row.ece.std,
                    row.mutual_information.mean,
                    row.mutual_information.std,
                    row.failed_seeds
                ))?;
            }
            if outcome.has_failures() {
                for r in outcome.runs.iter().filter(|r| r.result.is_err()) {
                    error!("{} seed {} failed: {}", r.method, r.seed, r.result.as_ref().unwrap_err());
                }
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
