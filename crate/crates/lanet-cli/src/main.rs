use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lanet_cli::commands;
use lanet_cli::config::RunConfig;

/// Desk-scale trajectory prediction: synthesize scenes, train, evaluate,
/// predict, inspect pruning, and plot figures.
#[derive(Parser)]
#[command(name = "lanet", version, about)]
struct Cli {
    /// TOML config file layered over built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override a config key (repeatable), e.g. --set train.lr=0.002.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Master seed; overrides the config file value.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic scene files plus a manifest.
    Synth {
        /// Number of scenes to generate.
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a directory of scene files.
    Train {
        /// Directory containing *.scene.json files.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint, loss curve, and config echo.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint over a scene directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Optional directory for metrics.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast one scene and write the records as JSON.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep pruning thresholds: kept-edge fraction and metrics per theta.
    PruneStats {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated thresholds; defaults to eval.theta_sweep.
        #[arg(long)]
        thetas: Option<String>,
        /// Optional directory for prune_stats.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a scene and its forecasts as an SVG figure.
    Plot {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.sets, cli.seed)?;
    match cli.cmd {
        Cmd::Synth { count, out } => commands::cmd_synth(&cfg, count, &out),
        Cmd::Train { data, out } => commands::cmd_train(&cfg, &data, &out),
        Cmd::Eval {
            checkpoint,
            data,
            out,
        } => commands::cmd_eval(&checkpoint, &data, out.as_deref()).map(|_| ()),
        Cmd::Predict {
            checkpoint,
            scene,
            out,
        } => commands::cmd_predict(&checkpoint, &scene, &out),
        Cmd::PruneStats {
            checkpoint,
            data,
            thetas,
            out,
        } => {
            let sweep: Vec<f64> = match thetas {
                Some(list) => list
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|e| anyhow::anyhow!("bad theta {t:?}: {e}"))
                    })
                    .collect::<anyhow::Result<_>>()?,
                None => cfg.eval.theta_sweep.clone(),
            };
            commands::cmd_prune_stats(&checkpoint, &data, &sweep, out.as_deref()).map(|_| ())
        }
        Cmd::Plot {
            checkpoint,
            scene,
            out,
        } => commands::cmd_plot(&checkpoint, &scene, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LANET_LOG")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
