//! `jkoflow` — train, sample and evaluate proximal-step normalizing flows.
//!
//! Exit codes: 0 success, 2 config error, 3 numeric failure, 4 partial sweep.

mod commands;
mod config;
mod manifest;

use clap::{Parser, Subcommand};
use config::{AppConfig, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "jkoflow", version, about = "Proximal-step normalizing flows on 2D benchmarks and tabular data")]
struct Cli {
    /// TOML or JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override (dataset and trainer).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Terminal-cost weight / proximal step size.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Number of outer-loop stages (1 = single shot).
    #[arg(long, global = true)]
    stages: Option<usize>,
    /// Hidden width of the potential network.
    #[arg(long, global = true)]
    width: Option<usize>,
    /// RK4 steps per flow evaluation during training.
    #[arg(long, global = true)]
    nt: Option<usize>,
    /// Deterministic single-threaded execution.
    #[arg(long, global = true)]
    sequential: bool,
    /// Output directory (default: runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a stage stack and write a checkpoint plus metric CSVs.
    Train,
    /// Draw samples from a trained checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        /// Seed for the reference draws (defaults to evaluate.seed).
        #[arg(long)]
        gen_seed: Option<u64>,
    },
    /// Log-density on a regular 2D grid (CSV, optional PPM image).
    DensityGrid {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Square bounds as "lo,hi".
        #[arg(long, default_value = "-5,5", allow_hyphen_values = true)]
        bounds: String,
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        /// Also write a grayscale PPM of the density.
        #[arg(long)]
        image: bool,
    },
    /// MMD of generated samples against held-out data, noise floor, and the
    /// per-stage trajectory.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train single-shot and multi-stage runs per alpha; summarize MMD².
    SweepAlpha {
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,50")]
        alphas: Vec<f64>,
    },
    /// Train single-shot and multi-stage runs per width; summarize MMD².
    SweepWidth {
        #[arg(long, value_delimiter = ',', default_value = "3,4,5,8,16")]
        widths: Vec<usize>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

fn resolve_config(cli: &Cli) -> Result<AppConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => config::load_file(path)?,
        None => AppConfig::default(),
    };
    config::apply_env(&mut cfg);
    config::apply_overrides(
        &mut cfg,
        &Overrides {
            seed: cli.seed,
            alpha: cli.alpha,
            stages: cli.stages,
            width: cli.width,
            nt: cli.nt,
            sequential: cli.sequential,
        },
    );
    Ok(cfg)
}

fn parse_bounds(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("bounds must be \"lo,hi\", got {s:?}"));
    }
    let lo: f64 = parts[0].trim().parse().map_err(|e| format!("bounds: {e}"))?;
    let hi: f64 = parts[1].trim().parse().map_err(|e| format!("bounds: {e}"))?;
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Err(problems) = config::validate(&cfg) {
        eprintln!("config error: {} violation(s):", problems.len());
        for p in &problems {
            eprintln!("  - {p}");
        }
        return ExitCode::from(EXIT_CONFIG);
    }

    let command_name = match &cli.command {
        Command::Train => "train",
        Command::Generate { .. } => "generate",
        Command::DensityGrid { .. } => "density-grid",
        Command::Evaluate { .. } => "evaluate",
        Command::SweepAlpha { .. } => "sweep-alpha",
        Command::SweepWidth { .. } => "sweep-width",
    };
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| commands::default_out(command_name));

    let result = match &cli.command {
        Command::Train => commands::cmd_train(&cfg, &out),
        Command::Generate { checkpoint, n, gen_seed } => commands::cmd_generate(
            &cfg,
            checkpoint,
            *n,
            gen_seed.unwrap_or(cfg.evaluate.seed),
            &out,
        ),
        Command::DensityGrid {
            checkpoint,
            bounds,
            resolution,
            image,
        } => match parse_bounds(bounds) {
            Ok(b) => commands::cmd_density_grid(&cfg, checkpoint, b, *resolution, *image, &out),
            Err(msg) => {
                eprintln!("config error: {msg}");
                return ExitCode::from(EXIT_CONFIG);
            }
        },
        Command::Evaluate { checkpoint } => commands::cmd_evaluate(&cfg, checkpoint, &out),
        Command::SweepAlpha { alphas } => {
            return match commands::cmd_sweep_alpha(&cfg, alphas, &out) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("sweep finished with failures: {e}");
                    ExitCode::from(EXIT_PARTIAL)
                }
            }
        }
        Command::SweepWidth { widths } => {
            return match commands::cmd_sweep_width(&cfg, widths, &out) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("sweep finished with failures: {e}");
                    ExitCode::from(EXIT_PARTIAL)
                }
            }
        }
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}
