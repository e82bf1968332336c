use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kronqn::config::{RunConfig, PRESETS};
use kronqn::grid::{best, parse_grid, run_grid, SUMMARY};
use kronqn::runlog::Status;
use kronqn::train::{train_to_dir, RUN_LOG};
use kronqn::CliError;
use kronqn_core::verify::{self, Suite, DEFAULT_SEED};

/// Kronecker-factored quasi-Newton training, verification and grid search.
#[derive(Parser)]
#[command(name = "kronqn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write <out>/run.csv.
    Train {
        /// Config file, or `preset:NAME`.
        #[arg(long)]
        config: PathBuf,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to `run.output`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run randomized property checks: structure, damping, bounds or all.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Train every cell of a grid and report the best one.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List presets, or print one as a config file.
    Presets { name: Option<String> },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            let out = out.unwrap_or_else(|| cfg.run.output.clone());
            let data = cfg.build_dataset()?;
            let outcome = train_to_dir(&cfg, &data, &out)?;
            let loss = outcome.final_loss().map(|l| l.to_string()).unwrap_or_else(|| "-".into());
            println!("{} final_loss={loss} log={}", outcome.status, out.join(RUN_LOG).display());
            if let Some(msg) = &outcome.message {
                eprintln!("{msg}");
            }
            Ok(outcome.status == Status::Completed)
        }
        Command::Verify { suite, seed } => {
            let suite: Suite = suite.parse().map_err(|e: kronqn_core::Error| CliError::Usage(e.to_string()))?;
            let report = verify::run(suite, seed)?;
            print!("{report}");
            Ok(report.passed())
        }
        Command::Grid { config, grid, parallel, out } => {
            let base = RunConfig::load(&config)?;
            let text = std::fs::read_to_string(&grid).map_err(|e| CliError::io(&grid, e))?;
            let axes = parse_grid(&text)?;
            let out = out.unwrap_or_else(|| base.run.output.join("grid"));
            let results = run_grid(&base, &axes, &out, parallel)?;
            println!("{} cells, summary in {}", results.len(), out.join(SUMMARY).display());
            match best(&results) {
                Some(b) => {
                    let cell: Vec<String> = axes.iter().zip(&b.values).map(|(a, v)| format!("{}={v}", a.key)).collect();
                    println!("best cell {} ({}) final_loss={}", b.index, cell.join(" "), b.final_loss.unwrap_or(f64::NAN));
                    Ok(true)
                }
                None => {
                    println!("no cell completed");
                    Ok(false)
                }
            }
        }
        Command::Presets { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(true)
        }
        Command::Presets { name: Some(name) } => {
            print!("{}", RunConfig::preset(&name)?.render());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
