//! `tvsaddle` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tvsaddle_harness::config::ExperimentConfig;
use tvsaddle_harness::experiment::{constant_record, constants_at, CONSTANT_COLUMNS};
use tvsaddle_harness::{emit_plotdata, run_experiment, write_outputs, HarnessError};

#[derive(Parser)]
#[command(name = "tvsaddle", version, about = "Tracking experiments for time-varying saddle problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep and write CSV and plot data.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Master seed (overrides `sweep.master_seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a config without running it.
    Check { config: PathBuf },
    /// Print the stability constants and condition verdict at every rate.
    Constants {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.sweep.master_seed = s;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Check { config } => {
            let cfg = load(&config, None)?;
            let scenario = cfg.build_scenario()?;
            for a in &cfg.sweep.rates {
                cfg.channel(&scenario, *a)?;
            }
            let runs = cfg.sweep.rates.len() * cfg.sweep.modes.len() * cfg.sweep.seeds;
            println!("{}: ok ({} scenario, {runs} runs)", config.display(), cfg.scenario);
            Ok(ExitCode::SUCCESS)
        }
        Command::Constants { config, seed } => {
            let cfg = load(&config, seed)?;
            let scenario = cfg.build_scenario()?;
            println!("{}", CONSTANT_COLUMNS.join(","));
            for (i, a) in cfg.sweep.rates.iter().enumerate() {
                let rc = constants_at(&cfg, &scenario, i, *a)?;
                println!("{}", constant_record(&rc).join(","));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            out,
            workers,
            seed,
        } => {
            let mut cfg = load(&config, seed)?;
            let dir = match out {
                Some(d) => d,
                None => cfg.output_dir(),
            };
            cfg.output.dir = dir.clone();
            let result = run_experiment(&cfg, workers)?;
            let mut files = write_outputs(&result, &dir)?;
            if cfg.output.plotdata {
                files.extend(emit_plotdata(&result.aggregates, &dir)?);
            }
            for f in &files {
                println!("wrote {}", f.display());
            }
            let failed = result.failed_runs();
            if failed > 0 {
                eprintln!("{failed} of {} runs failed", result.rows.len());
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
