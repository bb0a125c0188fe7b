//! `spinchain`: campaign runner for the spin-chain toolkit.

mod config;
mod experiments;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Validation(String),
    #[error("missing results: {0}")]
    MissingResults(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<spinchain_core::Error> for CliError {
    fn from(e: spinchain_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(format!("json: {e}"))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "spinchain", version, about = "Langevin spin-chain experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        replicas_override: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: SPINCHAIN_THREADS, then all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Write whitespace-separated plot data from a results directory.
    Plotdata {
        dir: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "PascalCase")]
pub enum PlotKind {
    GapVsBeta,
    FlipTimeVsBeta,
    VarianceVsTime,
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(t) = flag {
        return Ok(Some(t));
    }
    match std::env::var("SPINCHAIN_THREADS") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Validation(format!("SPINCHAIN_THREADS: not an integer: {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { config } => {
            let (cfg, _) = config::ExperimentConfig::load(&config)?;
            cfg.validate()?;
            println!("ok: {:?}, {} β values, {} replicas", cfg.experiment, cfg.beta_schedule.len(), cfg.replicas);
            Ok(())
        }
        Command::Run {
            config,
            replicas_override,
            seed,
            threads: t,
        } => {
            let (mut cfg, raw) = config::ExperimentConfig::load(&config)?;
            if let Some(r) = replicas_override {
                cfg.replicas = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let t = threads(t)?;
            if t == Some(0) {
                return Err(CliError::Validation("threads: must be positive".into()));
            }
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(t) = t {
                pool = pool.num_threads(t);
            }
            let pool = pool.build().map_err(|e| CliError::Runtime(e.to_string()))?;
            let summary = pool.install(|| experiments::run(&cfg, &raw))?;
            println!("{}", cfg.output_dir.join(summary).display());
            Ok(())
        }
        Command::Plotdata { dir, kind } => {
            for f in plot::emit_plot_data(&dir, kind)? {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spinchain: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
