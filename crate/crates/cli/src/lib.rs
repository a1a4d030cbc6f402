//! Command-line front end: configuration loading, simulation, analysis,
//! sweeps and feasibility checks.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use belllab_core::analysis::Orientation;
use belllab_core::pipeline::MatchStrategy;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "belllab", version, about = "Simulate and analyse Bell tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    FixedLattice,
    GreedyNearest,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OrientationArg {
    Positive,
    Negative,
    Either,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured protocol and write trials or time tags plus metadata.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
    /// Estimate correlations, S, the local-model p-value and no-signalling tests.
    Analyze {
        #[arg(long, conflicts_with_all = ["alice", "bob"])]
        trials: Option<PathBuf>,
        #[arg(long, requires = "bob")]
        alice: Option<PathBuf>,
        #[arg(long, requires = "alice")]
        bob: Option<PathBuf>,
        /// Ground-truth emission log, used for the raw no-signalling block.
        #[arg(long, requires = "alice")]
        emissions: Option<PathBuf>,
        /// Supplies the `window` section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        window_ns: Option<f64>,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long, value_enum, default_value_t = OrientationArg::Either)]
        orientation: OrientationArg,
        /// Write report.json (and paired.csv for time tags) here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlation against analyzer angle, or S against coincidence window.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
    /// Decide whether four pairwise tables admit a joint distribution.
    Feasibility {
        tables: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the reference numbers.
    Reproduce {
        #[arg(long, default_value_t = 20240101)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        n_per_context: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn format(f: FormatArg) -> commands::Format {
    match f {
        FormatArg::Csv => commands::Format::Csv,
        FormatArg::Json => commands::Format::Json,
    }
}

fn write_or_print<T: serde::Serialize>(out: Option<PathBuf>, name: &str, value: &T) -> CliResult<Option<String>> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            io::write_json(&dir.join(name), value)?;
            Ok(None)
        }
        None => io::to_json_string(value).map(Some),
    }
}

/// Runs one command; returns text for standard output, if any.
pub fn run(cli: Cli) -> CliResult<Option<String>> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            format: f,
        } => {
            commands::simulate(&config, seed, &out, format(f))?;
            Ok(None)
        }
        Command::Analyze {
            trials,
            alice,
            bob,
            emissions,
            config,
            window_ns,
            strategy,
            orientation,
            out,
        } => {
            let inputs = commands::AnalyzeInputs {
                trials,
                alice,
                bob,
                emissions,
                config,
                window_ns,
                strategy: strategy.map(|s| match s {
                    StrategyArg::FixedLattice => MatchStrategy::FixedLattice,
                    StrategyArg::GreedyNearest => MatchStrategy::GreedyNearest,
                }),
                orientation: match orientation {
                    OrientationArg::Positive => Orientation::Positive,
                    OrientationArg::Negative => Orientation::Negative,
                    OrientationArg::Either => Orientation::Either,
                },
                out: out.clone(),
            };
            let result = commands::analyze(&inputs)?;
            for w in &result.report.warnings {
                eprintln!("warning: {w}");
            }
            match out {
                Some(_) => Ok(None),
                None => io::to_json_string(&result.report).map(Some),
            }
        }
        Command::Sweep {
            config,
            seed,
            out,
            format: f,
        } => {
            commands::sweep(&config, seed, &out, format(f))?;
            Ok(None)
        }
        Command::Feasibility { tables, out } => {
            write_or_print(out, "feasibility.json", &commands::feasibility(&tables)?)
        }
        Command::Reproduce {
            seed,
            n_per_context,
            out,
        } => write_or_print(out, "headlines.json", &commands::reproduce(seed, n_per_context)?),
    }
}

/// Worker count from `BELLLAB_THREADS`; unset or empty means all cores.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("BELLLAB_THREADS") else {
        return Ok(());
    };
    if value.trim().is_empty() {
        return Ok(());
    }
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("BELLLAB_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}
