use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use unravel::config::parse_config;
use unravel::run::{run, validate};

/// Jump-unraveling toolkit for time-local quantum master equations.
#[derive(Parser)]
#[command(name = "unravel", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the configured experiment and write CSV files.
    Run {
        /// Experiment configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `out` key).
        #[arg(long)]
        out: Option<PathBuf>,
        /// RNG master seed (overrides the config's `seed` key).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for trajectory loops (results are identical for
        /// any thread count).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and validate a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> unravel::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => {
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| unravel::Error::Config(format!("thread pool: {e}")))?;
            }
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = parse_config(&text)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.out_dir = Some(out);
            }
            let files = run(&cfg)?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Validate { config } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg = parse_config(&text)?;
            println!("{}", validate(&cfg)?);
            Ok(())
        }
    }
}
