use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use nsv_experiments::{run_scenario, RunFile, SCENARIOS};

const DEFAULT_SELFCHECK: &str = include_str!("../configs/selfcheck.toml");

#[derive(Parser)]
#[command(name = "nsv", version, about = "Navier-Stokes-Voigt memory solver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report bundle.
    Run {
        scenario: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory; defaults to the run file's output.directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Alias for `run selfcheck`; uses the bundled configuration unless one is given.
    Check {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the available scenarios.
    List,
}

fn execute(scenario: &str, rf: RunFile, seed: u64, out: Option<PathBuf>) -> anyhow::Result<bool> {
    let mut bundle = run_scenario(scenario, &rf, seed)?;
    let dir = out.unwrap_or_else(|| rf.output.directory.join(scenario));
    bundle
        .write(&dir, &rf.output.formats)
        .with_context(|| format!("writing results to {}", dir.display()))?;
    print!("{}", bundle.render());
    println!("results in {}", dir.display());
    Ok(bundle.all_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::List => {
            for s in SCENARIOS {
                println!("{:<14} {}", s.name, s.summary);
            }
            Ok(true)
        }
        Command::Run {
            scenario,
            config,
            seed,
            out,
        } => RunFile::load(&config)
            .map_err(anyhow::Error::from)
            .and_then(|rf| execute(&scenario, rf, seed, out)),
        Command::Check { config, seed, out } => {
            let rf = match config {
                Some(path) => RunFile::load(&path),
                None => RunFile::parse(DEFAULT_SELFCHECK),
            };
            rf.map_err(anyhow::Error::from)
                .and_then(|rf| execute("selfcheck", rf, seed, out))
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
