use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use harness::{parse_seeds, Adjustments, ConfigError, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "sfp-harness", version, about = "Biased-environment experiments: generate, train, verify, report")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write dataset CSVs and metadata sidecars.
    Generate(Common),
    /// Train every (regime, seed) pair on the generated data.
    Train(Common),
    /// Check the closed-form claims against the traces.
    Verify(Common),
    /// Emit the accuracy table and loss curves.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output root; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seeds, e.g. `1..5` or `0,3,7`; overrides `train.seeds`.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// `key=value` with a dotted key, e.g. `train.learning_rate=0.05`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let seeds = self.seeds.as_deref().map(parse_seeds).transpose()?;
        let adj = Adjustments { out: self.out.clone(), seeds, overrides: self.overrides.clone() };
        ExperimentConfig::load(&self.config, &adj)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = c.load()?;
            let summary = harness::run_jobs(c.jobs, || harness::generate(&cfg))??;
            print!("{}", summary.text());
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let runs = harness::run_jobs(c.jobs, || harness::train_all(&cfg))??;
            for r in runs {
                println!("trained {r}");
            }
        }
        Command::Verify(c) => {
            let cfg = c.load()?;
            let summary = harness::run_jobs(c.jobs, || harness::verify(&cfg))??;
            print!("{}", summary.table);
            if summary.failed() > 0 {
                return Err(HarnessError::VerificationFailed { failed: summary.failed(), total: summary.total() });
            }
        }
        Command::Report(c) => {
            let cfg = c.load()?;
            let summary = harness::run_jobs(c.jobs, || harness::report(&cfg))??;
            print!("{}", summary.table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
