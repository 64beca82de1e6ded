use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prolab_cli::{commands, CliError, RunConfig};

/// Preference-alignment laboratory: synthetic worlds, loss training and
/// optimality checks.
#[derive(Parser)]
#[command(name = "prolab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (sectioned key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a world and a feedback dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the numerical verification suite.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Run a single check (t31 t32 c33 t41 t42 t43 probe fd).
        #[arg(long)]
        only: Option<String>,
        /// Flip the eDPO regularizer sign in the t31 check (harness self-test).
        #[arg(long, hide = true)]
        inject_bug: bool,
    },
    /// Train one loss on a world and write a run directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge run directories into comparison tables.
    Report {
        /// Run directories written by `train`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory for merged.csv and summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_written(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { common, out } => {
            let cfg = common.load()?;
            print_written(&commands::gen(&cfg, &out)?);
        }
        Command::Verify {
            common,
            only,
            inject_bug,
        } => {
            let cfg = common.load()?;
            let reports = commands::verify(only.as_deref(), cfg.seed, inject_bug)?;
            for r in &reports {
                println!("{} {r}", if r.pass { "PASS" } else { "FAIL" });
            }
            let failed = reports.iter().filter(|r| !r.pass).count();
            println!("verify: {}/{} checks passed", reports.len() - failed, reports.len());
            if failed > 0 {
                return Err(CliError::Verification(format!("{failed} checks failed")));
            }
        }
        Command::Train { common, out } => {
            let cfg = common.load()?;
            let outcome = commands::train(&cfg, &out)?;
            print_written(&outcome.files);
            let last = outcome.trajectory.last();
            println!(
                "{} seed {}: {} steps, final loss {}, logp_preferred {} -> {}",
                cfg.loss.kind,
                cfg.seed,
                last.step,
                last.loss,
                outcome.trajectory.first().logp_preferred,
                last.logp_preferred
            );
            if outcome.trajectory.diverged {
                return Err(CliError::Numerical(format!(
                    "training diverged after step {}; truncated run kept in {}",
                    last.step,
                    out.display()
                )));
            }
        }
        Command::Report { runs, out } => {
            let report = commands::report(&runs)?;
            print!("{}", report.summary);
            if let Some(out) = &out {
                print_written(&commands::write_report(&report, out)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("prolab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
