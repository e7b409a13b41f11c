use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ewald_cli::commands::{self, CheckArgs, Crystal, Suite};
use ewald_cli::RunConfig;
use ewald_core::model::ModelMode;

#[derive(Parser)]
#[command(
    name = "ewald-mp",
    version,
    about = "Ewald message passing and classical Ewald oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CrystalArg {
    Nacl,
    Cscl,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    SfEquivalence,
    Gradcheck,
    Identity,
    Invariance,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Ewald,
}

#[derive(Subcommand)]
enum Command {
    /// Madelung constant from the Ewald and the direct lattice sums.
    Madelung {
        #[arg(long)]
        crystal: CrystalArg,
        #[command(flatten)]
        common: Common,
    },
    /// Run a verification suite and print a JSON report.
    Check {
        #[arg(long)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        nk: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes `checkpoint.txt` and `metrics.csv`.
    Fit {
        /// Structure file with an `Energy` per frame; the synthetic dataset
        /// of the config is generated when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        mode: Option<ModeArg>,
        #[arg(long, default_value = "fit-output")]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Time the long-range block over structure sizes.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "64,256,1024,4096")]
        sizes: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the synthetic charged dataset and its CSV sidecar.
    MakeDataset {
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn config(common: &Common) -> Result<RunConfig, Failure> {
    RunConfig::load(common.config.as_deref(), &common.overrides).map_err(Failure::Usage)
}

fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Madelung { crystal, common } => {
            let cfg = config(&common)?;
            let crystal = match crystal {
                CrystalArg::Nacl => Crystal::Nacl,
                CrystalArg::Cscl => Crystal::Cscl,
            };
            let report = commands::madelung(&cfg, crystal).map_err(Failure::Runtime)?;
            println!("{}", report.csv(&cfg).trim_end());
            eprintln!(
                "Madelung constant ({}): {:.10}",
                report.crystal, report.ewald
            );
            Ok(true)
        }
        Command::Check {
            suite,
            n,
            nk,
            seed,
            common,
        } => {
            let cfg = config(&common)?;
            let suite = match suite {
                SuiteArg::SfEquivalence => Suite::SfEquivalence,
                SuiteArg::Gradcheck => Suite::Gradcheck,
                SuiteArg::Identity => Suite::Identity,
                SuiteArg::Invariance => Suite::Invariance,
            };
            let report = commands::check(&cfg, suite, CheckArgs { n, nk, seed })
                .map_err(Failure::Runtime)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.into()))?
            );
            Ok(report.pass)
        }
        Command::Fit {
            dataset,
            mode,
            output,
            common,
        } => {
            let mut cfg = config(&common)?;
            if let Some(m) = mode {
                cfg.model.mode = match m {
                    ModeArg::Baseline => ModelMode::Baseline,
                    ModeArg::Ewald => ModelMode::Ewald,
                };
            }
            let inner = || -> Result<()> {
                let (structures, energies) = commands::load_dataset(&cfg, dataset.as_deref())?;
                let result = commands::fit(&cfg, &structures, &energies)?;
                std::fs::create_dir_all(&output)
                    .with_context(|| format!("creating {}", output.display()))?;
                std::fs::write(output.join("checkpoint.txt"), &result.checkpoint)?;
                std::fs::write(output.join("metrics.csv"), &result.metrics_csv)?;
                let o = &result.outcome;
                print!("{}", cfg.header());
                println!("mode,best_epoch,best_val_mae,dropped_species");
                println!(
                    "{},{},{:e},{}",
                    cfg.model.mode.name(),
                    o.best_epoch,
                    o.best_val_mae,
                    o.dropped_species.join(" ")
                );
                Ok(())
            };
            inner().map_err(Failure::Runtime)?;
            Ok(true)
        }
        Command::Bench { sizes, common } => {
            let cfg = config(&common)?;
            let report = commands::bench(&cfg, &sizes).map_err(Failure::Runtime)?;
            print!("{}", report.csv(&cfg));
            eprintln!("fitted scaling exponent: {:.3}", report.exponent);
            Ok(true)
        }
        Command::MakeDataset { output, common } => {
            let cfg = config(&common)?;
            let inner = || -> Result<()> {
                let (frames, csv) = commands::make_dataset(&cfg)?;
                std::fs::write(&output, frames)
                    .with_context(|| format!("writing {}", output.display()))?;
                let sidecar = output.with_extension("csv");
                std::fs::write(&sidecar, csv)?;
                println!("wrote {} and {}", output.display(), sidecar.display());
                Ok(())
            };
            inner().map_err(Failure::Runtime)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
