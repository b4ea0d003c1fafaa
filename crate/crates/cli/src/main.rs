use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pcdiag::commands::{cmd_attack, cmd_diagnose, cmd_gen, cmd_train, AttackArgs, DiagnoseArgs};
use pcdiag::config::DiagnosisSection;
use pcdiag::{cmd_compare, CliError, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "pcdiag", version, about = "Diagnose point-cloud classifiers")]
struct Cli {
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into a directory.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured network and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute diagnostic metrics of a checkpoint on test clouds.
    Diagnose {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated metric names or `all`.
        #[arg(long, default_value = "all")]
        metrics: String,
        #[arg(long)]
        out: PathBuf,
        /// Diagnosis settings come from this config's `diagnosis` section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train with/without variants for every study and tabulate the change.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add the published reference values to the table.
        #[arg(long)]
        paper_refs: bool,
    },
    /// Run targeted adversarial attacks.
    Attack {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Class index, class name or `all`.
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Attack only this test cloud.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    Ok(ExperimentConfig::load(path)?.with_seed(seed))
}

fn section(config: Option<&Path>, samples: Option<usize>) -> CliResult<DiagnosisSection> {
    let mut section = match config {
        Some(p) => ExperimentConfig::load(p)?.diagnosis,
        None => DiagnosisSection::default(),
    };
    if let Some(n) = samples {
        section.samples = n;
    }
    Ok(section)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen { config, out } => {
            let manifest = cmd_gen(&load(&config, cli.seed)?, &out)?;
            println!("wrote {} clouds to {}", manifest.splits.train.len() + manifest.splits.test.len(), out.display());
        }
        Command::Train { config, out } => {
            let log = cmd_train(&load(&config, cli.seed)?, &out)?;
            if let Some(last) = log.last() {
                println!("epoch {}: train acc {:.3}, test acc {:.3}", last.epoch, last.train_acc, last.test_acc);
            }
        }
        Command::Diagnose { ckpt, data, metrics, out, config, samples } => {
            let report = cmd_diagnose(DiagnoseArgs {
                ckpt: &ckpt,
                data: &data,
                metrics: &metrics,
                out: &out,
                section: section(config.as_deref(), samples)?,
                seed: cli.seed,
            })?;
            print!("{}", report.to_csv());
        }
        Command::Compare { config, out, paper_refs } => {
            let table = cmd_compare(&load(&config, cli.seed)?, &out, paper_refs)?;
            print!("{}", table.to_csv());
        }
        Command::Attack { ckpt, data, target, out, config, sample, samples } => {
            let report = cmd_attack(AttackArgs {
                ckpt: &ckpt,
                data: &data,
                target: &target,
                out: &out,
                section: section(config.as_deref(), samples)?,
                sample,
            })?;
            println!("{} attacks, success fraction {:.3}", report.rows.len(), report.success_fraction);
        }
    }
    Ok(())
}

fn threads() -> CliResult<usize> {
    match std::env::var("PCDIAG_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::config(format!("PCDIAG_THREADS must be a positive integer, got `{v}`"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads().and_then(|n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
        run(cli)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
