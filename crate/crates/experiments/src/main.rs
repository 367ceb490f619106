use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msp_experiments::records::{write_csv, Record};
use msp_experiments::{report, resolve_workers, runner, summary, ExperimentConfig, ExperimentKind, RunError};

#[derive(Parser)]
#[command(name = "msp", version, about = "Multi-step predictor experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the replica sweep described by a config file.
    Run(RunArgs),
    /// Print the closed-form rates or biases for the configured system.
    Theory(RunArgs),
    /// List the available experiment kinds.
    ListExperiments,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// CSV destination; overrides `output` in the config. `-` writes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, RunError> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.workers == Some(0) {
        return Err(RunError::config("--workers must be at least 1"));
    }
    Ok(cfg)
}

fn write_records(path: Option<&Path>, records: &[Record]) -> Result<(), RunError> {
    match path {
        Some(p) if p != Path::new("-") => {
            let mut w = BufWriter::new(File::create(p)?);
            write_csv(&mut w, records)?;
            w.flush()?;
            eprintln!("wrote {} records to {}", records.len(), p.display());
        }
        _ => write_csv(io::stdout().lock(), records)?,
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::ListExperiments => {
            for kind in ExperimentKind::ALL {
                println!("{:<24} {}", kind.as_str(), kind.description());
            }
        }
        Command::Run(args) => {
            let cfg = load(&args)?;
            let workers = resolve_workers(args.workers, &cfg);
            let records = runner::run(&cfg, workers)?;
            let out = args.out.clone().or_else(|| cfg.output.clone());
            // Keep stdout clean when it carries the CSV.
            let table = summary::format_table(&summary::summarize(&records));
            if out.as_deref().is_none_or(|p| p == Path::new("-")) {
                eprint!("{table}");
            } else {
                print!("{table}");
            }
            write_records(out.as_deref(), &records)?;
        }
        Command::Theory(args) => {
            let cfg = load(&args)?;
            let rows = report::theory_report(&cfg)?;
            match args.out.as_deref() {
                Some(p) => {
                    print!("{}", report::format_theory(&rows));
                    write_records(Some(p), &rows)?;
                }
                None => print!("{}", report::format_theory(&rows)),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
