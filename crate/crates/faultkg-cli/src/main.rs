use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use faultkg::pipeline::{self, PipelineConfig};
use faultkg::Error;

#[derive(Parser)]
#[command(name = "faultkg", about = "Transformer fault prediction over a similarity graph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic records CSV.
    Generate(ConfigArgs),
    /// Train everything and score the holdout set.
    Run(ConfigArgs),
    /// Meta-train the few-shot relation model and rank tails.
    Meta(ConfigArgs),
    /// Score a records file against a previous run's models.
    Predict {
        /// Directory holding gbdt.json, kg.json, and historical.csv.
        #[arg(long)]
        model_dir: PathBuf,
        /// Records CSV to score.
        #[arg(long)]
        records: PathBuf,
        /// Failure-rate cutoff for the fault verdict.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Where predict.csv is written.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Summarize a stored report.json.
    Report {
        /// Directory holding report.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Argument(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

/// Config problems exit 2 regardless of which error variant surfaced them.
fn run_config_command(args: &ConfigArgs, go: impl FnOnce(&PipelineConfig) -> Result<(), Error>) -> ExitCode {
    let config = match args.resolve().and_then(|c| c.validate().map(|_| c)) {
        Ok(config) => config,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(2);
        }
    };
    match go(&config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Generate(args) => run_config_command(&args, |config| {
            let records = pipeline::run_generate(config)?;
            println!(
                "wrote {} records to {}",
                records.len(),
                config.out_dir.join("records.csv").display()
            );
            Ok(())
        }),
        Command::Run(args) => run_config_command(&args, |config| {
            let report = pipeline::run_pipeline(config)?;
            print!("{}", pipeline::report_summary(&config.out_dir)?);
            println!("finished in {:.2}s, artifacts in {}", report.wall_clock_seconds, config.out_dir.display());
            Ok(())
        }),
        Command::Meta(args) => run_config_command(&args, |config| {
            let metrics = pipeline::run_meta(config)?;
            println!(
                "tail ranking: hits@1 {:.4} | hits@5 {:.4} | mrr {:.4}",
                metrics.hits1, metrics.hits5, metrics.mrr
            );
            println!("artifacts in {}", config.out_dir.display());
            Ok(())
        }),
        Command::Predict {
            model_dir,
            records,
            threshold,
            out,
        } => {
            match pipeline::run_predict(&model_dir, &records, threshold, &out) {
                Ok(report) => {
                    let fault = report
                        .rows
                        .iter()
                        .filter(|r| r.verdict == faultkg::records::Label::Fault)
                        .count();
                    println!(
                        "scored {} records: {} fault / {} stable, table in {}",
                        report.rows.len(),
                        fault,
                        report.rows.len() - fault,
                        out.join("predict.csv").display()
                    );
                    ExitCode::SUCCESS
                }
                Err(err) => {
                    eprintln!("error: {err}");
                    ExitCode::from(exit_code_for(&err))
                }
            }
        }
        Command::Report { out } => match pipeline::report_summary(&out) {
            Ok(summary) => {
                print!("{summary}");
                ExitCode::SUCCESS
            }
            Err(err) => {
                eprintln!("error: {err}");
                ExitCode::from(exit_code_for(&err))
            }
        },
    }
}
