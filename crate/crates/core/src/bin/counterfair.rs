use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use counterfair::pipeline::{self, AuditCommandOptions, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "counterfair",
    version,
    about = "Counterfactual imputation for under-served users in graph collaborative filtering"
)]
struct Cli {
    /// TOML run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides every seed in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Audit worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Reuse journaled counterfactual runs from an interrupted audit.
    #[arg(long, global = true)]
    resume: bool,
    /// Retrain every candidate from scratch instead of fine-tuning.
    #[arg(long, global = true)]
    full_retrain_per_candidate: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest, k-core filter and split the dataset.
    Prep,
    /// Train the baseline and evaluate it on the held-out split.
    TrainBaseline,
    /// Stage one: counterfactual runs over probable candidates.
    Audit,
    /// Stage two: commit selected imputations and retrain.
    Mitigate,
    /// Compare imputation with and without the counterfactual audit.
    Ablation,
    /// Print all reports for the configuration.
    Report {
        /// Print the default configuration instead.
        #[arg(long)]
        defaults: bool,
    },
}

fn run(cli: Cli) -> counterfair::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(d) = cli.output_dir {
        cfg.output_dir = d;
    }
    if cli.full_retrain_per_candidate {
        cfg.selection.full_retrain = true;
    }
    let audit_opts = AuditCommandOptions { resume: cli.resume };
    match cli.command {
        Command::Prep => {
            let (_, report) = pipeline::cmd_prep(&cfg)?;
            print!("{}", report.tsv());
        }
        Command::TrainBaseline => {
            let (_, report) = pipeline::cmd_train_baseline(&cfg)?;
            print!("{}", report.tsv());
        }
        Command::Audit => {
            let result = pipeline::cmd_audit(&cfg, audit_opts)?;
            println!(
                "probable_count\t{}\nfinal_count\t{}",
                result.probable_count, result.final_count
            );
        }
        Command::Mitigate => {
            let (_, report) = pipeline::cmd_mitigate(&cfg)?;
            print!("{}", report.tsv());
        }
        Command::Ablation => {
            let report = pipeline::cmd_ablation(&cfg, audit_opts)?;
            print!("{}", report.tsv());
        }
        Command::Report { defaults } => {
            if defaults {
                print!("{}", pipeline::default_config_reference());
            } else {
                print!("{}", pipeline::cmd_report(&cfg)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
