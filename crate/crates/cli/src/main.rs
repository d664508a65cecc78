//! `efr` — entity-focused passage retrieval pipelines.
//!
//! Subcommands compose through artifacts on disk: `gen-synth` writes a
//! corpus and query set, `index` builds the sparse and dense indexes,
//! `mine` scores entities and emits training pairs, `train` fits the
//! dual-tower scorer, `retrieve` produces TREC run files, and `eval` /
//! `sweep-lambda` score them.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "efr", version, about = "Entity-focused passage retrieval pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key (repeatable); overrides win over the file.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Run file(s) to evaluate side by side; defaults to the config's
    /// run_file.
    #[arg(long = "run", value_name = "FILE")]
    runs: Vec<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Comma-separated reranking weights to evaluate.
    #[arg(long, default_value = "0,0.25,0.5,1,2,4")]
    lambdas: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic corpus and query set.
    GenSynth(CommonArgs),
    /// Build and persist the sparse and dense indexes.
    Index(CommonArgs),
    /// Score entity candidates and build the training set.
    Mine(CommonArgs),
    /// Train the dual-tower scorer.
    Train(CommonArgs),
    /// Retrieve with MIPS and rerank with the entity-focused score.
    Retrieve(CommonArgs),
    /// Evaluate run files: MRR@k, P@k, oracle-entity recall.
    Eval(EvalArgs),
    /// Evaluate a list of reranking weights on one checkpoint.
    SweepLambda(SweepArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynth(args) => commands::gen_synth::run(&args.config, &args.set),
        Command::Index(args) => commands::index::run(&args.config, &args.set),
        Command::Mine(args) => commands::mine::run(&args.config, &args.set),
        Command::Train(args) => commands::train::run(&args.config, &args.set),
        Command::Retrieve(args) => commands::retrieve::run(&args.config, &args.set),
        Command::Eval(args) => commands::eval::run(&args.common.config, &args.common.set, &args.runs),
        Command::SweepLambda(args) => {
            commands::sweep::run(&args.common.config, &args.common.set, &args.lambdas)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
