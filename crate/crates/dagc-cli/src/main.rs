use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dagc_cli::commands::{
    cmd_ablate, cmd_build_graph, cmd_evaluate, cmd_sweep, cmd_synth, cmd_train, BuildGraphArgs,
    CliError, EvaluateArgs, SweepArgs, SynthArgs, TrainArgs,
};

/// Deep attention-guided graph clustering toolkit.
#[derive(Parser)]
#[command(name = "dagc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stochastic-block-model benchmark
    Synth(SynthArgs),
    /// Build a KNN graph from a feature matrix
    BuildGraph(BuildGraphArgs),
    /// Pretrain and jointly train, writing labels, checkpoints, and a report
    Train(TrainArgs),
    /// Score predicted labels against ground truth
    Evaluate(EvaluateArgs),
    /// Run the five cumulative component-ablation configurations
    Ablate(TrainArgs),
    /// Re-run training across a grid of one hyperparameter
    Sweep(SweepArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => cmd_synth(&args),
        Command::BuildGraph(args) => cmd_build_graph(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
