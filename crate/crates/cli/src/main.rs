//! Command-line driver: train policies, evaluate checkpoints, plot training
//! curves, and render replay logs.

mod cmd_eval;
mod cmd_plot;
mod cmd_replay;
mod cmd_train;
mod svg;
mod util;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "crossway",
    version,
    about = "Curriculum-trained intersection-crossing driving policies"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy (curriculum by default, flat baseline with --no-curriculum).
    Train(cmd_train::TrainArgs),
    /// Evaluate a checkpoint over a surrounding-vehicle sweep.
    Eval(cmd_eval::EvalArgs),
    /// Render training CSVs as a smoothed reward-vs-episode SVG.
    Plot(cmd_plot::PlotArgs),
    /// Print and render a recorded episode.
    Replay(cmd_replay::ReplayArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train::run(args),
        Cmd::Eval(args) => cmd_eval::run(args),
        Cmd::Plot(args) => cmd_plot::run(args),
        Cmd::Replay(args) => cmd_replay::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
