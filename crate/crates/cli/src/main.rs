use std::process::ExitCode;

use clap::{Parser, Subcommand};
use posekit_cli::commands::{augment, compare, eval, fit, render, synth};
use posekit_cli::exit_code;

/// Template-based 2D pose fitting and evaluation.
///
/// Exit codes: 0 success, 2 bad input, 3 numeric failure, 4 misaligned data.
#[derive(Parser, Debug)]
#[command(name = "posekit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a template's part and composite heatmaps as PFM files.
    Render(render::RenderArgs),
    /// Generate a synthetic sequence of targets with ground truth.
    Synth(synth::SynthArgs),
    /// Fit transforms to a directory of target heatmaps.
    Fit(fit::FitArgs),
    /// Score predictions against ground truth.
    Eval(eval::EvalArgs),
    /// Show an eval report next to published reference numbers.
    Compare(compare::CompareArgs),
    /// Flip a seeded fraction of annotations.
    Augment(augment::AugmentArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Render(a) => render::run(a),
        Command::Synth(a) => synth::run(a),
        Command::Fit(a) => fit::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Compare(a) => compare::run(a),
        Command::Augment(a) => augment::run(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
