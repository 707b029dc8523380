//! `framewise`: direct, generate, lift and score short videos from a
//! single prompt.
//!
//! Exit codes: 0 success, 1 usage, 2 runtime failure, 3 network failure.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::EXIT_USAGE;

#[derive(Debug, Parser)]
#[command(name = "framewise", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Expand a prompt into per-frame prompts (JSON)
    Direct(commands::DirectArgs),
    /// Run the full pipeline and write frames, GIF and manifest
    Generate(commands::GenerateArgs),
    /// Double frames and frame rate of a prompt set
    LiftFps(commands::LiftArgs),
    /// Summarize a score table or score a generated run
    Eval(commands::EvalArgs),
    /// Score the same prompts under several attention modes (CSV)
    CompareAttention(commands::CompareArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Direct(args) => commands::direct(args),
        Command::Generate(args) => commands::generate(args),
        Command::LiftFps(args) => commands::lift(args),
        Command::Eval(args) => commands::eval(args),
        Command::CompareAttention(args) => commands::compare_attention(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
