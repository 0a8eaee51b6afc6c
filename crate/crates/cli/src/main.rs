//! `tfx`: synthesise corpora, train, evaluate and run effect models.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for data or I/O errors
//! and 3 when training hits a non-finite loss.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tfilm_fx::train::TrainError;

use commands::{DatagenArgs, EvalArgs, InspectArgs, ProcessArgs, StreamArgs, TrainArgs};

/// Invalid invocation, reported with exit status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "tfx", version, about = "Black-box modelling of fuzz and compressor effects with TFiLM networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a clean signal, process it with a reference effect and write
    /// train/val/test WAV pairs plus manifest.json.
    Datagen(DatagenArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Score checkpoints on a corpus split and write summary and windowed CSVs.
    Eval(EvalArgs),
    /// Run a model over a WAV file.
    Process(ProcessArgs),
    /// Run a model chunk by chunk and report the real-time factor.
    Stream(StreamArgs),
    /// Print parameter count and receptive field.
    Inspect(InspectArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        1
    } else if err.chain().any(|e| matches!(e.downcast_ref::<TrainError>(), Some(TrainError::NonFinite { .. }))) {
        3
    } else {
        2
    }
}

/// The error chain on one line, skipping causes already quoted by the
/// message above them.
fn message(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let part = cause.to_string();
        if !text.contains(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}

pub fn out_dir(path: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    path.ok_or_else(|| UsageError("--out is required".into()).into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Datagen(a) => commands::datagen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Process(a) => commands::process(a),
        Command::Stream(a) => commands::stream(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", message(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
