//! `mesti`: encode clips, inspect gradient attention, generate synthetic
//! data, and train or evaluate MEGANet under leave-one-subject-out.

mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::config::FileConfig;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_target(false).init();
    let result = FileConfig::load(cli.config.as_deref()).and_then(|file| match &cli.command {
        Command::Encode(a) => commands::encode::run(a, &file),
        Command::AttentionMap(a) => commands::attention::run(a, &file),
        Command::Synth(a) => commands::synth::run(a, &file),
        Command::Train(a) => commands::train::run(a, &file),
        Command::Eval(a) => commands::eval::run(a, &file),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
