//! Reproducible experiment pipelines for PWLS reconstruction and
//! regularization path seeking, driven by one TOML file per experiment.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

pub use error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Phantom,
    Simulate,
    Recon,
    Path,
    Metrics,
    Nps,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Phantom => "phantom",
            Command::Simulate => "simulate",
            Command::Recon => "recon",
            Command::Path => "path",
            Command::Metrics => "metrics",
            Command::Nps => "nps",
        }
    }
}

/// Load the configuration and run one command; returns the files written.
pub fn run(command: Command, config: &std::path::Path, overrides: &[String], force: bool, strict: bool) -> Result<Vec<PathBuf>> {
    let loaded = config::LoadedConfig::load(config, overrides)?;
    let mut command_line = format!("pbir {}", command.name());
    for o in overrides {
        command_line.push_str(" --override ");
        command_line.push_str(o);
    }
    let ctx = commands::Context {
        loaded,
        force,
        strict,
        command_line,
    };
    match command {
        Command::Phantom => commands::cmd_phantom(&ctx),
        Command::Simulate => commands::cmd_simulate(&ctx),
        Command::Recon => commands::cmd_recon(&ctx),
        Command::Path => commands::cmd_path(&ctx),
        Command::Metrics => commands::cmd_metrics(&ctx),
        Command::Nps => commands::cmd_nps(&ctx),
    }
}
