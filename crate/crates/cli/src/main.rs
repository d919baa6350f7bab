use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use pbir_cli::Command;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// Rasterize the phantom (HU).
    Phantom,
    /// Simulate counts, line integrals and weights.
    Simulate,
    /// Reconstruct with FBP, OS-SQS or ADMM.
    Recon,
    /// Compute a regularization path (ROG or DOG).
    Path,
    /// Per-frame RMSD / MAD against reference solves.
    Metrics,
    /// Noise power spectra of path frames over several seeds.
    Nps,
}

#[derive(Debug, Parser)]
#[command(name = "pbir", version, about = "PWLS CT reconstruction and regularization path seeking")]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `solver.beta=0.01`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Reject inputs written under a different config hash.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::Phantom => Command::Phantom,
        Cmd::Simulate => Command::Simulate,
        Cmd::Recon => Command::Recon,
        Cmd::Path => Command::Path,
        Cmd::Metrics => Command::Metrics,
        Cmd::Nps => Command::Nps,
    };
    match pbir_cli::run(command, &args.config, &args.overrides, args.force, args.strict) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pbir: {}", e.one_line());
            ExitCode::FAILURE
        }
    }
}
