use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kiw_core::runner::{load_config, output_dir, run, Command, RunError};

/// Pathwise verification of stochastic k-form transport.
#[derive(Parser)]
#[command(name = "kiw", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Residual or duality report for a semimartingale k-form.
    KiwVerify(Args),
    /// Conservation diagnostics of advected fields.
    Advect(Args),
    /// Circulation series along an advected loop.
    Kelvin(Args),
    /// Error-versus-dt tables and fitted slopes.
    Convergence(Args),
    /// Pointwise checks: closedness, pullback identity, diamond pairing.
    Diagnostics(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`, else `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
}

fn execute(command: Command, args: Args) -> Result<(), RunError> {
    let cfg = load_config(&args.config, args.seed)?;
    let dir = output_dir(&cfg, args.out);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = args.workers {
        if k == 0 {
            return Err(RunError::Config("--workers: must be at least 1".into()));
        }
        pool = pool.num_threads(k);
    }
    let pool = pool.build().map_err(|e| RunError::Failed(e.to_string()))?;
    let manifest = pool.install(|| run(command, &cfg, &dir))?;
    println!("{} passed; wrote {} files to {}", command.name(), manifest.files.len(), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::KiwVerify(a) => (Command::KiwVerify, a),
        Cmd::Advect(a) => (Command::Advect, a),
        Cmd::Kelvin(a) => (Command::Kelvin, a),
        Cmd::Convergence(a) => (Command::Convergence, a),
        Cmd::Diagnostics(a) => (Command::Diagnostics, a),
    };
    match execute(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kiw {}: {e}", command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
