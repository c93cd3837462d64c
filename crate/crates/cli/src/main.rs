//! `phasesep`: config-driven CLI over the separation pipeline.
//!
//! Exit codes: 0 success, 1 internal failure, 2 bad data or missing
//! artifacts, 3 usage errors (bad flags, bad config, refused overwrite).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phasesep_core::Error;

mod config;
mod stages;

#[derive(Parser)]
#[command(name = "phasesep", version, about = "Sparse-coding singing-voice separation pipeline")]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "phasesep.toml")]
    config: PathBuf,

    /// Overwrite artifacts a previous run already produced.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads (0 = one per core); overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stem dataset under the configured dataset root.
    Synth,
    /// Split the dataset and cache mixture waveforms and sound images.
    Prepare,
    /// Measure sparsity and denoising error across the threshold grid.
    Sweep,
    /// Train one coding dictionary per configured representation.
    Train,
    /// Train the vocal/accompaniment readout pair for each dictionary.
    TrainReadouts,
    /// Encode the test mixtures and write estimated stems.
    Separate,
    /// Re-encode the phase-rich stems for a second cleanup pass.
    Denoise,
    /// Score all configured conditions and write CSV + aggregate files.
    Eval,
    /// Render the aggregate scores as a table.
    Report,
}

fn run(cli: &Cli) -> phasesep_core::Result<()> {
    let cfg = config::ResolvedConfig::load(&cli.config, cli.workers)?;
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global();
    match cli.command {
        Command::Synth => stages::synth(&cfg, cli.force),
        Command::Prepare => stages::prepare(&cfg, cli.force),
        Command::Sweep => stages::sweep(&cfg, cli.force),
        Command::Train => stages::train(&cfg, cli.force),
        Command::TrainReadouts => stages::train_readouts_stage(&cfg, cli.force),
        Command::Separate => stages::separate(&cfg, cli.force),
        Command::Denoise => stages::denoise(&cfg, cli.force),
        Command::Eval => stages::eval(&cfg, cli.force),
        Command::Report => stages::report(&cfg, cli.force),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Error::Usage(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Ok(Err(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(_) => {
            eprintln!("error: internal failure (panic)");
            ExitCode::from(1)
        }
    }
}
