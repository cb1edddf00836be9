use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use wavefront_dcs::config::{ExperimentConfig, Overrides};
use wavefront_dcs::error::PipelineError;
use wavefront_dcs::pipeline::{run_pipeline, Mode};
use wfdcs_core::par::{with_thread_cap, ExecMode};

/// Wavefront recovery from subsampled Shack-Hartmann slopes (DS / CCS / DCS).
#[derive(Debug, Parser)]
#[command(name = "wavefront-dcs", version)]
struct Cli {
    #[arg(value_enum)]
    mode: Mode,
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Compression ratio for simulate / recover / deconvolve and the SNR sweep.
    #[arg(long)]
    ratio: Option<f64>,
    /// Measurement SNR in dB (`inf` disables noise).
    #[arg(long)]
    snr: Option<f64>,
    /// Use one lenslet subset for both slope channels.
    #[arg(long)]
    coupled_mask: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn thread_cap() -> Result<Option<usize>, PipelineError> {
    match std::env::var("WFDCS_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| PipelineError::Config(format!("WFDCS_THREADS must be a positive integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<PathBuf, PipelineError> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        ratio: cli.ratio,
        snr_db: cli.snr,
        coupled_mask: cli.coupled_mask,
        out: cli.out,
    })?;
    let threads = thread_cap()?;
    with_thread_cap(threads, || run_pipeline(&cfg, cli.mode, ExecMode::Parallel))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mode = cli.mode;
    let start = Instant::now();
    match run(cli) {
        Ok(dir) => {
            eprintln!("{mode:?} finished in {:.1?}; artifacts in {}", start.elapsed(), dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
