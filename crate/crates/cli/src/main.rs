//! `ftn`: batch experiments for FTN pulse design.
//!
//! Units default to 2W = 1, so times are in multiples of 1/(2W). `--two-w` sets a
//! physical bandwidth instead; all time inputs and outputs are then in seconds.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ftn", version, about = "Minimum residual-ISI pulse design for faster-than-Nyquist signaling")]
struct Cli {
    /// Two-sided bandwidth 2W; time values are interpreted in 1/(2W) units scaled accordingly.
    #[arg(long, global = true, default_value_t = 1.0)]
    two_w: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a PSWF basis: basis JSON plus an eigenvalue CSV.
    Pswf(PswfArgs),
    /// Truncated root-raised-cosine pulse and its spectrum report.
    Rrc(RrcArgs),
    /// Optimize PSWF coefficients for minimum residual ISI.
    Optimize(OptimizeArgs),
    /// Residual-ISI table over a grid of intervals and equalizer depths.
    RisiSweep(SweepArgs),
    /// Monte Carlo BER of a pulse with the truncated Viterbi receiver.
    Ber(BerArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PswfArgs {
    /// Time-bandwidth product c = 2 Ts W.
    #[arg(long)]
    pub c: f64,
    /// Number of functions.
    #[arg(long, default_value_t = 36)]
    pub n: usize,
    /// Basis JSON path; the CSV goes next to it.
    #[arg(long, default_value = "pswf_basis.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RrcArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub beta: f64,
    /// Truncation window.
    #[arg(long, default_value_t = 15.0)]
    pub ts: f64,
    #[arg(long, default_value = "rrc_pulse.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct OptimizeArgs {
    /// Modulation interval T.
    #[arg(long = "t", alias = "T")]
    pub t_mod: f64,
    /// Equalizer depth L.
    #[arg(long = "l", alias = "L")]
    pub depth: usize,
    #[arg(long, default_value_t = 4.4e-4)]
    pub epsilon: f64,
    /// Basis size N.
    #[arg(long, default_value_t = 22)]
    pub n: usize,
    #[arg(long, default_value_t = 15.0)]
    pub ts: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
    /// Optimize odd-index coefficients too.
    #[arg(long)]
    pub full: bool,
    #[arg(long, default_value = "optimized_pulse.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Modulation intervals, comma separated.
    #[arg(long = "t-grid", value_delimiter = ',', required = true)]
    pub t_grid: Vec<f64>,
    /// Equalizer depths, comma separated.
    #[arg(long = "l", alias = "L", value_delimiter = ',', default_value = "0,1,2,4")]
    pub depths: Vec<usize>,
    /// Truncated RRC roll-offs to include.
    #[arg(long = "rrc-beta", value_delimiter = ',')]
    pub rrc_beta: Vec<f64>,
    /// Pulse JSON files to include.
    #[arg(long = "pulse")]
    pub pulses: Vec<PathBuf>,
    /// Include a pulse re-optimized for every (T, L) row.
    #[arg(long)]
    pub optimized: bool,
    /// Re-optimize over odd-index coefficients too.
    #[arg(long)]
    pub full: bool,
    #[arg(long, default_value_t = 15.0)]
    pub ts: f64,
    #[arg(long, default_value_t = 4.4e-4)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 22)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "risi_sweep.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BerArgs {
    /// Pulse JSON file.
    #[arg(long, conflicts_with = "rrc_beta")]
    pub pulse: Option<PathBuf>,
    /// Use a truncated RRC with this roll-off instead of a file.
    #[arg(long = "rrc-beta")]
    pub rrc_beta: Option<f64>,
    /// Truncation window for `--rrc-beta`.
    #[arg(long, default_value_t = 15.0)]
    pub ts: f64,
    #[arg(long = "t", alias = "T")]
    pub t_mod: f64,
    #[arg(long = "l", alias = "L")]
    pub depth: usize,
    /// E_b/N_0 points in dB, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub ebn0: Vec<f64>,
    /// Bit budget per point.
    #[arg(long, default_value_t = 10_000_000)]
    pub bits: u64,
    #[arg(long, default_value_t = 400)]
    pub max_errors: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2048)]
    pub block_len: usize,
    /// Constellation size (PAM).
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value = "ber.csv")]
    pub out: PathBuf,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("FTN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("FTN_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    if !(cli.two_w.is_finite() && cli.two_w > 0.0) {
        return Err(CliError::Usage(format!("--two-w must be positive, got {}", cli.two_w)));
    }
    let w = 0.5 * cli.two_w;
    match cli.command {
        Command::Pswf(a) => commands::pswf(&a),
        Command::Rrc(a) => commands::rrc(&a, w),
        Command::Optimize(a) => commands::optimize(&a, w),
        Command::RisiSweep(a) => commands::risi_sweep(&a, w),
        Command::Ber(a) => commands::ber(&a, w),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
