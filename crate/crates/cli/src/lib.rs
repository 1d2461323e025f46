//! The `lvg` command line: quote checks, feasible prices, calibration,
//! PDDE pricing, implied volatilities, coarsening, Monte Carlo checks and
//! plot data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lvg_core::market_data::BoundsPolicy;
use lvg_core::pdde_pricer::{PddeError, DEFAULT_GRID_NODES};
use lvg_core::smile_interp::SmileError;
use lvg_core::surface::SurfaceError;

mod commands;
mod plot;
pub mod table;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lvg", version, about = "Local variance gamma calibration and pricing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report strike structure, bounds and strict admissibility of quote mids
    Check(CheckArgs),
    /// Turn bid/ask quotes into strictly admissible exact prices
    Feasify(FeasifyArgs),
    /// Calibrate a model to quotes or exact prices
    Calibrate(CalibrateArgs),
    /// Price European payoffs under a model with the PDDE solver
    Price(PriceArgs),
    /// Black-Scholes implied volatilities of quotes or `price` output
    Iv(IvArgs),
    /// Replace each slice coefficient by its average on equal bins
    Coarsen(CoarsenArgs),
    /// Compare first-maturity model prices with Monte Carlo
    McCheck(McCheckArgs),
    /// Write price, implied-volatility and local-variance curves (CSV and SVG)
    PlotData(PlotArgs),
}

#[derive(Debug, Args)]
pub struct MarketArgs {
    /// Quotes CSV with header maturity_days,strike,bid,ask,volume
    #[arg(long)]
    pub quotes: PathBuf,
    /// Spot level of the underlying
    #[arg(long)]
    pub spot: f64,
    /// Zero-rate curve CSV with header tenor_years,rate
    #[arg(long)]
    pub rates: Option<PathBuf>,
    /// Dividend-yield curve CSV with header tenor_years,rate
    #[arg(long)]
    pub dividends: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeasibilityArgs {
    /// Bounds per maturity: fixed:L,U or widen:F
    #[arg(long, default_value = "widen:1.5")]
    pub bounds: BoundsPolicy,
    /// Admissibility margin (default 1e-4 times spot)
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SmileArgs {
    /// Shared exponent z; defaults to sqrt(2/T1)
    #[arg(long, conflicts_with = "tstar")]
    pub z: Option<f64>,
    /// Characteristic time t* in years, z = sqrt(2/t*)
    #[arg(long)]
    pub tstar: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub delta1: f64,
    #[arg(long, default_value_t = 0.5)]
    pub delta2: f64,
    #[arg(long, default_value_t = 0.5)]
    pub delta3: f64,
    #[arg(long, default_value_t = 0.5)]
    pub delta4: f64,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    /// Bounds per maturity: fixed:L,U or widen:F
    #[arg(long, default_value = "widen:1.5")]
    pub bounds: BoundsPolicy,
    /// Required slack of every inequality
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct FeasifyArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[command(flatten)]
    pub feasibility: FeasibilityArgs,
    /// Output CSV of exact prices (bid = ask)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[command(flatten)]
    pub feasibility: FeasibilityArgs,
    #[command(flatten)]
    pub smile: SmileArgs,
    /// Output model JSON
    #[arg(long)]
    pub out: PathBuf,
    /// Knot/coefficient CSV (default: next to the model, `.knots.csv`)
    #[arg(long)]
    pub knots: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Payoff {
    Call,
    Put,
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    /// Model JSON written by `calibrate`
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "call")]
    pub payoff: Payoff,
    /// Strikes, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub strike: Vec<f64>,
    /// Interior grid nodes
    #[arg(long, default_value_t = DEFAULT_GRID_NODES)]
    pub grid_n: usize,
    /// Output CSV (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IvArgs {
    /// Quotes CSV; mids are inverted
    #[arg(long, conflicts_with = "prices", requires = "spot")]
    pub quotes: Option<PathBuf>,
    #[arg(long)]
    pub spot: Option<f64>,
    /// Output of `price`
    #[arg(long, required_unless_present = "quotes")]
    pub prices: Option<PathBuf>,
    /// Output CSV (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoarsenArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Equal bins per slice
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct McCheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Strikes, comma separated (default: the spot)
    #[arg(long, value_delimiter = ',')]
    pub strike: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = lvg_core::gamma_mc::DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output CSV (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory for curves.csv and curves.svg
    #[arg(long)]
    pub out: PathBuf,
    /// Strike range LO,HI (default: 10% either side of the spot)
    #[arg(long, value_name = "LO,HI", value_delimiter = ',')]
    pub range: Vec<f64>,
    /// Points per curve
    #[arg(long, default_value_t = 201)]
    pub points: usize,
}

/// Marks a failure of an internal guarantee rather than of the input data.
#[derive(Debug)]
pub struct ContractViolation(pub String);

impl std::fmt::Display for ContractViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "contract violation: {}", self.0)
    }
}

impl std::error::Error for ContractViolation {}

fn smile_is_internal(e: &SmileError) -> bool {
    matches!(e, SmileError::Contract(_) | SmileError::MatchFailure { .. } | SmileError::MonotonicityFailure { .. })
}

/// 2 when any cause is a broken internal guarantee, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ContractViolation>().is_some() {
            return EXIT_INTERNAL;
        }
        if let Some(e) = cause.downcast_ref::<SmileError>() {
            if smile_is_internal(e) {
                return EXIT_INTERNAL;
            }
        }
        if let Some(SurfaceError::Smile(e)) = cause.downcast_ref::<SurfaceError>() {
            if smile_is_internal(e) {
                return EXIT_INTERNAL;
            }
        }
        if let Some(PddeError::SingularSystem { .. }) = cause.downcast_ref::<PddeError>() {
            return EXIT_INTERNAL;
        }
    }
    EXIT_DATA
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Usage errors exit with 1.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_DATA } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
