//! Command-line front end for interference-aware effect estimation.
//!
//! Five subcommands: `effects` (two-stage trial contrasts),
//! `infectiousness` (household contrast with sensitivity sweeps),
//! `confound-bias` (corrections for an unmeasured confounder), `gee`
//! (cluster regression with a selection-sensitivity sweep), and
//! `simulate` (synthetic data with the ground truth in the preamble).
//! Reports are TSV with `#` provenance comments; `-` means stdin or
//! stdout. Exit codes: 0 success, 2 invalid input or configuration,
//! 3 estimation failure, 64 usage.

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(name = "spillover", version, about = "Effect estimation under interference, with sensitivity analysis")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct GlobalArgs {
    /// Where to write the report ("-" for stdout).
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Significant digits in numeric cells (default 6).
    #[arg(long, global = true)]
    pub precision: Option<usize>,
    /// Seed for anything randomized: simulation draws, bootstrap.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file supplying defaults for flags; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Direct, indirect, total, and overall contrasts from a two-stage trial.
    Effects(EffectsArgs),
    /// Household infectiousness contrast, bounds, and sensitivity sweeps.
    Infectiousness(InfectiousnessArgs),
    /// Bias-corrected estimates under unmeasured cluster-level confounding.
    #[command(name = "confound-bias")]
    ConfoundBias(ConfoundBiasArgs),
    /// Cluster outcome regression with exposure terms and a selection sweep.
    Gee(GeeArgs),
    /// Draw synthetic data from a world file; truth goes in the preamble.
    #[command(subcommand)]
    Simulate(SimulateCommand),
}

#[derive(Args, Debug)]
pub struct EffectsArgs {
    /// Group-summary CSV ("-" for stdin).
    #[arg(long)]
    pub data: Option<String>,
    /// Label of the first coverage strategy.
    #[arg(long)]
    pub phi: Option<String>,
    /// Label of the comparison coverage strategy.
    #[arg(long)]
    pub psi: Option<String>,
    /// Report per 1000 persons instead of raw rates.
    #[arg(long = "per-1000")]
    pub per_1000: bool,
    /// Attach Wald intervals at this two-sided level (e.g. 0.95).
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(Args, Debug)]
pub struct InfectiousnessArgs {
    /// Household CSV ("-" for stdin).
    #[arg(long)]
    pub data: Option<String>,
    /// Grid of additive shifts ("a,b,c" or "lo:hi:n").
    #[arg(long)]
    pub theta: Option<String>,
    /// Grid of non-doomed secondary risks.
    #[arg(long)]
    pub gamma: Option<String>,
    /// Grid of log odds ratios.
    #[arg(long)]
    pub beta: Option<String>,
    /// Also report the monotonicity bounds.
    #[arg(long)]
    pub bounds: bool,
    /// Confidence interval of the crude risk difference ("lo,hi");
    /// shifted intervals are reported for theta rows.
    #[arg(long)]
    pub ci: Option<String>,
}

#[derive(Args, Debug)]
pub struct ConfoundBiasArgs {
    /// The uncorrected estimate.
    #[arg(long)]
    pub observed: Option<f64>,
    /// Its confidence interval ("lo,hi"), shifted along with the point.
    #[arg(long)]
    pub ci: Option<String>,
    /// Grid of own-confounder outcome coefficients.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Grid of neighborhood-confounder outcome coefficients.
    #[arg(long)]
    pub tau: Option<String>,
    /// Grid of own-confounder mean differences between exposures.
    #[arg(long)]
    pub du: Option<String>,
    /// Grid of neighborhood-confounder mean differences.
    #[arg(long)]
    pub dv: Option<String>,
    /// TOML spec for the general (distributional) bias form; replaces
    /// the grid flags.
    #[arg(long)]
    pub spec: Option<String>,
}

#[derive(Args, Debug)]
pub struct GeeArgs {
    /// Cluster CSV ("-" for stdin).
    #[arg(long)]
    pub data: Option<String>,
    /// Model TOML declaring the delta families (default: scaled both sides).
    #[arg(long)]
    pub model: Option<String>,
    /// Sensitivity grid "ld,ls;ld,ls;..."; must include the 0,0 row.
    #[arg(long = "gamma-grid")]
    pub gamma_grid: Option<String>,
    /// Cluster-bootstrap replicates for standard errors.
    #[arg(long)]
    pub bootstrap: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum SimulateCommand {
    /// Two-person households with a randomized index member.
    Households(SimulateArgs),
    /// A two-stage randomized trial, emitted as group summaries.
    Trial(SimulateArgs),
    /// Observational clusters (planted selection or explicit confounder).
    Clusters(SimulateArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// World TOML describing the generating process.
    #[arg(long)]
    pub world: Option<String>,
    /// How many units to draw (households, groups, or clusters).
    #[arg(long)]
    pub n: Option<usize>,
    /// Where to write the hidden-state ledger (confounded cluster
    /// worlds only).
    #[arg(long = "ledger-out")]
    pub ledger_out: Option<String>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = commands::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
