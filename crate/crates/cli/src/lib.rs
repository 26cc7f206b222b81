//! `polybranch` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 runtime or
//! statistical failure.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

pub mod commands;
pub mod output;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<polybranch::FptError> for CliError {
    fn from(e: polybranch::FptError) -> Self {
        match e {
            polybranch::FptError::DegenerateEnsemble { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<polybranch::ModelError> for CliError {
    fn from(e: polybranch::ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<polybranch::TheoryError> for CliError {
    fn from(e: polybranch::TheoryError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<polybranch::estimators::EstimatorError> for CliError {
    fn from(e: polybranch::estimators::EstimatorError) -> Self {
        use polybranch::estimators::EstimatorError as E;
        match e {
            E::Io(_) | E::InvalidInput(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<polybranch::netgraph::NetError> for CliError {
    fn from(e: polybranch::netgraph::NetError) -> Self {
        use polybranch::netgraph::NetError as E;
        match e {
            E::NoConnectedPairs => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<polybranch::fitting::FitError> for CliError {
    fn from(e: polybranch::fitting::FitError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "polybranch", version, about = "First passage times of branching processes and polymer-network shortest paths")]
pub struct Cli {
    /// Worker threads; results do not depend on this [default: all cores]
    #[arg(long, global = true, env = "POLYBRANCH_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Monte Carlo first-passage-time ensembles, one per offset
    Simulate(SimulateArgs),
    /// Asymptotic predictions: growth rate, speeds, mean FPT, critical stretch
    Theory(TheoryArgs),
    /// Branching rate, MSID table, bond correlation and scaled jump from data
    Estimate(EstimateArgs),
    /// Shortest-path distributions of a polymer network
    NetworkSp(NetworkSpArgs),
    /// Linear or log-linear fit of a mean curve
    Fit(FitArgs),
    /// Simulated versus predicted speed over a grid of branching rates
    Compare(CompareArgs),
    /// Re-run the command recorded in a manifest
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaScale {
    None,
    Msid,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    /// brw, bcrw, gbrw or bbm
    #[arg(long)]
    pub model: polybranch::ModelKind,
    /// Branching probability per step (rate per unit time for bbm)
    #[arg(long)]
    pub kappa: f64,
    /// Termination probability per step (rate per unit time for bbm)
    #[arg(long, default_value_t = 0.0)]
    pub nu: f64,
    /// Jump correlation for bcrw
    #[arg(long)]
    pub beta: Option<f64>,
    /// Match the chain MSID at round(1/kappa) bonds: jump length sqrt(MSID) for brw/bcrw, per-coordinate std sqrt(MSID/3) for gbrw
    #[arg(long, value_enum, default_value_t = SigmaScale::None)]
    pub sigma_scale: SigmaScale,
    /// Bond correlation for the closed-form MSID used by --sigma-scale msid
    #[arg(long, default_value_t = 0.2933)]
    pub alpha: f64,
    /// Chain coordinates CSV; measured MSID instead of the closed form
    #[arg(long)]
    pub msid_chains: Option<PathBuf>,
    /// Jump length (brw, bcrw), per-coordinate std (gbrw) or diffusivity (bbm); overrides --sigma-scale
    #[arg(long)]
    pub jump_scale: Option<f64>,
    /// Time step for bbm
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Spatial dimension
    #[arg(long, default_value_t = 3)]
    pub d: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Target offsets along x
    #[arg(long, value_delimiter = ',', required = true)]
    pub qx: Vec<f64>,
    /// Target radius
    #[arg(long, default_value_t = 1.0)]
    pub rc: f64,
    /// Purge threshold: above this count only the nearest third survive
    #[arg(long, default_value_t = polybranch::fpt::DEFAULT_PURGE_CAP)]
    pub pc: usize,
    #[arg(long, default_value_t = 1000)]
    pub replicas: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Histogram bin width
    #[arg(long, default_value_t = polybranch::fpt::DEFAULT_BIN_WIDTH)]
    pub bins: f64,
    /// Step cutoff per replica [default: ceil(20 q_x / dt)]
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BbmRate {
    /// Rate whose population growth matches delayed branching with termination
    Implied,
    /// Use --kappa as the rate
    Direct,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TheoryArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Offset at which the finite-range speed is evaluated
    #[arg(long, default_value_t = 32.75)]
    pub qhat: f64,
    /// Offsets at which the mean FPT curve is sampled
    #[arg(long, value_delimiter = ',', default_value = "20,25,30,35,40,45,50,55,60")]
    pub qx: Vec<f64>,
    /// How bbm derives its branching rate from --kappa and --nu
    #[arg(long, value_enum, default_value_t = BbmRate::Implied)]
    pub bbm_rate: BbmRate,
    /// Output directory [default: JSON on stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EstimateArgs {
    /// One-column CSV of inter-cross-link bond counts
    #[arg(long)]
    pub distances: Option<PathBuf>,
    /// CSV chain_id,bead_index,x,y,z[,crosslink]
    #[arg(long)]
    pub chains: Option<PathBuf>,
    /// Survival-probability window of the rate fit
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.05, 0.95])]
    pub fit_range: Vec<f64>,
    /// Largest MSID window [default: min(1000, longest chain)]
    #[arg(long)]
    pub msid_max: Option<usize>,
    /// Estimate alpha for this bcrw correlation
    #[arg(long)]
    pub beta: Option<f64>,
    /// Find the correlation whose characteristic ratio is this value
    #[arg(long)]
    pub target_cinf: Option<f64>,
    /// Chain length of the alpha Monte Carlo
    #[arg(long, default_value_t = 1_000_000)]
    pub alpha_steps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Branching rate for the scaled jump [default: the estimated rate]
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Bond correlation for a closed-form scaled jump when no chains are given
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct NetworkSpArgs {
    /// Network file (#box, #nodes, #edges sections)
    #[arg(long)]
    pub network: PathBuf,
    /// Offsets along x [default: 0.25, 0.5, 0.75, 1 times L_x]
    #[arg(long, value_delimiter = ',')]
    pub qx: Vec<f64>,
    /// Source node ids [default: all]
    #[arg(long, value_delimiter = ',')]
    pub sources: Vec<u64>,
    #[arg(long, default_value_t = polybranch::fpt::DEFAULT_BIN_WIDTH)]
    pub bins: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitArgs {
    /// CSV with columns q_x,mean and optionally std,n
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub form: FormArg,
    /// Weight points by n / std^2
    #[arg(long)]
    pub weighted: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormArg {
    Linear,
    Loglinear,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: polybranch::ModelKind,
    /// Branching rates, as a list or start:stop:step
    #[arg(long, value_parser = parse_grid)]
    pub kappa_grid: Grid,
    #[arg(long, default_value_t = 0.0)]
    pub nu: f64,
    /// Offset range of the log-linear fit
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [20.0, 60.0])]
    pub qx_range: Vec<f64>,
    /// Number of evenly spaced offsets in the range
    #[arg(long, default_value_t = 5)]
    pub qx_points: usize,
    #[arg(long, default_value_t = 1000)]
    pub replicas: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = polybranch::fpt::DEFAULT_PURGE_CAP)]
    pub pc: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Jump length (brw), per-coordinate std (gbrw) or diffusivity (bbm)
    #[arg(long, default_value_t = 1.0)]
    pub jump_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid(pub Vec<f64>);

pub fn parse_grid(s: &str) -> Result<Grid, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err("range grid must be start:stop:step".into());
        }
        let (a, b, h) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(h > 0.0) || b < a {
            return Err("range grid needs step > 0 and stop >= start".into());
        }
        let n = ((b - a) / h + 1e-9).floor() as usize + 1;
        // rounded so that 0.05:0.95:0.05 yields 0.15, not 0.15000000000000002
        Ok(Grid((0..n).map(|i| ((a + i as f64 * h) * 1e12).round() / 1e12).collect()))
    } else {
        let v = s.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
        if v.is_empty() {
            return Err("empty grid".into());
        }
        Ok(Grid(v))
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run
    pub manifest: PathBuf,
    /// Output directory [default: the recorded one]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Arguments after the program name, without `--threads`, which never affects output.
fn recorded_argv(argv: &[OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv.iter().skip(1) {
        let s = a.to_string_lossy().into_owned();
        if skip {
            skip = false;
            continue;
        }
        if s == "--threads" {
            skip = true;
            continue;
        }
        if s.starts_with("--threads=") {
            continue;
        }
        out.push(s);
    }
    out
}

pub fn dispatch(command: Command, argv: &[String]) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => commands::simulate(&a, argv),
        Command::Theory(a) => commands::theory(&a, argv),
        Command::Estimate(a) => commands::estimate(&a, argv),
        Command::NetworkSp(a) => commands::network_sp(&a, argv),
        Command::Fit(a) => commands::fit(&a, argv),
        Command::Compare(a) => commands::compare(&a, argv),
        Command::Replay(a) => commands::replay(&a),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    let recorded = recorded_argv(&argv);
    match pool.install(|| dispatch(cli.command, &recorded)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = parse_grid("0.05:0.95:0.05").unwrap().0;
        assert_eq!(g.len(), 19);
        assert_eq!(g[2], 0.15);
        assert_eq!(g[18], 0.95);
        assert_eq!(parse_grid("0.2").unwrap().0, vec![0.2]);
        assert_eq!(parse_grid("0.1,0.3").unwrap().0, vec![0.1, 0.3]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("a").is_err());
    }

    #[test]
    fn threads_not_recorded() {
        let argv: Vec<OsString> = ["polybranch", "--threads", "4", "simulate", "--threads=2", "--seed", "3"]
            .iter()
            .map(OsString::from)
            .collect();
        assert_eq!(recorded_argv(&argv), vec!["simulate", "--seed", "3"]);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
