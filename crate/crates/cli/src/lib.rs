//! The `levyx` command line: scenario validation, limit characteristics,
//! path simulation, convergence sweeps and generator residuals.

pub mod commands;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use levyx_core::limit_model::SigmaVariant;

#[derive(Debug, Parser)]
#[command(name = "levyx", version, about = "Lévy approximation laboratory for impulsive processes with Markov switching")]
pub struct Cli {
    /// Run log to append to (default: runs.log next to the outputs).
    #[arg(long, global = true)]
    pub runs_log: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a scenario and print the condition checklist.
    Validate(ValidateArgs),
    /// Tabulate the limit triplet on a grid of u.
    Characterize(CharacterizeArgs),
    /// Simulate pre-limit or limit paths.
    Simulate(SimulateArgs),
    /// Compare pre-limit ensembles with the limit over an eps sweep.
    Converge(ConvergeArgs),
    /// Generator residual curves with correctors.
    Residual(ResidualArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Characterize(_) => "characterize",
            Command::Simulate(_) => "simulate",
            Command::Converge(_) => "converge",
            Command::Residual(_) => "residual",
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Scenario file or built-in fixture name.
    pub scenario: String,
    /// Eps grid for the residual curves.
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1,0.05")]
    pub eps: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct CharacterizeArgs {
    pub scenario: String,
    /// Grid `lo:hi:step` applied to every coordinate (default: the scenario u-box).
    #[arg(long, allow_hyphen_values = true)]
    pub u_grid: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub variant: Vec<SigmaVariant>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathKind {
    Prelimit,
    Limit,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub kind: PathKind,
    pub scenario: String,
    /// Series parameter (pre-limit only).
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub paths: usize,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    /// Number of grid intervals on [0, horizon].
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    /// σ² variant of the limit.
    #[arg(long)]
    pub variant: Option<SigmaVariant>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    pub scenario: String,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1,0.05")]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub times: Vec<f64>,
    #[arg(long)]
    pub variant: Option<SigmaVariant>,
    /// Also run the limit-against-limit self-test with this many replicates per eps.
    #[arg(long)]
    pub self_test: Option<usize>,
    /// Output directory for report.json and summary.csv.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Args)]
pub struct ResidualArgs {
    pub scenario: String,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1,0.05")]
    pub eps: Vec<f64>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub gnuplot: bool,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let printable: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    with_threads(|| commands::execute(&cli, &printable))
}

/// Runs `f` on a pool sized by `LEVYX_THREADS` when it is set.
pub fn with_threads<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let requested = std::env::var("LEVYX_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok()).filter(|&n| n > 0);
    match requested.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}
