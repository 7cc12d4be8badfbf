use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diffbal::gramian::{DEFAULT_PD_THRESHOLD, DEFAULT_PERTURBATION};
use diffbal::symmetry::DEFAULT_SYMMETRY_TOLERANCE;
use diffbal::Scheme;

#[derive(Debug, Parser)]
#[command(
    name = "diffbal",
    version,
    about = "Empirical differential balanced truncation along a trajectory"
)]
pub struct Cli {
    /// Directory receiving artifacts and the run manifest
    #[arg(long, global = true, env = "DIFFBAL_OUT", default_value = "out")]
    pub out: PathBuf,

    /// Worker threads; 1 runs every stage sequentially
    #[arg(long, global = true, env = "DIFFBAL_THREADS")]
    pub threads: Option<usize>,

    /// Seed for `--x0 random:<scale>`
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the base trajectory
    Simulate(SimulateArgs),
    /// Differential Gramian along the base trajectory
    Gramian(GramianArgs),
    /// Balancing transform from a Gramian pair, or eigenbasis of one Gramian
    Balance(BalanceArgs),
    /// Truncate with a stored transform and simulate the reduced model
    Reduce(ReduceArgs),
    /// Output error between two trajectory CSVs
    Compare(CompareArgs),
    /// Positive-definiteness and symmetry probes
    #[command(subcommand)]
    Check(CheckCommand),
    /// Re-run a command from its manifest and verify the artifact hashes
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Gramian(_) => "gramian",
            Command::Balance(_) => "balance",
            Command::Reduce(_) => "reduce",
            Command::Compare(_) => "compare",
            Command::Check(CheckCommand::Pd(_)) => "check-pd",
            Command::Check(CheckCommand::Symmetry(_)) => "check-symmetry",
            Command::Replay(_) => "replay",
        }
    }
}

/// Model, grid, initial state, input and scheme of the base trajectory.
#[derive(Debug, Clone, Args)]
pub struct BaseArgs {
    /// `rl:<n>` or a model JSON file
    #[arg(long)]
    pub model: String,

    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub t0: f64,

    #[arg(long, allow_hyphen_values = true)]
    pub tf: f64,

    #[arg(long)]
    pub dt: f64,

    /// `zeros`, a comma list, a file of numbers, or `random:<scale>`
    #[arg(long, default_value = "zeros", allow_hyphen_values = true)]
    pub x0: String,

    /// `zero` or one expression of t per channel separated by `;`.
    /// Defaults to the model's own inputs, else zero.
    #[arg(long, allow_hyphen_values = true)]
    pub input: Option<String>,

    #[arg(long, default_value = "rk4")]
    pub scheme: Scheme,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub base: BaseArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Reach,
    Obs,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Exact,
    Frechet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImpulseArg {
    StateJump,
    FinitePulse,
}

#[derive(Debug, Args)]
pub struct GramianArgs {
    #[command(flatten)]
    pub base: BaseArgs,

    #[arg(long, value_enum)]
    pub kind: KindArg,

    #[arg(long, value_enum, default_value_t = MethodArg::Exact)]
    pub method: MethodArg,

    /// Perturbation size of the trajectory-only route
    #[arg(long, default_value_t = DEFAULT_PERTURBATION)]
    pub s: f64,

    /// Symmetry matrix for `--kind dual`: `identity` or a CSV file
    #[arg(long = "S", default_value = "identity")]
    pub s_matrix: String,

    /// Certificate tolerance for `--kind dual`
    #[arg(long, default_value_t = DEFAULT_SYMMETRY_TOLERANCE)]
    pub tau: f64,

    /// Interval start, defaults to t0
    #[arg(long, allow_hyphen_values = true)]
    pub t1: Option<f64>,

    /// Interval end, defaults to tf
    #[arg(long, allow_hyphen_values = true)]
    pub t2: Option<f64>,

    #[arg(long, value_enum, default_value_t = ImpulseArg::StateJump)]
    pub impulse: ImpulseArg,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    /// Reachability Gramian CSV (JSON sidecar alongside)
    #[arg(long, required_unless_present = "symmetric", conflicts_with = "symmetric")]
    pub wr: Option<PathBuf>,

    /// Observability Gramian CSV
    #[arg(long, required_unless_present = "symmetric", conflicts_with = "symmetric")]
    pub wo: Option<PathBuf>,

    /// Use the eigenbasis of the single Gramian given by `--w`
    #[arg(long, requires = "w")]
    pub symmetric: bool,

    #[arg(long, requires = "symmetric")]
    pub w: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[command(flatten)]
    pub base: BaseArgs,

    /// Directory holding T.csv, Tinv.csv and balancing.json
    #[arg(long)]
    pub transform: PathBuf,

    #[arg(long)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub full: PathBuf,

    #[arg(long)]
    pub reduced: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum CheckCommand {
    /// Positive-definiteness on a dyadic sweep of subintervals
    Pd(PdArgs),
    /// Variational symmetry certificate for a matrix S
    Symmetry(SymmetryArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PdKindArg {
    Reach,
    Obs,
}

#[derive(Debug, Args)]
pub struct PdArgs {
    #[command(flatten)]
    pub base: BaseArgs,

    #[arg(long, value_enum, default_value_t = PdKindArg::Reach)]
    pub kind: PdKindArg,

    #[arg(long, default_value_t = 8)]
    pub subintervals: usize,

    /// Relative threshold on λ_min / λ_max
    #[arg(long, default_value_t = DEFAULT_PD_THRESHOLD)]
    pub tau: f64,
}

#[derive(Debug, Args)]
pub struct SymmetryArgs {
    #[command(flatten)]
    pub base: BaseArgs,

    #[arg(long = "S", default_value = "identity")]
    pub s_matrix: String,

    #[arg(long, default_value_t = DEFAULT_SYMMETRY_TOLERANCE)]
    pub tau: f64,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    /// Write the replayed artifacts here instead of the recorded directory
    #[arg(long)]
    pub into: Option<PathBuf>,
}
