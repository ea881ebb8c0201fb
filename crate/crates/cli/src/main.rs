//! `algpaths`: command-line front end for algebroid paths, comorphism lifts,
//! holonomy and Poisson completeness probes.

mod commands;
mod error;
mod example3;
mod output;
mod poisson_cmd;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use algpaths::numkernel::Interpolation;

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "algpaths", version, about = "Lie algebroid paths, comorphism lifting and completeness probes")]
pub struct Cli {
    /// PRNG seed for sampling; overrides ALGPATHS_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Residuals of the anchor-morphism and Jacobi identities at random points.
    CheckAlgebroid(CheckAlgebroidArgs),
    /// Integrate an A-path along a time-dependent section.
    IntegratePath(IntegratePathArgs),
    /// Lift an A-path of the target through a comorphism.
    LiftPath(LiftPathArgs),
    /// Lift an A-homotopy of the target slice by slice.
    LiftHomotopy(LiftHomotopyArgs),
    /// Probe completeness of the pullback of a section.
    CompletenessProbe(ProbeArgs),
    /// Compose two comorphisms A -> B -> C.
    Compose(ComposeArgs),
    /// Transport a point around a closed base loop.
    Holonomy(HolonomyArgs),
    /// The rotation-holonomy example.
    Example3 {
        #[command(subcommand)]
        command: example3::Example3Command,
    },
    /// Poisson maps, Hamiltonian flows and cotangent lifts.
    Poisson {
        #[command(subcommand)]
        command: poisson_cmd::PoissonCommand,
    },
    /// Develop an A-path over a Lie algebra into its matrix group.
    Develop(DevelopArgs),
    /// Left logarithmic derivative of a sampled matrix path.
    Logderiv(LogderivArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArg {
    /// JSON workspace file.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
pub struct NumericArgs {
    /// Largest integration step.
    #[arg(long)]
    pub step: Option<f64>,
    /// Escape bound on |x|.
    #[arg(long)]
    pub bound: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SeedPoints {
    /// Explicit seed points, `x1,x2;y1,y2;...`.
    #[arg(long, allow_hyphen_values = true)]
    pub seeds: Option<String>,
    /// Number of random seed points when --seeds is absent.
    #[arg(long)]
    pub random_seeds: Option<usize>,
    /// Sampling radius for random seed points.
    #[arg(long, default_value_t = 2.0)]
    pub radius: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum InterpolationArg {
    Linear,
    Cubic,
}

impl From<InterpolationArg> for Interpolation {
    fn from(a: InterpolationArg) -> Self {
        match a {
            InterpolationArg::Linear => Interpolation::Linear,
            InterpolationArg::Cubic => Interpolation::Cubic,
        }
    }
}

#[derive(Args, Debug)]
pub struct CheckAlgebroidArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Algebroid to check; all of them when omitted.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct IntegratePathArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub algebroid: String,
    /// Section components in `t` and the base variables, one flag per
    /// component.
    #[arg(long = "section", required = true, allow_hyphen_values = true)]
    pub section: Vec<String>,
    /// Initial point, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    /// Grid intervals N.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Write the CSV here and print a JSON report instead.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LiftPathArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub comorphism: String,
    /// A-path CSV over the comorphism's target.
    #[arg(long)]
    pub path: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[command(flatten)]
    pub numeric: NumericArgs,
    #[arg(long, value_enum, default_value = "cubic")]
    pub interpolation: InterpolationArg,
    /// Also compare lifts across interpolation schemes and step sizes.
    #[arg(long)]
    pub uniqueness: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LiftHomotopyArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub comorphism: String,
    /// A-homotopy CSV (long form) over the comorphism's target.
    #[arg(long)]
    pub homotopy: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[command(flatten)]
    pub numeric: NumericArgs,
    #[arg(long, value_enum, default_value = "cubic")]
    pub interpolation: InterpolationArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub comorphism: String,
    /// Section of the target, one flag per component.
    #[arg(long = "section", required = true, allow_hyphen_values = true)]
    pub section: Vec<String>,
    #[command(flatten)]
    pub points: SeedPoints,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[command(flatten)]
    pub numeric: NumericArgs,
}

#[derive(Args, Debug)]
pub struct ComposeArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub first: String,
    #[arg(long)]
    pub second: String,
    /// Name given to the composite in the output.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug)]
pub struct HolonomyArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Connection or comorphism to lift through.
    #[arg(long)]
    pub comorphism: String,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    /// Closed A-path CSV over the target.
    #[arg(long, conflicts_with = "circle")]
    pub path: Option<PathBuf>,
    /// Circle loop `cx,cy,radius` in a two-dimensional base.
    #[arg(long, allow_hyphen_values = true)]
    pub circle: Option<String>,
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    pub windings: i32,
    #[arg(long)]
    pub grid: Option<usize>,
    #[command(flatten)]
    pub numeric: NumericArgs,
    /// Write the lifted path CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DevelopArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Lie algebra with a matrix basis.
    #[arg(long)]
    pub algebroid: String,
    #[arg(long)]
    pub path: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LogderivArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub algebroid: String,
    /// Matrix path CSV `t,g11,g12,...`.
    #[arg(long)]
    pub matrix_path: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flag, then `ALGPATHS_SEED`, then the built-in default.
fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("ALGPATHS_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("ALGPATHS_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(algpaths::sampling::DEFAULT_SEED),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let seed = resolve_seed(cli.seed)?;
    match cli.command {
        Command::CheckAlgebroid(a) => commands::check_algebroid(a, seed),
        Command::IntegratePath(a) => commands::integrate_path(a, seed),
        Command::LiftPath(a) => commands::lift_path(a, seed),
        Command::LiftHomotopy(a) => commands::lift_homotopy(a, seed),
        Command::CompletenessProbe(a) => commands::completeness_probe(a, seed),
        Command::Compose(a) => commands::compose(a, seed),
        Command::Holonomy(a) => commands::holonomy(a, seed),
        Command::Example3 { command } => example3::run(command, seed),
        Command::Poisson { command } => poisson_cmd::run(command, seed),
        Command::Develop(a) => commands::develop(a, seed),
        Command::Logderiv(a) => commands::logderiv(a, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let CliError::Failure { report, .. } = &e {
                if !report.is_null() {
                    output::print_json(report);
                }
            }
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
