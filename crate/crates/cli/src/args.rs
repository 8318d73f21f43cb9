use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "kslayers", version, about = "Radial steady states of -Δu + u = λe^u on the unit disk")]
pub struct Cli {
    /// Flat key=value file; command line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<String>,

    /// Directory for the output files; without it the primary table goes to stdout.
    #[arg(long, global = true)]
    pub out: Option<String>,

    /// What to print on stdout when no output directory is given.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outer {
    Dirichlet,
    Neumann,
}

impl Outer {
    pub fn mode(self) -> kslayers_core::OuterMode {
        match self {
            Outer::Dirichlet => kslayers_core::OuterMode::DirichletOne,
            Outer::Neumann => kslayers_core::OuterMode::Neumann,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Layered Green function fixed by the reflection laws.
    Green(GreenArgs),
    /// Nondegeneracy determinants over layer counts and singular strengths.
    Nondegen(NondegenArgs),
    /// Matched ansatz profile and its parameters.
    Ansatz(AnsatzArgs),
    /// Residual norms of the ansatz over a λ ladder.
    Residual(ResidualArgs),
    /// Contraction correcting the ansatz.
    Fixpoint(FixpointArgs),
    /// Direct Newton solve of the boundary value problem.
    Solve(SolveArgs),
    /// Branch continued from a radial bifurcation point.
    Branch(BranchArgs),
    /// Concentration diagnostics of a solved profile.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Green(_) => "green",
            Command::Nondegen(_) => "nondegen",
            Command::Ansatz(_) => "ansatz",
            Command::Residual(_) => "residual",
            Command::Fixpoint(_) => "fixpoint",
            Command::Solve(_) => "solve",
            Command::Branch(_) => "branch",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GreenArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub b: f64,
    #[arg(long, value_enum, default_value = "dirichlet")]
    pub outer: Outer,
}

#[derive(Debug, Args, Serialize)]
pub struct NondegenArgs {
    #[arg(long, default_value_t = 4)]
    pub kmax: usize,
    #[arg(long, value_delimiter = ',', default_value = "1e-4,1e-3,1e-2")]
    pub b_grid: Vec<f64>,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct AnsatzShape {
    /// Layer count; omitted means the origin plus boundary layer construction.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value = "dirichlet")]
    pub outer: Outer,
    #[arg(long, default_value_t = kslayers_core::ansatz::ETA_DEFAULT)]
    pub eta: f64,
    #[arg(long, default_value_t = kslayers_core::ansatz::NODES_DEFAULT)]
    pub nodes: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct AnsatzArgs {
    #[arg(long)]
    pub lambda: f64,
    #[command(flatten)]
    pub shape: AnsatzShape,
}

#[derive(Debug, Args, Serialize)]
pub struct ResidualArgs {
    /// One λ or a descending comma separated ladder.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda: Vec<f64>,
    #[command(flatten)]
    pub shape: AnsatzShape,
}

#[derive(Debug, Args, Serialize)]
pub struct FixpointArgs {
    #[arg(long)]
    pub lambda: f64,
    #[command(flatten)]
    pub shape: AnsatzShape,
    /// Ball size; defaults to four times the first iterate over ε^{1+σ}.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-13)]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Ansatz,
    Constant,
    File,
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value = "ansatz")]
    pub init: Init,
    /// Profile CSV for `--init file`.
    #[arg(long = "in")]
    pub input: Option<String>,
    /// Constant start value; defaults to the lower constant solution.
    #[arg(long)]
    pub value: Option<f64>,
    #[command(flatten)]
    pub shape: AnsatzShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn as_i32(self) -> i32 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

pub fn parse_sign(s: &str) -> Result<Sign, String> {
    match s {
        "+" | "plus" => Ok(Sign::Plus),
        "-" | "minus" => Ok(Sign::Minus),
        _ => Err(format!("sign must be + or -, got {s}")),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct BranchArgs {
    /// Index i ≥ 2 of the radial eigenvalue the branch leaves from.
    #[arg(long)]
    pub i: usize,
    #[arg(long, value_parser = parse_sign, allow_hyphen_values = true, default_value = "+")]
    pub sign: Sign,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = kslayers_core::bvp::BRANCH_NODES)]
    pub nodes: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Profile CSV written by `solve`.
    #[arg(long = "in")]
    pub input: String,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "dirichlet")]
    pub outer: Outer,
    /// Overrides the λ recorded in the profile header.
    #[arg(long)]
    pub lambda: Option<f64>,
}
