use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use condctl::{CaseId, CostSign};

mod commands;
mod output;

#[derive(Parser)]
#[command(
    name = "condctl",
    version,
    about = "Optimal control of diffusions conditioned on survival"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// TOML configuration; keys it omits keep the preset's values.
    #[arg(long, conflicts_with = "case")]
    pub config: Option<PathBuf>,
    /// Preset to start from when no configuration file is given.
    #[arg(long)]
    pub case: Option<CaseId>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial relaxation weight in (0, 1].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Fixed-point tolerance on the l2 gaps.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub cost_sign: Option<CostSign>,
    /// Keep every k-th time slice in fields.csv (default: about 100 slices).
    #[arg(long)]
    pub time_stride: Option<usize>,
    /// Keep every k-th node per axis in fields.csv (default: about 500 per axis in 1D, 80 in 2D).
    #[arg(long)]
    pub space_stride: Option<usize>,
}

#[derive(Args, Clone, Debug)]
pub struct ScaledArgs {
    /// Scaling rate; defaults to the stationary eigenvalue on the same grid.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Args, Clone, Debug)]
pub struct TurnpikeArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
    pub horizons: Vec<f64>,
}

#[derive(Args, Clone, Debug)]
pub struct McArgs {
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    /// Euler-Maruyama step.
    #[arg(long, default_value_t = 1e-4)]
    pub mc_dt: f64,
    #[arg(long, default_value_t = 10)]
    pub checkpoints: usize,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Simulate under the computed optimal feedback instead of zero drift.
    #[arg(long)]
    pub controlled: bool,
    /// Kill only when the step lands outside the domain.
    #[arg(long)]
    pub endpoint_killing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Coupled finite-horizon system.
    SolveFinite(Flat),
    /// Stationary system and principal eigenvalue.
    SolveStationary(Flat),
    /// Finite horizon via the exponentially rescaled system.
    SolveScaled {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scaled: ScaledArgs,
    },
    /// Distance to the stationary pair over several horizons.
    Turnpike {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        turnpike: TurnpikeArgs,
    },
    /// Monte Carlo check of survival and conditional law.
    McValidate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Run a preset experiment: 1, 2, 3 (2d-a), 4 (2d-b) or 5.
    Case {
        id: CaseId,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Flat {
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SolveFinite(f) => commands::solve_finite(&f.common, CaseId::One),
        Command::SolveStationary(f) => commands::solve_stationary(&f.common, CaseId::Five),
        Command::SolveScaled { common, scaled } => commands::solve_scaled(&common, &scaled),
        Command::Turnpike { common, turnpike } => commands::turnpike(&common, &turnpike),
        Command::McValidate { common, mc } => commands::mc_validate(&common, &mc),
        Command::Case { id, common } => commands::case(id, &common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.chain().any(|c| {
                matches!(
                    c.downcast_ref::<condctl::Error>(),
                    Some(condctl::Error::Config(_))
                )
            });
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
