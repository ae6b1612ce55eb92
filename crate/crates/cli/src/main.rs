use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dislo_cli::{load_scenario, run, CliError, Task};

#[derive(Parser)]
#[command(name = "dislo", version, about = "Fault dislocation forward models, checks and inversions")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Single-threaded numerics.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Surface displacements at the stations.
    Forward,
    /// Least-squares patch slip from surface data.
    InvertSlip,
    /// Simplex search over rectangle parameters.
    InvertGeometry,
    /// Traction-free, transmission and closed-form checks.
    Verify,
    /// Surface-data separation of two faults.
    Uniqueness,
    /// Grid solver against the analytic forward model.
    FdCompare,
}

impl From<Command> for Task {
    fn from(c: Command) -> Self {
        match c {
            Command::Forward => Task::Forward,
            Command::InvertSlip => Task::InvertSlip,
            Command::InvertGeometry => Task::InvertGeometry,
            Command::Verify => Task::Verify,
            Command::Uniqueness => Task::Uniqueness,
            Command::FdCompare => Task::FdCompare,
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut scenario = load_scenario(path, cli.command.into())?;
    if let Some(seed) = cli.seed {
        scenario.config.seed = seed;
    }
    run(&scenario, &cli.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
