use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

mod config;
mod run;

use config::Overrides;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or input files.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Desk-scale drone mapping simulator with a WebSocket bridge for operator consoles.
///
/// Every simulator flag can also be set with a `VB_` variable, e.g. `VB_PORT=9000`.
/// Precedence: flag, then environment, then `--config`, then built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "voxbridge", version)]
struct Cli {
    /// MissionConfig document (YAML or JSON).
    #[arg(long, global = true, env = "VB_CONFIG")]
    config: Option<PathBuf>,
    /// Log verbosity; repeat for more. RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the simulator headless on a script and print the mission summary.
    Sim {
        #[command(flatten)]
        overrides: Overrides,
        /// Write the final occupancy snapshot here.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Serve a live simulator to consoles; targets come from clients. Runs until Ctrl-C.
    Bridge {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Simulator plus bridge driven by a command script.
    Mission {
        #[command(flatten)]
        overrides: Overrides,
        /// Write the final occupancy snapshot here.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Hold the start until this many clients subscribe to /odometry.
        #[arg(long, default_value_t = 0)]
        wait_clients: usize,
        /// Keep serving after the script completes, until Ctrl-C.
        #[arg(long)]
        linger: bool,
    },
    /// Composition error, completion time and command count of a session log.
    Metrics {
        session: PathBuf,
        /// Designated task positions (JSON).
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Both)]
        format: ReportFormat,
    },
    /// Re-emit a session log on the bridge topics.
    Replay {
        session: PathBuf,
        /// Playback speed factor; `inf` sends everything at once.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, env = "VB_PORT", default_value_t = 9090)]
        port: u16,
        #[arg(long, env = "VB_BIND", default_value = "127.0.0.1")]
        bind: String,
        /// Hold playback until this many clients are connected.
        #[arg(long, default_value_t = 0)]
        wait_clients: usize,
    },
    /// Convert an occupancy snapshot into a PLY surface mesh.
    VoxelMesh {
        snapshot: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Height range for the vertex color gradient; defaults to the voxel extent.
        #[arg(long)]
        z_min: Option<f64>,
        #[arg(long)]
        z_max: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
    Both,
}

fn init_tracing(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Sim { overrides, snapshot } => run::sim(config::resolve(config, &overrides)?, snapshot.as_deref()),
        Command::Bridge { overrides } => run::bridge(config::resolve(config, &overrides)?),
        Command::Mission {
            overrides,
            snapshot,
            wait_clients,
            linger,
        } => run::mission(config::resolve(config, &overrides)?, snapshot.as_deref(), wait_clients, linger),
        Command::Metrics { session, tasks, format } => run::metrics(&session, tasks.as_deref(), format),
        Command::Replay {
            session,
            speed,
            port,
            bind,
            wait_clients,
        } => run::replay(&session, speed, &bind, port, wait_clients),
        Command::VoxelMesh {
            snapshot,
            output,
            z_min,
            z_max,
        } => run::voxel_mesh(&snapshot, &output, z_min, z_max),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_tracing(cli.verbose);
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
