//! `semmap`: batch episodes, offline map building and queries, benchmarks
//! and the live control service.

mod commands;
mod service;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit codes beyond 0 (success) and 1 (runtime failure).
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_BAD_MAP: u8 = 3;
pub const EXIT_PORT_BUSY: u8 = 4;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

impl From<semmap::Error> for Failure {
    fn from(e: semmap::Error) -> Self {
        Self::new(1, e)
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "semmap", version, about = "Multi-scale semantic maps, open-vocabulary retrieval and object-goal navigation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every episode of a config and write report.json / report.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a feature map from an observation log.
    MapBuild {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Provider JSON overriding the log's provider.json.
        #[arg(long)]
        provider: Option<PathBuf>,
        /// Scales overriding the log's, e.g. `1,0,-1`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        scales: Option<Vec<i32>>,
    },
    /// Query a saved map with free text.
    Query {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 0.27, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long, default_value_t = 5)]
        topk: usize,
        /// Directory for heatmap.csv, heatmap.pgm and heatmap.json.
        #[arg(long)]
        heatmap: Option<PathBuf>,
        /// Heatmap cell size, meters.
        #[arg(long, default_value_t = 0.1)]
        cell: f64,
        /// Provider JSON, when the map sidecar lacks one.
        #[arg(long)]
        provider: Option<PathBuf>,
    },
    /// Serve the HTTP control API over a live simulation.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Delay between steps while running.
        #[arg(long, default_value_t = 100)]
        interval_ms: u64,
        /// Which world of the config to load.
        #[arg(long, default_value_t = 0)]
        world: usize,
    },
    /// Time the mapping step against retrieval.
    Bench {
        #[arg(long, default_value_t = 100_000)]
        entries: usize,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long, default_value_t = 20)]
        queries: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run { config, out } => commands::run(&config, &out),
        Command::MapBuild {
            log,
            out,
            provider,
            scales,
        } => commands::map_build(&log, &out, provider.as_deref(), scales),
        Command::Query {
            map,
            text,
            theta,
            topk,
            heatmap,
            cell,
            provider,
        } => commands::query(&commands::QueryArgs {
            map,
            text,
            theta,
            topk,
            heatmap,
            cell,
            provider,
        }),
        Command::Serve {
            config,
            port,
            host,
            interval_ms,
            world,
        } => service::serve(&config, &host, port, interval_ms, world),
        Command::Bench {
            entries,
            dim,
            frames,
            queries,
            json,
        } => commands::bench(entries, dim, frames, queries, json.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
