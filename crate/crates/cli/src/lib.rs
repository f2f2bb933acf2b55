//! `veilpoll` command line: serve surveys, run simulations, estimate from CSV
//! files and export dated CSV copies.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime or I/O error.

pub mod settings;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;
use veilpoll_core::store::{export_filename, parse_csv};
use veilpoll_core::{
    estimate_from_store, run_replications, AssignmentMode, Design, EstimateError, SimError,
    SimulationConfig, StoreError,
};
use veilpoll_service::{ServiceError, SurveyService};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        if e.status().is_server_error() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "veilpoll", version, about = "Randomized response surveys")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    #[value(alias = "WARNER")]
    Warner,
    #[value(alias = "simmons_known")]
    SimmonsKnown,
    #[value(alias = "simmons_two")]
    SimmonsTwo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Paired,
    Split,
}

#[derive(Debug, clap::Args)]
pub struct DesignArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Sensitive-statement probability of the single device.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub p1: Option<f64>,
    #[arg(long)]
    pub p2: Option<f64>,
    /// Known proportion with the unrelated attribute (simmons-known).
    #[arg(long = "pi-y")]
    pub pi_y: Option<f64>,
    #[arg(long, default_value_t = 0.95)]
    pub conf: f64,
}

impl DesignArgs {
    fn design(&self) -> Result<Design, CliError> {
        let need = |v: Option<f64>, flag: &str| {
            v.ok_or_else(|| CliError::Validation(format!("--{flag} is required for this model")))
        };
        Ok(match self.model {
            ModelArg::Warner => Design::Warner {
                p: need(self.p, "p")?,
            },
            ModelArg::SimmonsKnown => Design::SimmonsKnown {
                p: need(self.p, "p")?,
                pi_y: need(self.pi_y, "pi-y")?,
            },
            ModelArg::SimmonsTwo => Design::SimmonsTwo {
                p1: need(self.p1, "p1")?,
                p2: need(self.p2, "p2")?,
            },
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP survey service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long = "data-dir")]
        data_dir: Option<PathBuf>,
    },
    /// Monte Carlo check of an estimator; prints a JSON report.
    Simulate {
        #[command(flatten)]
        design: DesignArgs,
        /// True sensitive proportion.
        #[arg(long)]
        pi: f64,
        /// Sample size (device 1 in split mode).
        #[arg(long)]
        n: usize,
        /// Device-2 sample size in split mode; defaults to --n.
        #[arg(long)]
        n2: Option<usize>,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::Paired)]
        mode: ModeArg,
    },
    /// Estimate the sensitive proportion from a response CSV; prints JSON.
    Estimate {
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Write a dated copy (mydata-YYYY-MM-DD.csv) of a response CSV.
    Export {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long = "out-dir", default_value = ".")]
        out_dir: PathBuf,
        /// Defaults to today.
        #[arg(long)]
        date: Option<NaiveDate>,
    },
}

/// Parses `args` and runs the command, writing results to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Serve {
            config,
            port,
            data_dir,
        } => serve(config, port, data_dir),
        Command::Simulate {
            design,
            pi,
            n,
            n2,
            reps,
            seed,
            mode,
        } => {
            let parsed = design.design()?;
            let mode = match mode {
                ModeArg::Paired => AssignmentMode::Paired,
                ModeArg::Split => AssignmentMode::Split,
            };
            if mode == AssignmentMode::Split && !matches!(parsed, Design::SimmonsTwo { .. }) {
                return Err(CliError::Validation(
                    "--mode split only applies to --model simmons-two".into(),
                ));
            }
            let mut config = SimulationConfig::new(parsed, pi, design.pi_y.unwrap_or(0.0), n);
            config.n2 = n2;
            config.replications = reps;
            config.seed = seed;
            config.mode = mode;
            config.confidence = design.conf;
            let report = run_replications(&config)?;
            print_json(out, &report)
        }
        Command::Estimate { design, csv } => {
            let parsed = design.design()?;
            let bytes = fs::read(&csv)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", csv.display())))?;
            let (schema, records) = parse_csv(&bytes, None)?;
            let estimate = estimate_from_store(&records, schema, parsed, design.conf)?;
            print_json(out, &estimate)
        }
        Command::Export { csv, out_dir, date } => {
            let bytes = fs::read(&csv)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", csv.display())))?;
            parse_csv(&bytes, None)?;
            let date = date.unwrap_or_else(|| chrono::Local::now().date_naive());
            let target = out_dir.join(export_filename(date));
            fs::create_dir_all(&out_dir)
                .and_then(|()| fs::write(&target, &bytes))
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", target.display())))?;
            writeln!(out, "{}", target.display()).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

fn print_json<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| CliError::Io(e.to_string()))
}

fn serve(
    config: Option<PathBuf>,
    port: Option<u16>,
    data_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let loaded = settings::load(
        config.as_deref(),
        |key| std::env::var(key).ok(),
        settings::Overrides { port, data_dir },
    )?;
    let service = SurveyService::new(loaded.settings);
    for request in loaded.surveys {
        service.create_survey(request)?;
    }
    let service = Arc::new(service);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", loaded.port))
            .await
            .map_err(|e| CliError::Io(format!("cannot bind port {}: {e}", loaded.port)))?;
        tracing::info!(
            port = loaded.port,
            surveys = service.survey_ids().len(),
            "listening"
        );
        veilpoll_service::serve(listener, service)
            .await
            .map_err(|e| CliError::Io(e.to_string()))
    })
}
