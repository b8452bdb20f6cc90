//! `srd`: dataset generation, teacher training, distillation, evaluation
//! and model reports from the command line.
//!
//! Every command takes the same override flags. A config file is parsed
//! first, then `--seed`, then each `--set key=value` in order, so the last
//! assignment to a key wins. Commands that write output leave the resolved
//! settings in `resolved_config.txt` next to their results.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use srd_core::kv::KvMap;

pub use commands::RESOLVED_CONFIG;

/// Exit code for malformed invocations.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for failures while a command runs.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "srd", version, about = "Semantic-relation distillation for image translation GANs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Flat key=value config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides one config key; repeatable, last wins.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic unpaired or paired dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a teacher without distillation.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
    },
    /// Train a student against a frozen teacher.
    Distill {
        #[command(flatten)]
        common: Common,
    },
    /// Score a trained run on the held-out split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory with the run's checkpoints; defaults to the config's directory.
        #[arg(long, value_name = "DIR")]
        checkpoints: Option<PathBuf>,
    },
    /// Write activation matrices of one held-out sample.
    ExportSemrel {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        checkpoints: Option<PathBuf>,
        /// Held-out sample index.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Feature point; defaults to the generator's encoder endpoint.
        #[arg(long)]
        layer: Option<String>,
    },
    /// Print parameter and FLOP counts of an architecture.
    ReportModel {
        #[command(flatten)]
        common: Common,
        /// resnetN, unet, unetR or patchgan.
        #[arg(long)]
        arch: String,
        /// Base width (ndf for patchgan).
        #[arg(long, default_value_t = 64)]
        ngf: usize,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
        /// Strided layers of a patchgan.
        #[arg(long, default_value_t = 3)]
        n_layers: usize,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData { common }
            | Command::TrainTeacher { common }
            | Command::Distill { common }
            | Command::Eval { common, .. }
            | Command::ExportSemrel { common, .. }
            | Command::ReportModel { common, .. } => common,
        }
    }

    fn needs_config(&self) -> bool {
        matches!(
            self,
            Command::TrainTeacher { .. } | Command::Distill { .. } | Command::Eval { .. } | Command::ExportSemrel { .. }
        )
    }
}

/// Why a command did not complete.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Stage { stage: &'static str, error: anyhow::Error },
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Stage { .. } => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(msg) => write!(f, "usage error: {msg}"),
            Failure::Stage { stage, error } => write!(f, "{stage} failed: {error:#}"),
        }
    }
}

/// Attaches a stage name to runtime errors.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Stage { stage, error: e.into() })
    }
}

/// Config file, then `--seed`, then `--set` in order.
pub fn resolve_overrides(common: &Common) -> Result<KvMap, Failure> {
    let mut kv = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            KvMap::parse(&text).stage("config")?
        }
        None => KvMap::default(),
    };
    if let Some(seed) = common.seed {
        kv.set("seed", seed);
    }
    for s in &common.overrides {
        kv.set_assignment(s).map_err(|_| Failure::Usage(format!("--set expects key=value, got `{s}`")))?;
    }
    Ok(kv)
}

fn init_logging() -> Result<(), Failure> {
    let level = match std::env::var("SRD_LOG").as_deref() {
        Err(_) | Ok("info") => log::LevelFilter::Info,
        Ok("quiet") => log::LevelFilter::Error,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => return Err(Failure::Usage(format!("SRD_LOG must be quiet, info or debug, got `{other}`"))),
    };
    // a second init in the same process (tests) is harmless
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
    Ok(())
}

pub(crate) fn require_out(common: &Common) -> Result<&Path, Failure> {
    common.out.as_deref().ok_or_else(|| Failure::Usage("--out DIR is required".into()))
}

/// Parses `argv` (program name first) and runs the command.
pub fn execute<I, T>(argv: I) -> Result<(), Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let msg = e.render().to_string();
            return Err(Failure::Usage(msg.trim_start_matches("error: ").trim_end().to_string()));
        }
    };
    init_logging()?;
    if cli.command.needs_config() && cli.command.common().config.is_none() {
        return Err(Failure::Usage("this command needs --config PATH".into()));
    }
    commands::dispatch(&cli.command)
}

/// Runs `srd` and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match execute(argv) {
        Ok(()) => 0,
        Err(f @ Failure::Usage(_)) => {
            eprintln!("{f}");
            if !f.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            f.exit_code()
        }
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
