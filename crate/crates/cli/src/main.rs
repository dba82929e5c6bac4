//! `zcgauge` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
//! Errors are written to stderr as one JSON object per line. Every output
//! file gets a sibling `<out>.manifest.json` recording the resolved command,
//! which `zcgauge replay` re-runs.

mod args;
mod commands;

use std::ffi::OsString;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use args::{Cli, Command, ReplayArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Internal(_) => "internal",
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    zcgauge::scorestore::StoreError,
    zcgauge::analysis::AnalysisError,
    zcgauge::biaslab::BiasError,
    zcgauge::nasloop::NasError
);

/// Record of one run, written next to its output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub cwd: PathBuf,
    /// Fully resolved arguments, including defaults and environment values.
    pub config: Command,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Replaying reproduces the outputs byte for byte.
    pub deterministic: bool,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn execute(mut command: Command, jobs: Option<usize>, argv: Vec<String>) -> Result<serde_json::Value, CliError> {
    let start = Instant::now();
    let outcome = commands::run(&command)?;
    let cwd = std::env::current_dir().map_err(|e| CliError::Internal(e.to_string()))?;
    let mut manifest = RunManifest {
        subcommand: command.name().to_string(),
        argv,
        cwd,
        seed: command.seed_mut().map(|s| *s),
        deterministic: command.deterministic(),
        config: command,
        jobs,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: 0.0,
    };
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    let mut manifests = Vec::new();
    for out in &manifest.outputs {
        let path = manifest_path(out);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        manifests.push(path);
    }
    Ok(json!({
        "ok": true,
        "subcommand": manifest.subcommand,
        "outputs": manifest.outputs,
        "manifests": manifests,
        "summary": outcome.summary,
    }))
}

fn replay(a: &ReplayArgs, jobs: Option<usize>, argv: Vec<String>) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(&a.manifest)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", a.manifest.display())))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", a.manifest.display())))?;
    let out = match &a.out {
        Some(p) => Some(std::path::absolute(p).map_err(|e| CliError::Data(e.to_string()))?),
        None => None,
    };
    std::env::set_current_dir(&manifest.cwd)
        .map_err(|e| CliError::Data(format!("cannot enter {}: {e}", manifest.cwd.display())))?;
    let mut command = manifest.config;
    if let (Some(p), Some(slot)) = (out, command.out_mut()) {
        *slot = p;
    }
    execute(command, jobs.or(manifest.jobs), argv)
}

fn dispatch(argv: Vec<OsString>) -> Result<serde_json::Value, CliError> {
    let cli = Cli::try_parse_from(&argv).map_err(|e| match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = e.print();
            std::process::exit(0);
        }
        _ => CliError::Usage(e.render().to_string().trim_end().to_string()),
    })?;
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let argv: Vec<String> = argv.iter().map(|s| s.to_string_lossy().into_owned()).collect();
    match cli.command {
        Command::Replay(a) => replay(&a, cli.jobs, argv),
        command => execute(command, cli.jobs, argv),
    }
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|_| {}));
    let argv: Vec<OsString> = std::env::args_os().collect();
    let result = catch_unwind(AssertUnwindSafe(|| dispatch(argv))).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(CliError::Internal(msg))
    });
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "code": e.code(), "message": e.to_string()}));
            ExitCode::from(e.code())
        }
    }
}
