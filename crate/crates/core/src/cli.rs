//! JSON-configured experiments with CSV, SVG and manifest outputs.
//!
//! ```text
//! ergolab <experiment> --config run.json [--seed N] [--output STEM] [--check]
//! ergolab systems [--json]
//! ```
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 numerical
//! failure, 4 failed check (only with `--check`). Every non-zero exit prints
//! one JSON line on stderr.

mod config;
mod experiments;
mod output;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{
    experiment_keys, parse_config, system_registry, Experiment, ExperimentConfig, ParamSpec, Parameters, RunManifest,
    SystemKey, SystemSpec,
};
pub use experiments::{compute, Artifacts};
pub use output::{format_float, render_polylines_svg, Polyline};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub exit_code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            exit_code: EXIT_VALIDATION,
            kind: "validation",
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            exit_code: EXIT_NUMERICAL,
            kind: "numerical",
            message: message.into(),
        }
    }

    pub fn check_failed(message: impl Into<String>) -> Self {
        Self {
            exit_code: EXIT_CHECK_FAILED,
            kind: "check",
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            exit_code: EXIT_IO,
            kind: "io",
            message: message.into(),
        }
    }

    /// The single-line diagnostic written to stderr.
    pub fn diagnostic(&self) -> String {
        serde_json::json!({
            "status": "error",
            "exit_code": self.exit_code,
            "kind": self.kind,
            "message": self.message,
        })
        .to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteState { .. } | Error::SingularStencil { .. } => CliError::numerical(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ergolab", version, about = "Measure-preserving dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Phase portrait of a one-degree-of-freedom Hamiltonian (CSV + SVG).
    Portrait(RunArgs),
    /// Single trajectory with its energy column.
    Simulate(RunArgs),
    /// Flow Jacobian determinant by two independent routes.
    Liouville(RunArgs),
    /// Return statistics of orbits started in a set.
    Recurrence(RunArgs),
    /// Area of energy sublevel sets by Monte Carlo and by grid.
    Volume(RunArgs),
    /// Measure invariance of a map by integrals and by preimages.
    Invariance(RunArgs),
    /// List the builtin systems and their parameters.
    Systems {
        /// Print the registry as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (or a previous run manifest).
    #[arg(long)]
    config: PathBuf,
    /// Override `parameters.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output stem.
    #[arg(long)]
    output: Option<String>,
    /// Exit 4 when the experiment's acceptance threshold is not met.
    #[arg(long)]
    check: bool,
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub files: Vec<PathBuf>,
}

/// Entry point of the binary. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let err = CliError::validation(first.trim_start_matches("error: "));
            eprintln!("{}", err.diagnostic());
            return err.exit_code;
        }
    };
    let result = match cli.command {
        Command::Systems { json } => {
            print!("{}", list_systems(json));
            Ok(())
        }
        Command::Portrait(a) => run_from_args(Experiment::Portrait, a),
        Command::Simulate(a) => run_from_args(Experiment::Simulate, a),
        Command::Liouville(a) => run_from_args(Experiment::Liouville, a),
        Command::Recurrence(a) => run_from_args(Experiment::Recurrence, a),
        Command::Volume(a) => run_from_args(Experiment::Volume, a),
        Command::Invariance(a) => run_from_args(Experiment::Invariance, a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("{}", err.diagnostic());
            err.exit_code
        }
    }
}

fn run_from_args(experiment: Experiment, args: RunArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", args.config.display())))?;
    let mut config = parse_config(&text)?;
    if config.experiment != experiment {
        return Err(CliError::validation(format!(
            "config describes a `{}` experiment, invoked as `{experiment}`",
            config.experiment
        )));
    }
    if let Some(seed) = args.seed {
        config.parameters.seed = Some(seed);
    }
    if let Some(stem) = args.output {
        config.output = stem;
    }
    let outcome = run(&config, args.check)?;
    println!(
        "{}",
        serde_json::json!({
            "status": "ok",
            "experiment": experiment,
            "system": config.system,
            "files": outcome.files,
            "check": outcome.manifest.check,
            "summary": outcome.manifest.summary,
        })
    );
    Ok(())
}

/// Validates and runs `config`, writes `<stem>.csv`, `<stem>.svg` (portraits)
/// and `<stem>.manifest.json`. With `check`, a failed acceptance threshold
/// is reported as [`EXIT_CHECK_FAILED`] after the outputs are written.
pub fn run(config: &ExperimentConfig, check: bool) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    let artifacts = compute(config)?;
    let wall = started.elapsed().as_secs_f64();

    let stem = Path::new(&config.output);
    if config.output.is_empty() {
        return Err(CliError::validation("output stem is empty"));
    }
    let mut outputs = BTreeMap::new();
    let mut files = Vec::new();
    let csv_path = with_suffix(stem, ".csv");
    write_atomic(&csv_path, &artifacts.csv)?;
    outputs.insert(file_name(&csv_path), sha256_hex(&artifacts.csv));
    files.push(csv_path);
    if let Some(svg) = &artifacts.svg {
        let svg_path = with_suffix(stem, ".svg");
        write_atomic(&svg_path, svg.as_bytes())?;
        outputs.insert(file_name(&svg_path), sha256_hex(svg.as_bytes()));
        files.push(svg_path);
    }

    let manifest = RunManifest {
        config: config.clone(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: wall,
        outputs,
        check: check.then_some(artifacts.check_passed),
        summary: artifacts.summary.clone(),
    };
    let manifest_path = with_suffix(stem, ".manifest.json");
    let mut text = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::io(e.to_string()))?;
    text.push(b'\n');
    write_atomic(&manifest_path, &text)?;
    files.push(manifest_path);

    if check && !artifacts.check_passed {
        return Err(CliError::check_failed(artifacts.check_detail));
    }
    Ok(RunOutcome { manifest, files })
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.flush())
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Registry listing: an aligned table, or JSON with `json`.
pub fn list_systems(json: bool) -> String {
    let registry = system_registry();
    if json {
        let experiments: BTreeMap<&str, Vec<ParamSpec>> =
            experiment_keys().into_iter().map(|(e, keys)| (e.name(), keys)).collect();
        let doc = serde_json::json!({ "systems": registry, "experiments": experiments });
        return format!("{}\n", serde_json::to_string_pretty(&doc).unwrap_or_default());
    }
    let mut out = String::new();
    let _ = writeln!(out, "{:<18} {:<12} {:<44} PARAMETERS", "SYSTEM", "KIND", "EXPERIMENTS");
    for s in &registry {
        let experiments: Vec<&str> = s.experiments.iter().map(|e| e.name()).collect();
        let params: Vec<String> = s.parameters.iter().map(|p| format!("{}={}", p.name, p.default)).collect();
        let _ = writeln!(
            out,
            "{:<18} {:<12} {:<44} {}",
            s.key.name(),
            s.kind,
            experiments.join(","),
            params.join(" ")
        );
    }
    out
}
