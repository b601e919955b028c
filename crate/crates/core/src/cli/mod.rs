//! Command-line front end.

mod args;
mod benchmark;
mod config;
mod predict;
mod report;
mod train;

use std::ffi::OsString;
use std::path::Path;

use clap::Parser;
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::Task;
use crate::data::{load_csv, synth_blobs, synth_regression, CsvSchema, Dataset, SynthKind};
use crate::error::{DpklError, Result};

pub use args::{BenchmarkArgs, Cli, Command, DataArgs, ModelArgs, PredictArgs, ReportArgs, TrainArgs};
pub use config::{resolve, CliConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

pub fn exit_code(e: &DpklError) -> i32 {
    match e {
        DpklError::Internal(_) => EXIT_INTERNAL,
        _ => EXIT_USER,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors go to stderr as one JSON object.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USER,
            };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let result = match &cli.command {
        Command::Train(a) => train::cmd_train(a),
        Command::Predict(a) => predict::cmd_predict(a),
        Command::Benchmark(a) => benchmark::cmd_benchmark(a),
        Command::Report(a) => report::cmd_report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            let record = json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{record}");
            code
        }
    }
}

/// Loads the file or generates the synthetic dataset named by `cfg`, and
/// returns it with a short dataset name.
pub(crate) fn load_dataset(cfg: &CliConfig) -> Result<(Dataset, String)> {
    match (&cfg.data, &cfg.synthetic) {
        (Some(path), _) => {
            let schema = CsvSchema {
                target_column: cfg.target.clone(),
                delimiter: cfg.delimiter_byte()?,
                has_header: cfg.has_header,
            };
            let ds = load_csv(path, &schema)?;
            let name = path
                .file_stem()
                .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned());
            Ok((ds, name))
        }
        (None, Some(kind)) if kind.eq_ignore_ascii_case("blobs") => {
            if cfg.task != Task::Classification {
                return Err(DpklError::Config("blobs data needs --task classification".into()));
            }
            let per_class = cfg.synthetic_rows / cfg.classes.max(1);
            let ds = synth_blobs(cfg.classes, per_class, cfg.input_dim, cfg.separation, cfg.train.seed)?;
            Ok((ds, "blobs".into()))
        }
        (None, Some(kind)) => {
            let k: SynthKind = kind.parse()?;
            if cfg.task != Task::Regression {
                return Err(DpklError::Config(format!("{kind} data is regression only")));
            }
            let ds = synth_regression(k, cfg.synthetic_rows, cfg.input_dim, cfg.noise_std, cfg.train.seed)?;
            Ok((ds, kind.to_ascii_lowercase()))
        }
        (None, None) => Err(DpklError::Config("either --data or --synthetic is required".into())),
    }
}

/// Class count for classification data (at least 2).
pub(crate) fn class_count(ds: &Dataset) -> Result<usize> {
    let (_, classes) = ds.class_labels()?;
    if classes < 2 {
        return Err(DpklError::InsufficientData(format!("need at least 2 classes, found {classes}")));
    }
    Ok(classes)
}

/// `{version, config, ...extra}` header embedded in every JSON artifact.
pub(crate) fn with_header<T: Serialize>(cfg: &CliConfig, key: &str, body: &T) -> Result<serde_json::Value> {
    let mut v = json!({
        "version": crate::BUILD_VERSION,
        "config": cfg,
    });
    v[key] = serde_json::to_value(body)?;
    Ok(v)
}

pub(crate) fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Sidecar describing how the CSVs in `dir` were produced.
pub(crate) fn write_config_sidecar(dir: &Path, cfg: &CliConfig) -> Result<()> {
    write_json(&dir.join("config.json"), &with_header(cfg, "artifact", &"config")?)
}

pub(crate) fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn feature_header(ds: &Dataset) -> Vec<String> {
    ds.feature_names
        .clone()
        .unwrap_or_else(|| (0..ds.dim()).map(|j| format!("x{j}")).collect())
}
