use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use crate::data::Dataset;
use crate::error::{DpklError, Result};
use crate::metrics::mean_std;
use crate::trainer::TrainMode;

use super::args::BenchmarkArgs;
use super::config::{resolve, CliConfig};
use super::train::run_trial;
use super::{fmt, load_dataset, write_config_sidecar, write_csv, EXIT_OK, EXIT_USER};

const RESULT_COLUMNS: [&str; 11] = [
    "dataset", "mode", "n", "trial", "seed", "status", "rmse", "nll", "accuracy", "spearman", "error",
];

/// Identity of one benchmark cell; rows are sorted and deduplicated by it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    dataset: String,
    mode: String,
    n: usize,
    trial: usize,
    seed: u64,
}

impl Key {
    fn from_row(row: &[String]) -> Result<Key> {
        let num = |i: usize| -> Result<u64> {
            row[i]
                .parse()
                .map_err(|_| DpklError::Schema(format!("results.csv: bad {} `{}`", RESULT_COLUMNS[i], row[i])))
        };
        Ok(Key {
            dataset: row[0].clone(),
            mode: row[1].clone(),
            n: num(2)? as usize,
            trial: num(3)? as usize,
            seed: num(4)?,
        })
    }
}

fn read_existing(path: &Path) -> Result<BTreeMap<Key, Vec<String>>> {
    let mut rows = BTreeMap::new();
    if !path.exists() {
        return Ok(rows);
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != RESULT_COLUMNS {
        return Err(DpklError::Schema(format!(
            "{} has unexpected columns {header:?}",
            path.display()
        )));
    }
    for rec in rdr.records() {
        let row: Vec<String> = rec?.iter().map(String::from).collect();
        rows.insert(Key::from_row(&row)?, row);
    }
    Ok(rows)
}

fn cell_config(base: &CliConfig, mode: TrainMode, n: usize, seed: u64) -> CliConfig {
    let mut cfg = base.clone();
    cfg.train.mode = mode;
    if mode == TrainMode::Dkl {
        cfg.train.m = 1;
    }
    cfg.train.seed = seed;
    cfg.n_labeled = n;
    cfg
}

fn run_cell(base: &CliConfig, ds: &Dataset, key: &Key, mode: TrainMode) -> Vec<String> {
    let cfg = cell_config(base, mode, key.n, key.seed);
    let outcome = cfg
        .train
        .validate()
        .and_then(|_| cfg.split_spec(ds.n(), key.seed))
        .and_then(|spec| run_trial(&cfg, ds, &spec));
    let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
    let mut row = vec![
        key.dataset.clone(),
        key.mode.clone(),
        key.n.to_string(),
        key.trial.to_string(),
        key.seed.to_string(),
    ];
    match outcome {
        Ok(trial) => {
            let m = trial.report.test_metrics.unwrap_or_default();
            row.extend([
                "ok".to_string(),
                opt(m.rmse),
                opt(m.nll),
                opt(m.accuracy),
                opt(m.uncertainty_error_spearman),
                String::new(),
            ]);
        }
        Err(e) => {
            log::warn!("{} n={} trial={} failed: {e}", key.mode, key.n, key.trial);
            row.extend([e.kind().to_string(), String::new(), String::new(), String::new(), String::new(), e.to_string()]);
        }
    }
    row
}

fn summary_rows(rows: &BTreeMap<Key, Vec<String>>) -> Vec<Vec<String>> {
    let mut groups: BTreeMap<(String, String, usize), Vec<&Vec<String>>> = BTreeMap::new();
    for (k, r) in rows {
        groups.entry((k.dataset.clone(), k.mode.clone(), k.n)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((dataset, mode, n), rs)| {
            let ok: Vec<_> = rs.iter().filter(|r| r[5] == "ok").collect();
            let mut out = vec![dataset, mode, n.to_string(), rs.len().to_string(), ok.len().to_string()];
            for col in [6, 7, 8] {
                let vals: Vec<f64> = ok.iter().filter_map(|r| r[col].parse().ok()).collect();
                if vals.is_empty() {
                    out.extend([String::new(), String::new()]);
                } else {
                    let (m, s) = mean_std(&vals);
                    out.extend([fmt(m), fmt(s)]);
                }
            }
            out
        })
        .collect()
}

pub(crate) fn cmd_benchmark(args: &BenchmarkArgs) -> Result<i32> {
    let cfg = resolve(args.config.as_deref(), &args.data, &args.model)?;
    if args.sizes.is_empty() || args.trials == 0 || args.modes.is_empty() {
        return Err(DpklError::Config("benchmark needs sizes, modes and at least one trial".into()));
    }
    let modes: Vec<TrainMode> = args.modes.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    let (ds, name) = load_dataset(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    let results_path = args.out.join("results.csv");
    let mut rows = read_existing(&results_path)?;

    let mut cells = Vec::new();
    for &mode in &modes {
        for &n in &args.sizes {
            for trial in 0..args.trials {
                let key = Key {
                    dataset: name.clone(),
                    mode: mode.as_str().to_string(),
                    n,
                    trial,
                    seed: cfg.train.seed.wrapping_add(trial as u64),
                };
                if !rows.contains_key(&key) {
                    cells.push((key, mode));
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| DpklError::Internal(format!("thread pool: {e}")))?;
    let fresh: Vec<(Key, Vec<String>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|(key, mode)| (key.clone(), run_cell(&cfg, &ds, key, *mode)))
            .collect()
    });
    let attempted = fresh.len();
    let failed = fresh.iter().filter(|(_, r)| r[5] != "ok").count();
    rows.extend(fresh);

    let header: Vec<String> = RESULT_COLUMNS.iter().map(|s| s.to_string()).collect();
    write_csv(&results_path, &header, &rows.values().cloned().collect::<Vec<_>>())?;
    let summary_header: Vec<String> = [
        "dataset", "mode", "n", "trials", "trials_ok", "rmse_mean", "rmse_std", "nll_mean", "nll_std",
        "accuracy_mean", "accuracy_std",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    write_csv(&args.out.join("summary.csv"), &summary_header, &summary_rows(&rows))?;
    write_config_sidecar(&args.out, &cfg)?;

    if attempted > 0 && failed == attempted {
        eprintln!(
            "{}",
            json!({
                "error": "AllTrialsFailed",
                "message": format!("all {attempted} benchmark trials failed; see results.csv"),
                "exit_code": EXIT_USER,
            })
        );
        return Ok(EXIT_USER);
    }
    Ok(EXIT_OK)
}
