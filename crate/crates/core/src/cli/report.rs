use serde_json::json;

use crate::checkpoint::{Checkpoint, Model};
use crate::data::{load_csv, CsvSchema};
use crate::error::{DpklError, Result};
use crate::experiment::{calibration_table, evaluate_classification, evaluate_regression, to_labels};

use super::args::ReportArgs;
use super::config::CliConfig;
use super::{fmt, write_config_sidecar, write_csv, write_json, EXIT_OK};

fn read_run_config(dir: &std::path::Path) -> Result<CliConfig> {
    let text = std::fs::read_to_string(dir.join("config.json"))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let cfg = v
        .get("config")
        .cloned()
        .ok_or_else(|| DpklError::Schema("config.json has no `config` entry".into()))?;
    serde_json::from_value(cfg).map_err(|e| DpklError::Schema(format!("config.json: {e}")))
}

pub(crate) fn cmd_report(args: &ReportArgs) -> Result<i32> {
    let ckpt = Checkpoint::load(args.run.join("checkpoint.json"))?;
    let cfg = read_run_config(&args.run)?;
    let schema = match &args.data {
        Some(_) => CsvSchema {
            target_column: ckpt.target_column.clone(),
            delimiter: cfg.delimiter_byte()?,
            has_header: cfg.has_header,
        },
        None => CsvSchema::new(ckpt.target_column.clone()),
    };
    let path = args.data.clone().unwrap_or_else(|| args.run.join("test.csv"));
    let held_out = load_csv(&path, &schema)?;
    ckpt.check_input(held_out.dim())?;
    let x = ckpt.stats.apply_x(&held_out.x)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    std::fs::create_dir_all(&out)?;
    if out != args.run {
        write_config_sidecar(&out, &cfg)?;
    }

    let latent = match &ckpt.model {
        Model::Regression { ensemble, .. } => ensemble.mean_embedding(&x)?,
        Model::Classification { classifier, .. } => classifier.ensemble.mean_embedding(&x)?,
    };
    let header: Vec<String> = (0..latent.cols()).map(|j| format!("z{j}")).collect();
    let rows: Vec<Vec<String>> = (0..latent.rows())
        .map(|i| latent.row(i).iter().map(|&v| fmt(v)).collect())
        .collect();
    write_csv(&out.join("latent.csv"), &header, &rows)?;

    let summary = match &ckpt.model {
        Model::Regression { .. } => {
            let eval = evaluate_regression(&ckpt.regressor()?, &ckpt.stats, &x, &held_out.y)?;
            let table = calibration_table(&eval.variance, &eval.sq_error, args.bins);
            let rows: Vec<Vec<String>> = table
                .iter()
                .map(|b| vec![b.bin.to_string(), b.n.to_string(), fmt(b.mean_variance), fmt(b.mse)])
                .collect();
            let header = ["bin", "n", "mean_variance", "mse"].map(String::from).to_vec();
            write_csv(&out.join("calibration.csv"), &header, &rows)?;
            json!({
                "task": "regression",
                "n": eval.metrics.n,
                "rmse": eval.metrics.rmse,
                "nll": eval.metrics.nll,
                "spearman": eval.metrics.uncertainty_error_spearman,
                "correlated": "variance vs squared error",
                "bins": table,
            })
        }
        Model::Classification { classifier, classes } => {
            let labels = to_labels(&held_out.y, *classes)?;
            let eval = evaluate_classification(classifier, &x, &labels)?;
            let rows: Vec<Vec<String>> = (0..labels.len())
                .map(|i| {
                    vec![
                        i.to_string(),
                        fmt(eval.entropy[i]),
                        u8::from(eval.predicted[i] != labels[i]).to_string(),
                    ]
                })
                .collect();
            let header = ["row", "entropy", "error"].map(String::from).to_vec();
            write_csv(&out.join("entropy.csv"), &header, &rows)?;
            json!({
                "task": "classification",
                "n": eval.metrics.n,
                "accuracy": eval.metrics.accuracy,
                "cross_entropy": eval.metrics.nll,
                "spearman": eval.metrics.uncertainty_error_spearman,
                "correlated": "entropy vs error indicator",
            })
        }
    };
    write_json(
        &out.join("calibration.json"),
        &json!({
            "version": crate::BUILD_VERSION,
            "config": cfg,
            "source": path,
            "summary": summary,
        }),
    )?;
    Ok(EXIT_OK)
}
