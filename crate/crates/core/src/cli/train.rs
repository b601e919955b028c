use crate::checkpoint::{Checkpoint, Model, Task, CHECKPOINT_VERSION};
use crate::classify::fit_classifier;
use crate::data::{Dataset, SplitSpec};
use crate::error::Result;
use crate::experiment::{
    evaluate_classification, evaluate_regression, prepare, to_labels, ClassificationEval, Prepared, RegressionEval,
};
use crate::trainer::{fit, Regressor, RunReport};

use super::args::TrainArgs;
use super::config::{resolve, CliConfig};
use super::{
    class_count, feature_header, fmt, load_dataset, with_header, write_config_sidecar, write_csv, write_json, EXIT_OK,
};

pub(crate) enum Eval {
    Regression(RegressionEval),
    Classification(ClassificationEval),
}

pub(crate) struct Trial {
    pub prepared: Prepared,
    pub report: RunReport,
    pub model: Model,
    /// Held-out evaluation; `None` when the test split is empty.
    pub eval: Option<Eval>,
}

/// Split, normalize, fit and evaluate once.
pub(crate) fn run_trial(cfg: &CliConfig, ds: &Dataset, spec: &SplitSpec) -> Result<Trial> {
    let regression = cfg.task == Task::Regression;
    let prepared = prepare(ds, spec, cfg.normalize_features, regression)?;
    let has_test = !prepared.test_y.is_empty();
    if regression {
        let out = fit(&prepared.train, &cfg.train)?;
        let reg = Regressor::new(
            out.ensemble.clone(),
            cfg.train.kernel,
            None,
            cfg.train.noise_var,
            cfg.train.base_jitter,
            &prepared.train.x,
            &prepared.train.y,
        )?;
        let eval = has_test
            .then(|| evaluate_regression(&reg, &prepared.stats, &prepared.test_x, &prepared.test_y))
            .transpose()?;
        let mut report = out.report;
        report.test_metrics = eval.as_ref().map(|e| e.metrics.clone());
        let model = Model::Regression {
            ensemble: out.ensemble,
            rff_basis: out.basis,
            train_x: prepared.train.x.clone(),
            train_y: prepared.train.y.clone(),
        };
        Ok(Trial {
            prepared,
            report,
            model,
            eval: eval.map(Eval::Regression),
        })
    } else {
        let classes = class_count(ds)?;
        let out = fit_classifier(&prepared.classification(classes)?, &cfg.train)?;
        let eval = has_test
            .then(|| {
                let labels = to_labels(&prepared.test_y, classes)?;
                evaluate_classification(&out.classifier, &prepared.test_x, &labels)
            })
            .transpose()?;
        let mut report = out.report;
        report.test_metrics = eval.as_ref().map(|e| e.metrics.clone());
        Ok(Trial {
            prepared,
            report,
            model: Model::Classification {
                classifier: out.classifier,
                classes,
            },
            eval: eval.map(Eval::Classification),
        })
    }
}

pub(crate) fn prediction_rows(eval: &Eval, source_rows: &[usize]) -> (Vec<String>, Vec<Vec<String>>) {
    match eval {
        Eval::Regression(e) => {
            let header = ["row", "target", "mean", "variance", "sq_error"].map(String::from).to_vec();
            let rows = (0..e.mean.len())
                .map(|i| {
                    vec![
                        source_rows[i].to_string(),
                        fmt(e.target[i]),
                        fmt(e.mean[i]),
                        fmt(e.variance[i]),
                        fmt(e.sq_error[i]),
                    ]
                })
                .collect();
            (header, rows)
        }
        Eval::Classification(e) => {
            let mut header = ["row", "target", "predicted", "entropy", "error"].map(String::from).to_vec();
            header.extend((0..e.probs.classes()).map(|c| format!("p_{c}")));
            let rows = (0..e.predicted.len())
                .map(|i| {
                    let mut r = vec![
                        source_rows[i].to_string(),
                        e.target[i].to_string(),
                        e.predicted[i].to_string(),
                        fmt(e.entropy[i]),
                        u8::from(e.predicted[i] != e.target[i]).to_string(),
                    ];
                    r.extend(e.probs.row(i).iter().map(|&p| fmt(p)));
                    r
                })
                .collect();
            (header, rows)
        }
    }
}

pub(crate) fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let cfg = resolve(args.config.as_deref(), &args.data, &args.model)?;
    let (ds, _) = load_dataset(&cfg)?;
    let spec = cfg.split_spec(ds.n(), cfg.train.seed)?;
    let trial = run_trial(&cfg, &ds, &spec)?;

    std::fs::create_dir_all(&args.out)?;
    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        build: crate::BUILD_VERSION.to_string(),
        config: cfg.train.clone(),
        target_column: cfg.target.clone(),
        feature_names: ds.feature_names.clone(),
        stats: trial.prepared.stats.clone(),
        model: trial.model,
    };
    checkpoint.save(args.out.join("checkpoint.json"))?;
    write_json(&args.out.join("report.json"), &with_header(&cfg, "report", &trial.report)?)?;
    write_config_sidecar(&args.out, &cfg)?;

    let test_rows = &trial.prepared.indices[2];
    let test = ds.select(test_rows);
    let mut header = feature_header(&ds);
    header.push(cfg.target.clone());
    let rows: Vec<Vec<String>> = (0..test.n())
        .map(|i| test.x.row(i).iter().chain([&test.y[i]]).map(|&v| fmt(v)).collect())
        .collect();
    write_csv(&args.out.join("test.csv"), &header, &rows)?;
    if let Some(eval) = &trial.eval {
        let (header, rows) = prediction_rows(eval, test_rows);
        write_csv(&args.out.join("predictions.csv"), &header, &rows)?;
    }
    if let Some(m) = &trial.report.test_metrics {
        log::info!("test metrics: {}", serde_json::to_string(m)?);
    }
    Ok(EXIT_OK)
}
