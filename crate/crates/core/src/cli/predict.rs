use crate::checkpoint::{Checkpoint, Model};
use crate::data::{load_features, CsvSchema};
use crate::error::{DpklError, Result};

use super::args::PredictArgs;
use super::{fmt, write_csv, write_json, EXIT_OK};

pub(crate) fn cmd_predict(args: &PredictArgs) -> Result<i32> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let delimiter = match args.delimiter.as_deref() {
        None => b',',
        Some(d) if d.len() == 1 => d.as_bytes()[0],
        Some(d) => return Err(DpklError::Config(format!("delimiter must be one character, got `{d}`"))),
    };
    let schema = CsvSchema {
        target_column: ckpt.target_column.clone(),
        delimiter,
        has_header: !args.no_header,
    };
    let query = load_features(&args.data, &schema)?;
    ckpt.check_input(query.dim())?;
    let x = ckpt.stats.apply_x(&query.x)?;

    let (header, rows): (Vec<String>, Vec<Vec<String>>) = match &ckpt.model {
        Model::Regression { .. } => {
            let preds = ckpt.regressor()?.predict(&x)?;
            let means = ckpt.stats.invert_y(&preds.iter().map(|p| p.mean).collect::<Vec<_>>());
            let rows = preds
                .iter()
                .zip(&means)
                .map(|(p, m)| vec![fmt(*m), fmt(ckpt.stats.invert_variance(p.variance))])
                .collect();
            (vec!["mean".into(), "variance".into()], rows)
        }
        Model::Classification { classifier, classes } => {
            let probs = classifier.predict_proba(&x)?;
            let predicted = probs.argmax();
            let entropy = probs.entropies();
            let mut header = vec!["predicted".to_string(), "entropy".to_string()];
            header.extend((0..*classes).map(|c| format!("p_{c}")));
            let rows = (0..probs.n())
                .map(|i| {
                    let mut r = vec![predicted[i].to_string(), fmt(entropy[i])];
                    r.extend(probs.row(i).iter().map(|&p| fmt(p)));
                    r
                })
                .collect();
            (header, rows)
        }
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(&args.out, &header, &rows)?;
    let sidecar = args.out.with_extension("config.json");
    write_json(
        &sidecar,
        &serde_json::json!({
            "version": crate::BUILD_VERSION,
            "checkpoint": args.checkpoint,
            "checkpoint_build": ckpt.build,
            "config": ckpt.config,
            "query": args.data,
            "rows": rows.len(),
        }),
    )?;
    Ok(EXIT_OK)
}
