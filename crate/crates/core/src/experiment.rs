//! Split/normalize/evaluate plumbing shared by the CLI and the test suites.

use serde::{Deserialize, Serialize};

use crate::classify::{accuracy, cross_entropy, ClassProbs, ClassificationData, Classifier};
use crate::data::{split, Dataset, NormStats, SplitSpec};
use crate::error::{DpklError, Result};
use crate::linalg::Matrix;
use crate::metrics::{gaussian_nll, rmse, spearman};
use crate::trainer::{RegressionData, Regressor, TestMetrics};

/// A split with every part normalized by the labeled rows' statistics.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub stats: NormStats,
    /// Normalized labeled features/targets plus the normalized unlabeled pool.
    pub train: RegressionData,
    /// Normalized test features.
    pub test_x: Matrix,
    /// Test targets in original units (class indices for classification).
    pub test_y: Vec<f64>,
    /// Source-row indices of (labeled, unlabeled, test).
    pub indices: [Vec<usize>; 3],
}

/// Splits `ds` and standardizes features (optional) and, for regression,
/// labels using the labeled rows only.
pub fn prepare(ds: &Dataset, spec: &SplitSpec, normalize_features: bool, normalize_labels: bool) -> Result<Prepared> {
    let s = split(ds, spec)?;
    let stats = NormStats::fit(&s.labeled, normalize_features, normalize_labels);
    let labeled = stats.apply(&s.labeled)?;
    let unlabeled = (s.unlabeled.rows() > 0)
        .then(|| stats.apply_x(&s.unlabeled))
        .transpose()?;
    Ok(Prepared {
        train: RegressionData {
            x: labeled.x,
            y: labeled.y,
            unlabeled,
        },
        test_x: stats.apply_x(&s.test.x)?,
        test_y: s.test.y,
        stats,
        indices: s.indices,
    })
}

impl Prepared {
    /// Labeled rows as classification data with `classes` classes.
    pub fn classification(&self, classes: usize) -> Result<ClassificationData> {
        Ok(ClassificationData {
            x: self.train.x.clone(),
            labels: to_labels(&self.train.y, classes)?,
            classes,
        })
    }
}

pub fn to_labels(y: &[f64], classes: usize) -> Result<Vec<usize>> {
    y.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < classes {
                Ok(v as usize)
            } else {
                Err(DpklError::Schema(format!("row {}: invalid class label {v}", i + 1)))
            }
        })
        .collect()
}

/// Held-out regression predictions in original target units.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionEval {
    pub mean: Vec<f64>,
    /// Latent-function posterior variance.
    pub variance: Vec<f64>,
    pub target: Vec<f64>,
    pub sq_error: Vec<f64>,
    pub metrics: TestMetrics,
}

/// Predicts normalized `x`, de-normalizes, and scores against `y_raw`.
pub fn evaluate_regression(reg: &Regressor, stats: &NormStats, x: &Matrix, y_raw: &[f64]) -> Result<RegressionEval> {
    if x.rows() != y_raw.len() {
        return Err(DpklError::dims("test targets", x.rows(), y_raw.len()));
    }
    let preds = reg.predict(x)?;
    let mean = stats.invert_y(&preds.iter().map(|p| p.mean).collect::<Vec<_>>());
    let variance: Vec<f64> = preds.iter().map(|p| stats.invert_variance(p.variance)).collect();
    let noise = stats.invert_variance(reg.noise_var());
    let sq_error: Vec<f64> = mean.iter().zip(y_raw).map(|(m, y)| (m - y) * (m - y)).collect();
    let n = y_raw.len();
    let nll = mean
        .iter()
        .zip(&variance)
        .zip(y_raw)
        .map(|((m, v), y)| gaussian_nll(*y, *m, v + noise))
        .sum::<f64>()
        / n.max(1) as f64;
    let metrics = TestMetrics {
        n,
        rmse: Some(rmse(&mean, y_raw)),
        nll: Some(nll),
        accuracy: None,
        uncertainty_error_spearman: (n >= 2).then(|| spearman(&variance, &sq_error)),
    };
    Ok(RegressionEval {
        mean,
        variance,
        target: y_raw.to_vec(),
        sq_error,
        metrics,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationEval {
    pub probs: ClassProbs,
    pub predicted: Vec<usize>,
    pub entropy: Vec<f64>,
    pub target: Vec<usize>,
    pub metrics: TestMetrics,
}

pub fn evaluate_classification(clf: &Classifier, x: &Matrix, labels: &[usize]) -> Result<ClassificationEval> {
    let probs = clf.predict_proba(x)?;
    let predicted = probs.argmax();
    let entropy = probs.entropies();
    let n = labels.len();
    let errors: Vec<f64> = predicted
        .iter()
        .zip(labels)
        .map(|(p, t)| if p == t { 0.0 } else { 1.0 })
        .collect();
    let metrics = TestMetrics {
        n,
        rmse: None,
        nll: Some(cross_entropy(&probs, labels)?),
        accuracy: Some(accuracy(&predicted, labels)),
        uncertainty_error_spearman: (n >= 2).then(|| spearman(&entropy, &errors)),
    };
    Ok(ClassificationEval {
        probs,
        predicted,
        entropy,
        target: labels.to_vec(),
        metrics,
    })
}

/// One quantile bin of the variance–error table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub bin: usize,
    pub n: usize,
    pub mean_variance: f64,
    pub mse: f64,
}

/// Points sorted by predicted variance and cut into `bins` near-equal
/// quantile groups (fewer when there are fewer points).
pub fn calibration_table(variance: &[f64], sq_error: &[f64], bins: usize) -> Vec<CalibrationBin> {
    assert_eq!(variance.len(), sq_error.len());
    let n = variance.len();
    let bins = bins.min(n).max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| variance[a].total_cmp(&variance[b]).then(a.cmp(&b)));
    (0..bins)
        .filter_map(|b| {
            let (lo, hi) = (b * n / bins, (b + 1) * n / bins);
            (hi > lo).then(|| {
                let part = &idx[lo..hi];
                let k = part.len() as f64;
                CalibrationBin {
                    bin: b,
                    n: part.len(),
                    mean_variance: part.iter().map(|&i| variance[i]).sum::<f64>() / k,
                    mse: part.iter().map(|&i| sq_error[i]).sum::<f64>() / k,
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_regression, SynthKind};

    #[test]
    fn calibration_bins_cover_all_points() {
        let v: Vec<f64> = (0..25).map(|i| ((i * 7) % 25) as f64).collect();
        let e: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let t = calibration_table(&v, &e, 10);
        assert_eq!(t.len(), 10);
        assert_eq!(t.iter().map(|b| b.n).sum::<usize>(), 25);
        assert!(t.windows(2).all(|w| w[0].mean_variance <= w[1].mean_variance));
        assert!(t.iter().all(|b| (b.mse - 2.0 * b.mean_variance).abs() < 1e-12));
        assert_eq!(calibration_table(&[1.0, 2.0], &[0.0, 0.0], 10).len(), 2);
    }

    #[test]
    fn prepare_uses_labeled_stats() {
        let ds = synth_regression(SynthKind::Sine, 30, 2, 0.0, 1).unwrap();
        let spec = SplitSpec {
            n_labeled: 10,
            n_unlabeled: 5,
            n_test: 15,
            seed: 2,
        };
        let p = prepare(&ds, &spec, true, true).unwrap();
        let mean: f64 = p.train.y.iter().sum::<f64>() / 10.0;
        assert!(mean.abs() < 1e-12);
        assert_eq!(p.train.unlabeled.as_ref().unwrap().rows(), 5);
        assert_eq!(p.test_y.len(), 15);
        let none = SplitSpec { n_unlabeled: 0, ..spec };
        assert!(prepare(&ds, &none, true, true).unwrap().train.unlabeled.is_none());
    }

    #[test]
    fn labels_validated() {
        assert_eq!(to_labels(&[0.0, 2.0, 1.0], 3).unwrap(), vec![0, 2, 1]);
        assert!(to_labels(&[0.5], 3).is_err());
        assert!(to_labels(&[3.0], 3).is_err());
    }
}
