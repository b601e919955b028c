//! Particle functional gradient descent on the GP marginal likelihood.

mod config;
mod model;
mod objective;
mod particles;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{TrainConfig, TrainMode};
pub use model::Regressor;
pub use objective::{per_particle_loss_grads, LossGrads, ObjectiveData};
pub use particles::{
    functional_gradient_step, kappa, median_heuristic, smoothed_gradients, AdamConfig, Coupling,
    ParticleAdam, MIN_KAPPA_BANDWIDTH,
};

use crate::error::{DpklError, Result};
use crate::gp::KernelMode;
use crate::latentkernel::{sample_rff_basis, RffBasis};
use crate::linalg::Matrix;
use crate::net::{init_ensemble, ParticleEnsemble};
use crate::seeds::{derive_seed, rng_for, shuffled_indices, STREAM_INIT, STREAM_RFF, STREAM_UNLABELED, STREAM_VALIDATION};

/// Labeled (normalized) regression data plus an optional unlabeled pool.
#[derive(Clone, Debug)]
pub struct RegressionData {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub unlabeled: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    /// GP NLL (regression) or mean cross-entropy (classification).
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_sum: Option<f64>,
    pub h_kappa: f64,
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub epoch: usize,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterEvent {
    pub epoch: usize,
    pub jitter: f64,
}

/// Held-out evaluation filled in by callers that have a test split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub n: usize,
    /// RMSE in original target units (regression).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    /// Mean predictive NLL in original units (regression).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// Spearman correlation of predicted variance (regression) or entropy
    /// (classification) against the per-point error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncertainty_error_spearman: Option<f64>,
}

/// Training trace: one record per completed epoch plus validation checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub mode: TrainMode,
    pub kernel_mode: KernelMode,
    pub m: usize,
    pub metric_name: String,
    pub epochs: Vec<EpochRecord>,
    pub checks: Vec<ValidationCheck>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub jitter_events: Vec<JitterEvent>,
    pub wall_clock_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_metrics: Option<TestMetrics>,
}

impl RunReport {
    /// Copy with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct FitOutput {
    /// Best validation snapshot.
    pub ensemble: ParticleEnsemble,
    /// State after the last epoch.
    pub last: ParticleEnsemble,
    pub basis: Option<RffBasis>,
    pub report: RunReport,
}

/// Seeded shuffle of `0..n` split into (train, validation); validation is the
/// last `⌈val_fraction·n⌉` indices.
pub fn validation_split(n: usize, config: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = ((config.val_fraction * n as f64).ceil() as usize).max(1);
    if n < n_val + 2 {
        return Err(DpklError::InsufficientData(format!(
            "{n} labeled points leave fewer than 2 for training after a {n_val}-point validation split"
        )));
    }
    let mut rng = rng_for(config.seed, STREAM_VALIDATION);
    let idx = shuffled_indices(n, &mut rng);
    let (train, val) = idx.split_at(n - n_val);
    Ok((train.to_vec(), val.to_vec()))
}

/// The epoch-0 ensemble [`fit`] starts from.
pub fn initial_ensemble(config: &TrainConfig, input_dim: usize) -> Result<ParticleEnsemble> {
    init_ensemble(&config.architecture(input_dim)?, config.m, derive_seed(config.seed, STREAM_INIT))
}

pub fn rff_basis_for(config: &TrainConfig) -> Result<Option<RffBasis>> {
    match config.kernel_mode {
        KernelMode::Exact => Ok(None),
        KernelMode::Rff => Ok(Some(sample_rff_basis(
            &config.kernel,
            config.latent_dim,
            config.q,
            derive_seed(config.seed, STREAM_RFF),
        )?)),
    }
}

fn validation_nll(
    ensemble: &ParticleEnsemble,
    basis: Option<&RffBasis>,
    config: &TrainConfig,
    x_train: &Matrix,
    y_train: &[f64],
    x_val: &Matrix,
    y_val: &[f64],
) -> Result<f64> {
    let reg = Regressor::new(
        ensemble.clone(),
        config.kernel,
        basis.cloned(),
        config.noise_var,
        config.base_jitter,
        x_train,
        y_train,
    )?;
    Ok(reg.evaluate(x_val, y_val)?.1)
}

/// Runs particle functional gradient descent and returns the snapshot with
/// the best validation NLL (checked every `early_stop_check_every` epochs and
/// after the last one).
pub fn fit(data: &RegressionData, config: &TrainConfig) -> Result<FitOutput> {
    fit_with_coupling(data, config, config.coupling())
}

/// [`fit`] with an explicit gradient coupling.
pub fn fit_with_coupling(data: &RegressionData, config: &TrainConfig, coupling: Coupling) -> Result<FitOutput> {
    let started = Instant::now();
    config.validate()?;
    let n = data.x.rows();
    if data.y.len() != n {
        return Err(DpklError::dims("regression targets", n, data.y.len()));
    }
    let unlabeled = match config.mode {
        TrainMode::Ssdpkl => match &data.unlabeled {
            Some(u) if u.rows() > 0 => Some(u),
            _ => return Err(DpklError::EmptyUnlabeledSet),
        },
        _ => None,
    };
    let (train_idx, val_idx) = validation_split(n, config)?;
    let x_train = data.x.select_rows(&train_idx);
    let y_train: Vec<f64> = train_idx.iter().map(|&i| data.y[i]).collect();
    let x_val = data.x.select_rows(&val_idx);
    let y_val: Vec<f64> = val_idx.iter().map(|&i| data.y[i]).collect();

    let mut ensemble = initial_ensemble(config, data.x.cols())?;
    let basis = rff_basis_for(config)?;
    let mut adam = ParticleAdam::new(config.adam, config.learning_rate, config.m, ensemble.arch.param_count());
    let mut unlabeled_rng = rng_for(config.seed, STREAM_UNLABELED);

    let mut epochs = Vec::with_capacity(config.max_epochs);
    let mut checks = Vec::new();
    let mut jitter_events = Vec::new();
    let mut best = ensemble.clone();
    let mut best_epoch = 0;
    let mut best_metric = f64::INFINITY;

    let mut check = |epoch: usize, ens: &ParticleEnsemble, checks: &mut Vec<ValidationCheck>| -> Result<()> {
        let metric = validation_nll(ens, None, config, &x_train, &y_train, &x_val, &y_val)?;
        checks.push(ValidationCheck { epoch, metric });
        if metric < best_metric || checks.len() == 1 {
            best_metric = metric;
            best_epoch = epoch;
            best = ens.clone();
        }
        Ok(())
    };

    let subsample = |rng: &mut rand_chacha::ChaCha8Rng| -> Option<Matrix> {
        unlabeled.map(|u| {
            if u.rows() > config.unlabeled_cap {
                let idx = shuffled_indices(u.rows(), rng);
                u.select_rows(&idx[..config.unlabeled_cap])
            } else {
                u.clone()
            }
        })
    };

    for epoch in 0..config.max_epochs {
        if epoch % config.early_stop_check_every == 0 {
            check(epoch, &ensemble, &mut checks)?;
        }
        let pool = subsample(&mut unlabeled_rng);
        let objective_data = ObjectiveData {
            labeled: &x_train,
            y: &y_train,
            unlabeled: pool.as_ref(),
        };
        let lg = per_particle_loss_grads(&ensemble, basis.as_ref(), &objective_data, config)?;
        if !lg.objective.is_finite() {
            return Err(DpklError::Internal(format!("non-finite objective at epoch {epoch}")));
        }
        let h = functional_gradient_step(&mut ensemble.particles, &lg.grads, &mut adam, coupling)?;
        if lg.jitter > 0.0 {
            jitter_events.push(JitterEvent { epoch, jitter: lg.jitter });
        }
        epochs.push(EpochRecord {
            epoch,
            objective: lg.objective,
            train_loss: lg.nll,
            variance_sum: lg.variance_sum,
            h_kappa: h,
            jitter: lg.jitter,
        });
    }
    check(config.max_epochs, &ensemble, &mut checks)?;

    let pool = subsample(&mut unlabeled_rng);
    let final_objective = per_particle_loss_grads(
        &ensemble,
        basis.as_ref(),
        &ObjectiveData {
            labeled: &x_train,
            y: &y_train,
            unlabeled: pool.as_ref(),
        },
        config,
    )?
    .objective;
    let initial_objective = epochs.first().map_or(final_objective, |e| e.objective);

    let report = RunReport {
        task: "regression".into(),
        mode: config.mode,
        kernel_mode: config.kernel_mode,
        m: config.m,
        metric_name: "val_nll".into(),
        epochs,
        checks,
        best_epoch,
        best_metric,
        initial_objective,
        final_objective,
        jitter_events,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        test_metrics: None,
    };
    Ok(FitOutput {
        ensemble: best,
        last: ensemble,
        basis,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(n: usize, seed: u64) -> RegressionData {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = xs.iter().map(|x| (2.0 * std::f64::consts::PI * x).sin()).collect();
        let x = Matrix::from_vec(n, 1, xs.iter().map(|x| (x - 0.5) * 3.4).collect()).unwrap();
        RegressionData { x, y, unlabeled: None }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            m: 4,
            q: 50,
            hidden_dims: vec![16],
            max_epochs: 20,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_ensemble() {
        let data = sine(20, 1);
        let config = TrainConfig { max_epochs: 0, ..small_config() };
        let out = fit(&data, &config).unwrap();
        assert_eq!(out.ensemble, initial_ensemble(&config, 1).unwrap());
        assert!(out.report.epochs.is_empty());
    }

    #[test]
    fn fit_is_deterministic() {
        let data = sine(20, 2);
        let a = fit(&data, &small_config()).unwrap();
        let b = fit(&data, &small_config()).unwrap();
        assert_eq!(a.ensemble, b.ensemble);
        assert_eq!(a.report.without_timing(), b.report.without_timing());
        assert_eq!(a.report.epochs.len(), 20);
    }

    #[test]
    fn early_stopping_never_worse_than_start() {
        let data = sine(20, 3);
        let out = fit(&data, &small_config()).unwrap();
        let first = out.report.checks[0].metric;
        assert!(out.report.best_metric <= first);
        assert_eq!(out.report.checks.last().unwrap().epoch, 20);
    }

    #[test]
    fn too_few_points() {
        let data = sine(2, 4);
        assert!(matches!(fit(&data, &small_config()), Err(DpklError::InsufficientData(_))));
    }

    #[test]
    fn ssdpkl_needs_unlabeled_pool() {
        let data = sine(20, 5);
        let config = TrainConfig { mode: TrainMode::Ssdpkl, ..small_config() };
        assert!(matches!(fit(&data, &config), Err(DpklError::EmptyUnlabeledSet)));
    }

    #[test]
    fn validation_split_sizes() {
        let config = TrainConfig::default();
        let (train, val) = validation_split(50, &config).unwrap();
        assert_eq!(val.len(), 5);
        assert_eq!(train.len(), 45);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }
}
