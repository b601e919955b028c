//! Softmax classification over latent distributions.
//!
//! Each particle carries the network weights together with one weight vector
//! per class. Logits are linear-kernel inner products between the particle
//! distributions of `z` and `θ_c`, which reduce to a product of particle means.

use std::time::Instant;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DpklError, Result};
use crate::linalg::{axpy, Matrix};
use crate::net::{mean_of, ForwardTrace, MlpArchitecture, MlpParams, ParticleEnsemble};
use crate::seeds::{rng_for, shuffled_indices, STREAM_BATCHES, STREAM_HEAD};
use crate::trainer::{
    functional_gradient_step, initial_ensemble, validation_split, EpochRecord, ParticleAdam, RunReport,
    TrainConfig, TrainMode, ValidationCheck,
};

/// Per-particle class weights; particle `l` holds a `C × d` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxHead {
    pub classes: usize,
    pub dim: usize,
    pub particles: Vec<Matrix>,
}

impl SoftmaxHead {
    pub fn new(particles: Vec<Matrix>) -> Result<Self> {
        let first = particles
            .first()
            .ok_or_else(|| DpklError::Config("softmax head needs at least one particle".into()))?;
        let (classes, dim) = (first.rows(), first.cols());
        if classes < 2 {
            return Err(DpklError::Config(format!("need at least 2 classes, got {classes}")));
        }
        for p in &particles {
            if p.rows() != classes || p.cols() != dim {
                return Err(DpklError::dims("head particle", classes * dim, p.rows() * p.cols()));
            }
        }
        Ok(SoftmaxHead {
            classes,
            dim,
            particles,
        })
    }

    pub fn m(&self) -> usize {
        self.particles.len()
    }

    /// Particle mean `θ̄`, `C × d`.
    pub fn mean(&self) -> Matrix {
        mean_of(&self.particles)
    }
}

/// Row-stochastic `n × C` probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProbs(Matrix);

impl ClassProbs {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    /// Most probable class per row; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n())
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    pub fn entropies(&self) -> Vec<f64> {
        (0..self.n()).map(|i| crate::metrics::entropy(self.row(i))).collect()
    }
}

/// `ν = z̄ θ̄ᵀ` from per-particle embeddings (`n × d` each).
pub fn logits(head: &SoftmaxHead, embeds: &[Matrix]) -> Result<Matrix> {
    let first = embeds
        .first()
        .ok_or_else(|| DpklError::Config("no particle embeddings".into()))?;
    if first.cols() != head.dim {
        return Err(DpklError::dims("latent dimension", head.dim, first.cols()));
    }
    Ok(mean_of(embeds).matmul_t(&head.mean()))
}

/// Row-wise softmax with the row maximum subtracted.
pub fn softmax_probs(logits: &Matrix) -> ClassProbs {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    ClassProbs(out)
}

fn check_labels(probs: &ClassProbs, labels: &[usize]) -> Result<()> {
    if labels.len() != probs.n() {
        return Err(DpklError::dims("class labels", probs.n(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= probs.classes()) {
        return Err(DpklError::dims("class label", probs.classes(), bad + 1));
    }
    Ok(())
}

/// Mean negative log probability of the true class.
pub fn cross_entropy(probs: &ClassProbs, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let n = labels.len().max(1) as f64;
    Ok(-labels
        .iter()
        .enumerate()
        .map(|(i, &c)| probs.row(i)[c].ln())
        .sum::<f64>()
        / n)
}

/// `∂ cross_entropy / ∂ν = (P − Y)/n`.
pub fn cross_entropy_grad(probs: &ClassProbs, labels: &[usize]) -> Result<Matrix> {
    check_labels(probs, labels)?;
    let mut g = probs.0.clone();
    for (i, &c) in labels.iter().enumerate() {
        g.row_mut(i)[c] -= 1.0;
    }
    g.scale(1.0 / labels.len().max(1) as f64);
    Ok(g)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

/// Labeled classification data; features expected standardized.
#[derive(Clone, Debug)]
pub struct ClassificationData {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

/// A trained ensemble with its softmax head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub ensemble: ParticleEnsemble,
    pub head: SoftmaxHead,
}

impl Classifier {
    pub fn predict_proba(&self, x: &Matrix) -> Result<ClassProbs> {
        let embeds = self.ensemble.embed(x)?;
        Ok(softmax_probs(&logits(&self.head, &embeds)?))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.argmax())
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierFit {
    /// Best validation-accuracy snapshot.
    pub classifier: Classifier,
    /// State after the last epoch.
    pub last: Classifier,
    pub report: RunReport,
}

/// `θ` particles drawn from `N(0, 1/d)`.
pub fn init_head(classes: usize, dim: usize, m: usize, seed: u64) -> Result<SoftmaxHead> {
    let mut rng = rng_for(seed, STREAM_HEAD);
    let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt())
        .map_err(|e| DpklError::Config(format!("head init: {e}")))?;
    let particles = (0..m)
        .map(|_| Matrix::from_fn(classes, dim, |_, _| normal.sample(&mut rng)))
        .collect();
    SoftmaxHead::new(particles)
}

fn join(params: &MlpParams, theta: &Matrix) -> Vec<f64> {
    let mut v = params.as_flat().to_vec();
    v.extend_from_slice(theta.as_slice());
    v
}

fn split(arch: &MlpArchitecture, joint: &[Vec<f64>], classes: usize, dim: usize) -> Result<(Vec<MlpParams>, Vec<Matrix>)> {
    let p = arch.param_count();
    let mut params = Vec::with_capacity(joint.len());
    let mut thetas = Vec::with_capacity(joint.len());
    for v in joint {
        params.push(MlpParams::from_flat(arch, v[..p].to_vec())?);
        thetas.push(Matrix::from_vec(classes, dim, v[p..].to_vec())?);
    }
    Ok((params, thetas))
}

/// Minibatch objective and joint per-particle gradients.
pub struct BatchGrads {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Cross-entropy (plus `λ/2·Σ‖θ⁽ˡ⁾‖²`) on one batch and its gradient with
/// respect to each joint particle `[w, θ]`.
pub fn batch_loss_grads(
    arch: &MlpArchitecture,
    params: &[MlpParams],
    thetas: &[Matrix],
    x: &Matrix,
    labels: &[usize],
    l2: f64,
) -> Result<BatchGrads> {
    let m = params.len() as f64;
    let traces: Vec<ForwardTrace> = params
        .par_iter()
        .map(|p| arch.forward_trace(p, x))
        .collect::<Result<_>>()?;
    let embeds: Vec<Matrix> = traces.iter().map(|t| t.output().clone()).collect();
    let z_bar = mean_of(&embeds);
    let theta_bar = mean_of(thetas);
    let probs = softmax_probs(&z_bar.matmul_t(&theta_bar));
    let mut loss = cross_entropy(&probs, labels)?;
    let g_nu = cross_entropy_grad(&probs, labels)?;

    let mut dz = g_nu.matmul(&theta_bar);
    dz.scale(1.0 / m);
    let mut dtheta = g_nu.transpose().matmul(&z_bar);
    dtheta.scale(1.0 / m);
    if l2 > 0.0 {
        loss += 0.5 * l2 * thetas.iter().map(|t| crate::linalg::dot(t.as_slice(), t.as_slice())).sum::<f64>();
    }

    let grads = params
        .par_iter()
        .zip(traces.par_iter())
        .zip(thetas.par_iter())
        .map(|((p, trace), theta)| {
            let mut g = arch.backward_from_trace(p, x, trace, &dz)?;
            let mut gt = dtheta.as_slice().to_vec();
            if l2 > 0.0 {
                axpy(l2, theta.as_slice(), &mut gt);
            }
            g.extend_from_slice(&gt);
            Ok(g)
        })
        .collect::<Result<_>>()?;
    Ok(BatchGrads { loss, grads })
}

/// Trains network and head particles jointly on minibatch cross-entropy,
/// keeping the snapshot with the best validation accuracy.
pub fn fit_classifier(data: &ClassificationData, config: &TrainConfig) -> Result<ClassifierFit> {
    let started = Instant::now();
    config.validate()?;
    if config.mode == TrainMode::Ssdpkl {
        return Err(DpklError::Config("ssdpkl mode is regression only".into()));
    }
    let n = data.x.rows();
    if data.labels.len() != n {
        return Err(DpklError::dims("class labels", n, data.labels.len()));
    }
    if data.classes < 2 {
        return Err(DpklError::InsufficientData(format!("need at least 2 classes, got {}", data.classes)));
    }
    if let Some(&bad) = data.labels.iter().find(|&&c| c >= data.classes) {
        return Err(DpklError::Schema(format!("label {bad} out of range for {} classes", data.classes)));
    }
    let (train_idx, val_idx) = validation_split(n, config)?;
    let x_train = data.x.select_rows(&train_idx);
    let y_train: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
    let x_val = data.x.select_rows(&val_idx);
    let y_val: Vec<usize> = val_idx.iter().map(|&i| data.labels[i]).collect();

    let ensemble = initial_ensemble(config, data.x.cols())?;
    let arch = ensemble.arch.clone();
    let head = init_head(data.classes, config.latent_dim, config.m, config.seed)?;
    let mut joint: Vec<Vec<f64>> = ensemble
        .particles
        .iter()
        .zip(&head.particles)
        .map(|(p, t)| join(p, t))
        .collect();
    let mut adam = ParticleAdam::new(config.adam, config.learning_rate, config.m, joint[0].len());
    let coupling = config.coupling();
    let mut batch_rng = rng_for(config.seed, STREAM_BATCHES);

    let snapshot = |joint: &[Vec<f64>]| -> Result<Classifier> {
        let (params, thetas) = split(&arch, joint, data.classes, config.latent_dim)?;
        Ok(Classifier {
            ensemble: ParticleEnsemble {
                arch: arch.clone(),
                seed: ensemble.seed,
                particles: params,
            },
            head: SoftmaxHead::new(thetas)?,
        })
    };

    let mut epochs = Vec::with_capacity(config.max_epochs);
    let mut checks: Vec<ValidationCheck> = Vec::new();
    // Accuracy ties are common on small validation sets; they are broken by
    // the lower validation cross-entropy.
    let mut best: Option<(usize, f64, f64, Classifier)> = None;
    let mut check = |epoch: usize, joint: &[Vec<f64>], checks: &mut Vec<ValidationCheck>| -> Result<()> {
        let clf = snapshot(joint)?;
        let probs = clf.predict_proba(&x_val)?;
        let metric = accuracy(&probs.argmax(), &y_val);
        let ce = cross_entropy(&probs, &y_val)?;
        checks.push(ValidationCheck { epoch, metric });
        let better = best
            .as_ref()
            .map_or(true, |(_, acc, bce, _)| metric > *acc || (metric == *acc && ce < *bce));
        if better {
            best = Some((epoch, metric, ce, clf));
        }
        Ok(())
    };

    for epoch in 0..config.max_epochs {
        if epoch % config.early_stop_check_every == 0 {
            check(epoch, &joint, &mut checks)?;
        }
        let order = shuffled_indices(train_idx.len(), &mut batch_rng);
        let mut loss_sum = 0.0;
        let mut h = 1.0;
        let batches = order.chunks(config.batch_size);
        let n_batches = batches.len();
        for batch in batches {
            let xb = x_train.select_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y_train[i]).collect();
            let (params, thetas) = split(&arch, &joint, data.classes, config.latent_dim)?;
            let bg = batch_loss_grads(&arch, &params, &thetas, &xb, &yb, config.classifier_l2)?;
            if !bg.loss.is_finite() {
                return Err(DpklError::Internal(format!("non-finite loss at epoch {epoch}")));
            }
            loss_sum += bg.loss;
            h = functional_gradient_step(&mut joint, &bg.grads, &mut adam, coupling)?;
        }
        let mean_loss = loss_sum / n_batches as f64;
        epochs.push(EpochRecord {
            epoch,
            objective: mean_loss,
            train_loss: mean_loss,
            variance_sum: None,
            h_kappa: h,
            jitter: 0.0,
        });
    }
    check(config.max_epochs, &joint, &mut checks)?;
    let final_clf = snapshot(&joint)?;
    let final_probs = final_clf.predict_proba(&x_train)?;
    let final_objective = cross_entropy(&final_probs, &y_train)?;
    let initial_objective = epochs.first().map_or(final_objective, |e| e.objective);
    let (best_epoch, best_metric, _, classifier) = best.expect("at least one validation check");

    let report = RunReport {
        task: "classification".into(),
        mode: config.mode,
        kernel_mode: config.kernel_mode,
        m: config.m,
        metric_name: "val_accuracy".into(),
        epochs,
        checks,
        best_epoch,
        best_metric,
        initial_objective,
        final_objective,
        jitter_events: Vec::new(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        test_metrics: None,
    };
    Ok(ClassifierFit {
        classifier,
        last: final_clf,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_ensemble, Activation};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn double_sum_logits(head: &SoftmaxHead, embeds: &[Matrix]) -> Matrix {
        let n = embeds[0].rows();
        let m = embeds.len() as f64;
        let mh = head.m() as f64;
        Matrix::from_fn(n, head.classes, |i, c| {
            let mut s = 0.0;
            for theta in &head.particles {
                for z in embeds {
                    s += crate::linalg::dot(theta.row(c), z.row(i));
                }
            }
            s / (m * mh)
        })
    }

    #[test]
    fn logits_match_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..20 {
            let (m, n, d, c) = (3, 5 + trial % 3, 4, 3);
            let embeds: Vec<Matrix> = (0..m).map(|_| random_matrix(n, d, &mut rng)).collect();
            let head = SoftmaxHead::new((0..m).map(|_| random_matrix(c, d, &mut rng)).collect()).unwrap();
            let fast = logits(&head, &embeds).unwrap();
            assert!(fast.max_abs_diff(&double_sum_logits(&head, &embeds)) < 1e-12);
        }
    }

    #[test]
    fn single_particle_logits_are_dot_products() {
        let z = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let head = SoftmaxHead::new(vec![Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, -1.0]])]).unwrap();
        let l = logits(&head, &[z]).unwrap();
        assert_eq!(l.row(0), &[1.0, -1.5]);
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let head = SoftmaxHead::new(vec![Matrix::zeros(3, 2); 2]).unwrap();
        let z = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0]]);
        let l = logits(&head, &[z.clone(), z]).unwrap();
        assert!(l.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_dimension_mismatch() {
        let head = SoftmaxHead::new(vec![Matrix::zeros(2, 3)]).unwrap();
        assert!(matches!(
            logits(&head, &[Matrix::zeros(1, 2)]),
            Err(DpklError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn softmax_cases() {
        let p = softmax_probs(&Matrix::from_rows(&[vec![0.7; 4]]));
        assert!(p.row(0).iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let p = softmax_probs(&Matrix::from_rows(&[vec![1000.0, 0.0]]));
        assert_eq!(p.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = softmax_probs(&Matrix::zeros(3, 5));
        let ce = cross_entropy(&uniform, &[0, 1, 4]).unwrap();
        assert!((ce - 5f64.ln()).abs() < 1e-14);
        let sure = softmax_probs(&Matrix::from_rows(&[vec![50.0, 0.0]]));
        assert!(cross_entropy(&sure, &[0]).unwrap() < 1e-20);
        assert!(cross_entropy(&uniform, &[0, 1]).is_err());
    }

    #[test]
    fn cross_entropy_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nu = random_matrix(4, 3, &mut rng);
        let labels = [0, 2, 1, 2];
        let g = cross_entropy_grad(&softmax_probs(&nu), &labels).unwrap();
        let eps = 1e-6;
        for i in 0..4 {
            for c in 0..3 {
                let mut plus = nu.clone();
                plus.row_mut(i)[c] += eps;
                let mut minus = nu.clone();
                minus.row_mut(i)[c] -= eps;
                let fd = (cross_entropy(&softmax_probs(&plus), &labels).unwrap()
                    - cross_entropy(&softmax_probs(&minus), &labels).unwrap())
                    / (2.0 * eps);
                assert!((fd - g[(i, c)]).abs() < 1e-8, "({i},{c}) fd {fd} vs {}", g[(i, c)]);
            }
        }
    }

    #[test]
    fn batch_grads_match_finite_differences() {
        let arch = MlpArchitecture::new(3, vec![4], 2, Activation::Tanh).unwrap();
        let ens = init_ensemble(&arch, 3, 5).unwrap();
        let head = init_head(3, 2, 3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_matrix(5, 3, &mut rng);
        let labels = [0, 1, 2, 1, 0];
        let l2 = 0.01;
        let mut joint: Vec<Vec<f64>> = ens.particles.iter().zip(&head.particles).map(|(p, t)| join(p, t)).collect();
        let loss_at = |joint: &[Vec<f64>]| {
            let (p, t) = split(&arch, joint, 3, 2).unwrap();
            batch_loss_grads(&arch, &p, &t, &x, &labels, l2).unwrap().loss
        };
        let (p, t) = split(&arch, &joint, 3, 2).unwrap();
        let grads = batch_loss_grads(&arch, &p, &t, &x, &labels, l2).unwrap().grads;
        let eps = 1e-5;
        for l in 0..3 {
            for k in 0..joint[l].len() {
                let orig = joint[l][k];
                joint[l][k] = orig + eps;
                let fp = loss_at(&joint);
                joint[l][k] = orig - eps;
                let fm = loss_at(&joint);
                joint[l][k] = orig;
                let fd = (fp - fm) / (2.0 * eps);
                let an = grads[l][k];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "particle {l} param {k}: fd {fd} vs {an}");
            }
        }
    }

    fn blobs(n_per: usize, sep: f64, seed: u64) -> ClassificationData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..n_per {
                let cx = if c == 0 { -sep / 2.0 } else { sep / 2.0 };
                rows.push(vec![cx + normal.sample(&mut rng), normal.sample(&mut rng)]);
                labels.push(c);
            }
        }
        ClassificationData {
            x: Matrix::from_rows(&rows),
            labels,
            classes: 2,
        }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            m: 3,
            max_epochs: 15,
            learning_rate: 1e-2,
            hidden_dims: vec![8],
            latent_dim: 4,
            ..TrainConfig::classification_default()
        }
    }

    #[test]
    fn classifier_fit_is_deterministic_and_learns() {
        let data = blobs(30, 6.0, 3);
        let a = fit_classifier(&data, &small_config()).unwrap();
        let b = fit_classifier(&data, &small_config()).unwrap();
        assert_eq!(a.classifier, b.classifier);
        assert_eq!(a.report.without_timing(), b.report.without_timing());
        assert_eq!(a.report.epochs.len(), 15);
        assert!(a.report.best_metric >= 0.9, "val accuracy {}", a.report.best_metric);
    }

    #[test]
    fn single_particle_matches_plain_adam() {
        let data = blobs(20, 4.0, 4);
        let config = TrainConfig {
            m: 1,
            mode: TrainMode::Dkl,
            max_epochs: 5,
            ..small_config()
        };
        let fit = fit_classifier(&data, &config).unwrap();

        // Reference: one network plus one head trained by textbook Adam.
        let arch = config.architecture(2).unwrap();
        let mut w = initial_ensemble(&config, 2).unwrap().particles[0].clone();
        let mut theta = init_head(2, config.latent_dim, 1, config.seed).unwrap().particles[0].clone();
        let (train_idx, _) = validation_split(data.x.rows(), &config).unwrap();
        let x_train = data.x.select_rows(&train_idx);
        let y_train: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
        let len = w.len() + theta.as_slice().len();
        let (mut m1, mut m2) = (vec![0.0; len], vec![0.0; len]);
        let mut t = 0;
        let mut rng = rng_for(config.seed, STREAM_BATCHES);
        for _ in 0..config.max_epochs {
            for batch in shuffled_indices(train_idx.len(), &mut rng).chunks(config.batch_size) {
                let xb = x_train.select_rows(batch);
                let yb: Vec<usize> = batch.iter().map(|&i| y_train[i]).collect();
                let z = arch.forward(&w, &xb).unwrap();
                let g_nu = cross_entropy_grad(&softmax_probs(&z.matmul_t(&theta)), &yb).unwrap();
                let mut g = arch.backward_params(&w, &xb, &g_nu.matmul(&theta)).unwrap();
                g.extend_from_slice(g_nu.transpose().matmul(&z).as_slice());
                t += 1;
                let mut flat = join(&w, &theta);
                for k in 0..len {
                    m1[k] = 0.9 * m1[k] + 0.1 * g[k];
                    m2[k] = 0.999 * m2[k] + 0.001 * g[k] * g[k];
                    let mhat = m1[k] / (1.0 - 0.9f64.powi(t));
                    let vhat = m2[k] / (1.0 - 0.999f64.powi(t));
                    flat[k] -= config.learning_rate * mhat / (vhat.sqrt() + 1e-8);
                }
                let p = arch.param_count();
                w = MlpParams::from_flat(&arch, flat[..p].to_vec()).unwrap();
                theta = Matrix::from_vec(2, config.latent_dim, flat[p..].to_vec()).unwrap();
            }
        }
        let (params, thetas) = (&fit.last.ensemble.particles[0], &fit.last.head.particles[0]);
        assert!(params.as_flat().iter().zip(w.as_flat()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(thetas.max_abs_diff(&theta) < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut data = blobs(10, 4.0, 5);
        let config = small_config();
        let ss = TrainConfig { mode: TrainMode::Ssdpkl, ..config.clone() };
        assert!(fit_classifier(&data, &ss).is_err());
        data.classes = 1;
        assert!(matches!(fit_classifier(&data, &config), Err(DpklError::InsufficientData(_))));
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_permute(v in prop::collection::vec(-30.0f64..30.0, 4)) {
            let p = softmax_probs(&Matrix::from_rows(&[v.clone()]));
            prop_assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let rev: Vec<f64> = v.iter().rev().copied().collect();
            let q = softmax_probs(&Matrix::from_rows(&[rev]));
            for c in 0..4 {
                prop_assert!((p.row(0)[c] - q.row(0)[3 - c]).abs() < 1e-15);
            }
            let h = p.entropies()[0];
            prop_assert!(h >= 0.0 && h <= 4f64.ln() + 1e-12);
        }

        #[test]
        fn logits_invariant_under_particle_permutation(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let embeds: Vec<Matrix> = (0..4).map(|_| random_matrix(3, 2, &mut rng)).collect();
            let head = SoftmaxHead::new((0..4).map(|_| random_matrix(3, 2, &mut rng)).collect()).unwrap();
            let a = logits(&head, &embeds).unwrap();
            let rev_e: Vec<Matrix> = embeds.iter().rev().cloned().collect();
            let rev_h = SoftmaxHead::new(head.particles.iter().rev().cloned().collect()).unwrap();
            let b = logits(&rev_h, &rev_e).unwrap();
            prop_assert!(a.max_abs_diff(&b) < 1e-14);
        }
    }
}
