//! κ-smoothed particle updates: median-heuristic bandwidth, the weighted
//! gradient average φ, and per-particle Adam.

use serde::{Deserialize, Serialize};

use crate::error::{DpklError, Result};
use crate::linalg::{axpy, sq_dist};

/// Lower bound applied to the median-heuristic bandwidth.
pub const MIN_KAPPA_BANDWIDTH: f64 = 1e-12;

/// How particle gradients are mixed before the optimizer step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Coupling {
    /// `φ(wᵢ) = Σ_l κ(wᵢ, w_l)·∇_{w_l}L̂` with the median-heuristic bandwidth.
    #[default]
    Kappa,
    /// Same weighting with a fixed bandwidth `h_κ`.
    KappaFixed(f64),
    /// `φ(wᵢ) = ∇_{wᵢ}L̂`; each particle only sees its own gradient.
    Identity,
}

fn pairwise_sq_dists<P: AsRef<[f64]>>(particles: &[P]) -> Vec<Vec<f64>> {
    let m = particles.len();
    let mut d = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let v = sq_dist(particles[i].as_ref(), particles[j].as_ref());
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bandwidth_from_sq_dists(d: &[Vec<f64>]) -> f64 {
    let m = d.len();
    if m <= 1 {
        return 1.0;
    }
    let dists: Vec<f64> = (0..m)
        .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
        .map(|(i, j)| d[i][j].sqrt())
        .collect();
    let med = median(dists);
    (med * med / ((m + 1) as f64).ln()).max(MIN_KAPPA_BANDWIDTH)
}

/// `h_κ = med² / log(m + 1)` over pairwise particle distances; 1 for a single
/// particle.
pub fn median_heuristic<P: AsRef<[f64]>>(particles: &[P]) -> f64 {
    bandwidth_from_sq_dists(&pairwise_sq_dists(particles))
}

/// `κ(w, w') = exp(−‖w − w'‖²/h_κ)`.
pub fn kappa(h_kappa: f64, w: &[f64], wp: &[f64]) -> Result<f64> {
    if w.len() != wp.len() {
        return Err(DpklError::dims("kappa", w.len(), wp.len()));
    }
    Ok((-sq_dist(w, wp) / h_kappa).exp())
}

/// Mixes raw gradients into `φ` for every particle. Returns `(φ, h_κ)`.
pub fn smoothed_gradients<P: AsRef<[f64]>>(
    particles: &[P],
    grads: &[Vec<f64>],
    coupling: Coupling,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let m = particles.len();
    if grads.len() != m {
        return Err(DpklError::dims("particle gradients", m, grads.len()));
    }
    for (p, g) in particles.iter().zip(grads) {
        if p.as_ref().len() != g.len() {
            return Err(DpklError::dims("gradient length", p.as_ref().len(), g.len()));
        }
    }
    match coupling {
        Coupling::Identity => Ok((grads.to_vec(), 1.0)),
        Coupling::Kappa | Coupling::KappaFixed(_) => {
            let d = pairwise_sq_dists(particles);
            let h = match coupling {
                Coupling::KappaFixed(h) if h > 0.0 => h,
                Coupling::KappaFixed(h) => {
                    return Err(DpklError::Config(format!("kappa bandwidth must be positive, got {h}")))
                }
                _ => bandwidth_from_sq_dists(&d),
            };
            let phi = (0..m)
                .map(|i| {
                    let mut acc = vec![0.0; grads[i].len()];
                    for (l, g) in grads.iter().enumerate() {
                        let w = (-d[i][l] / h).exp();
                        axpy(w, g, &mut acc);
                    }
                    acc
                })
                .collect();
            Ok((phi, h))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Independent Adam moments for each particle.
#[derive(Clone, Debug)]
pub struct ParticleAdam {
    config: AdamConfig,
    learning_rate: f64,
    t: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl ParticleAdam {
    pub fn new(config: AdamConfig, learning_rate: f64, m: usize, len: usize) -> Self {
        ParticleAdam {
            config,
            learning_rate,
            t: 0,
            first: vec![vec![0.0; len]; m],
            second: vec![vec![0.0; len]; m],
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One Adam update of every particle with its own entry of `directions`.
    pub fn step<P: AsMut<[f64]>>(&mut self, particles: &mut [P], directions: &[Vec<f64>]) {
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (i, p) in particles.iter_mut().enumerate() {
            let w = p.as_mut();
            let (m1, m2) = (&mut self.first[i], &mut self.second[i]);
            for k in 0..w.len() {
                let g = directions[i][k];
                m1[k] = beta1 * m1[k] + (1.0 - beta1) * g;
                m2[k] = beta2 * m2[k] + (1.0 - beta2) * g * g;
                let mhat = m1[k] / c1;
                let vhat = m2[k] / c2;
                w[k] -= self.learning_rate * mhat / (vhat.sqrt() + epsilon);
            }
        }
    }
}

/// `wᵢ ← Adam(wᵢ, φ(wᵢ))` for all particles. Returns the `h_κ` used.
pub fn functional_gradient_step<P: AsRef<[f64]> + AsMut<[f64]>>(
    particles: &mut [P],
    grads: &[Vec<f64>],
    optimizer: &mut ParticleAdam,
    coupling: Coupling,
) -> Result<f64> {
    let (phi, h) = smoothed_gradients(particles, grads, coupling)?;
    optimizer.step(particles, &phi);
    Ok(h)
}
