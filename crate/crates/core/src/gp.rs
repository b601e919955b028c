//! GP marginal likelihood, its kernel gradients, and posterior prediction.

use serde::{Deserialize, Serialize};

use crate::error::{DpklError, Result};
use crate::linalg::{cholesky, dot, logdet_chol, solve_chol, solve_lu, CholFactor, Matrix, SymMatrix};

/// Posterior variances below zero by more than this are treated as a bug
/// rather than round-off.
pub const VARIANCE_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    Exact,
    #[default]
    Rff,
}

impl std::str::FromStr for KernelMode {
    type Err = DpklError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(KernelMode::Exact),
            "rff" => Ok(KernelMode::Rff),
            other => Err(DpklError::Config(format!("unknown kernel mode `{other}`"))),
        }
    }
}

/// Factorized `K̂ + σ²I` together with `α = (K̂ + σ²I)⁻¹y`.
#[derive(Clone, Debug)]
pub struct GpState {
    mode: KernelMode,
    kernel: SymMatrix,
    features: Option<Matrix>,
    noise_var: f64,
    chol: CholFactor,
    alpha: Vec<f64>,
    y: Vec<f64>,
}

impl GpState {
    pub fn exact(kernel: SymMatrix, y: Vec<f64>, noise_var: f64, base_jitter: f64) -> Result<Self> {
        Self::build(KernelMode::Exact, kernel, None, y, noise_var, base_jitter)
    }

    /// State for `K̂ = R·Rᵀ`.
    pub fn rff(features: Matrix, y: Vec<f64>, noise_var: f64, base_jitter: f64) -> Result<Self> {
        let kernel = SymMatrix::new(features.matmul_t(&features))?;
        Self::build(KernelMode::Rff, kernel, Some(features), y, noise_var, base_jitter)
    }

    fn build(
        mode: KernelMode,
        kernel: SymMatrix,
        features: Option<Matrix>,
        y: Vec<f64>,
        noise_var: f64,
        base_jitter: f64,
    ) -> Result<Self> {
        if y.len() != kernel.n() {
            return Err(DpklError::dims("GP targets", kernel.n(), y.len()));
        }
        if !(noise_var >= 0.0) {
            return Err(DpklError::Config(format!("noise variance must be >= 0, got {noise_var}")));
        }
        let chol = cholesky(&kernel.add_diagonal(noise_var), base_jitter)?;
        let alpha = solve_chol(&chol, &y)?;
        Ok(GpState {
            mode,
            kernel,
            features,
            noise_var,
            chol,
            alpha,
            y,
        })
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.kernel.n()
    }

    pub fn kernel(&self) -> &SymMatrix {
        &self.kernel
    }

    pub fn features(&self) -> Option<&Matrix> {
        self.features.as_ref()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn chol(&self) -> &CholFactor {
        &self.chol
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn jitter_used(&self) -> f64 {
        self.chol.jitter_used()
    }

    /// `(K̂ + σ²I)⁻¹·b`
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        solve_chol(&self.chol, b)
    }
}

/// `½·yᵀα + ½·log det(K̂ + σ²I)`, without the `(n/2)·log 2π` constant.
pub fn nll(state: &GpState) -> f64 {
    0.5 * dot(&state.y, &state.alpha) + 0.5 * logdet_chol(&state.chol)
}

/// `∂nll/∂K̂ = ½((K̂ + σ²I)⁻¹ − ααᵀ)`.
pub fn nll_grad_kernel(state: &GpState) -> SymMatrix {
    let mut g = state.chol.inverse().into_matrix();
    let n = state.n();
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = 0.5 * (g[(i, j)] - state.alpha[i] * state.alpha[j]);
        }
    }
    SymMatrix::new(g).expect("symmetric by construction")
}

/// `∂nll/∂R = 2·(∂nll/∂K̂)·R` for `K̂ = R·Rᵀ`.
pub fn nll_grad_rff(state: &GpState) -> Result<Matrix> {
    let r = state
        .features
        .as_ref()
        .ok_or(DpklError::ModeMismatch { expected: "rff" })?;
    let mut out = nll_grad_kernel(state).matrix().matmul(r);
    out.scale(2.0);
    Ok(out)
}

/// Gaussian predictive distribution of the latent function at one query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub variance: f64,
}

/// `k_** − k_*ᵀ(K̂ + σ²I)⁻¹k_*` without clamping.
pub fn posterior_variance_raw(state: &GpState, k_star: &[f64], k_ss: f64) -> Result<f64> {
    if k_star.len() != state.n() {
        return Err(DpklError::dims("posterior k_*", state.n(), k_star.len()));
    }
    let mut v = k_star.to_vec();
    state.chol.solve_lower_in_place(&mut v);
    Ok(k_ss - dot(&v, &v))
}

fn clamp_variance(raw: f64, k_ss: f64) -> Result<f64> {
    if raw < -VARIANCE_TOLERANCE * k_ss.abs().max(1.0) {
        return Err(DpklError::Internal(format!("negative posterior variance {raw:e}")));
    }
    Ok(raw.max(0.0))
}

pub fn posterior(state: &GpState, k_star: &[f64], k_ss: f64) -> Result<PredictiveDistribution> {
    let raw = posterior_variance_raw(state, k_star, k_ss)?;
    Ok(PredictiveDistribution {
        mean: dot(k_star, &state.alpha),
        variance: clamp_variance(raw, k_ss)?,
    })
}

/// Sum of posterior variances over unlabeled points given their `(k_*, k_**)`.
pub fn variance_regularizer(state: &GpState, cross: &[(Vec<f64>, f64)]) -> Result<f64> {
    if cross.is_empty() {
        return Err(DpklError::EmptyUnlabeledSet);
    }
    cross.iter().try_fold(0.0, |acc, (ks, kss)| {
        let raw = posterior_variance_raw(state, ks, *kss)?;
        Ok(acc + clamp_variance(raw, *kss)?)
    })
}

/// Squared RKHS distance between a query's mean embedding and its projection
/// onto the span of the training embeddings: `k_** − k_*ᵀ·K̂⁻¹·k_*`.
///
/// Uses pivoted Gaussian elimination on the Gram matrix so that it shares no
/// code with the Cholesky-based posterior.
pub fn projection_residual_oracle(kernel: &SymMatrix, k_star: &[f64], k_ss: f64) -> Result<f64> {
    if k_star.len() != kernel.n() {
        return Err(DpklError::dims("projection k_*", kernel.n(), k_star.len()));
    }
    let coeffs = solve_lu(kernel.matrix(), k_star).ok_or(DpklError::NotPositiveDefinite {
        n: kernel.n(),
        max_jitter: 0.0,
    })?;
    let projected_norm: f64 = coeffs.iter().zip(k_star).map(|(c, k)| c * k).sum();
    Ok(k_ss - projected_norm)
}
