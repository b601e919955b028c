use crate::error::{DpklError, Result};
use crate::gp::{posterior, GpState, PredictiveDistribution};
use crate::latentkernel::{
    cross_kernel_matrix, empirical_kernel_exact, rff_feature_matrix, self_kernel_diag, LatentKernelSpec, RffBasis,
};
use crate::linalg::{dot, Matrix};
use crate::metrics::{gaussian_nll, rmse};
use crate::net::ParticleEnsemble;

/// GP over a trained ensemble, conditioned on labeled data. Uses the RFF
/// kernel when a basis is given and the exact empirical kernel otherwise.
#[derive(Clone, Debug)]
pub struct Regressor {
    ensemble: ParticleEnsemble,
    spec: LatentKernelSpec,
    basis: Option<RffBasis>,
    train_embeds: Vec<Matrix>,
    state: GpState,
}

impl Regressor {
    pub fn new(
        ensemble: ParticleEnsemble,
        spec: LatentKernelSpec,
        basis: Option<RffBasis>,
        noise_var: f64,
        base_jitter: f64,
        x: &Matrix,
        y: &[f64],
    ) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(DpklError::dims("regressor targets", x.rows(), y.len()));
        }
        let train_embeds = ensemble.embed(x)?;
        let state = match &basis {
            Some(b) => GpState::rff(rff_feature_matrix(b, &train_embeds, &spec)?, y.to_vec(), noise_var, base_jitter)?,
            None => GpState::exact(empirical_kernel_exact(&spec, &train_embeds)?, y.to_vec(), noise_var, base_jitter)?,
        };
        Ok(Regressor {
            ensemble,
            spec,
            basis,
            train_embeds,
            state,
        })
    }

    pub fn ensemble(&self) -> &ParticleEnsemble {
        &self.ensemble
    }

    pub fn state(&self) -> &GpState {
        &self.state
    }

    /// Latent mean embeddings of `x` (`n × d`).
    pub fn mean_embedding(&self, x: &Matrix) -> Result<Matrix> {
        self.ensemble.mean_embedding(x)
    }

    pub fn noise_var(&self) -> f64 {
        self.state.noise_var()
    }

    /// Latent-function posterior at each row of `x` (normalized units).
    pub fn predict(&self, x: &Matrix) -> Result<Vec<PredictiveDistribution>> {
        if x.rows() == 0 {
            return Ok(Vec::new());
        }
        let q = self.ensemble.embed(x)?;
        let (cross, diag) = match (&self.basis, self.state.features()) {
            (Some(b), Some(r_train)) => {
                let r_q = rff_feature_matrix(b, &q, &self.spec)?;
                let diag = (0..r_q.rows()).map(|u| dot(r_q.row(u), r_q.row(u))).collect();
                (r_q.matmul_t(r_train), diag)
            }
            _ => (
                cross_kernel_matrix(&self.spec, &self.train_embeds, &q)?,
                self_kernel_diag(&self.spec, &q)?,
            ),
        };
        (0..x.rows())
            .map(|u| posterior(&self.state, cross.row(u), diag[u]))
            .collect()
    }

    /// RMSE and mean predictive NLL (observation noise included).
    pub fn evaluate(&self, x: &Matrix, y: &[f64]) -> Result<(f64, f64)> {
        let preds = self.predict(x)?;
        let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
        let nll = preds
            .iter()
            .zip(y)
            .map(|(p, &t)| gaussian_nll(t, p.mean, p.variance + self.noise_var()))
            .sum::<f64>()
            / y.len().max(1) as f64;
        Ok((rmse(&means, y), nll))
    }
}
