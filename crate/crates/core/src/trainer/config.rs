use serde::{Deserialize, Serialize};

use crate::error::{DpklError, Result};
use crate::gp::KernelMode;
use crate::latentkernel::LatentKernelSpec;
use crate::net::{Activation, MlpArchitecture};

use super::particles::AdamConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Supervised particle training on the GP marginal likelihood.
    #[default]
    Dpkl,
    /// DPKL plus the unlabeled posterior-variance penalty.
    Ssdpkl,
    /// Single deterministic network (`m = 1`), plain gradient descent.
    Dkl,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Dpkl => "dpkl",
            TrainMode::Ssdpkl => "ssdpkl",
            TrainMode::Dkl => "dkl",
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = DpklError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dpkl" => Ok(TrainMode::Dpkl),
            "ssdpkl" => Ok(TrainMode::Ssdpkl),
            "dkl" => Ok(TrainMode::Dkl),
            other => Err(DpklError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// All training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub kernel_mode: KernelMode,
    /// Particle count.
    pub m: usize,
    /// Random Fourier features.
    pub q: usize,
    pub learning_rate: f64,
    pub noise_var: f64,
    pub ssdpkl_alpha: f64,
    pub max_epochs: usize,
    pub val_fraction: f64,
    pub early_stop_check_every: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub kernel: LatentKernelSpec,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
    pub base_jitter: f64,
    /// Fixed κ bandwidth; `None` uses the median heuristic.
    pub kappa_bandwidth: Option<f64>,
    /// Unlabeled points used per epoch in SSDPKL.
    pub unlabeled_cap: usize,
    /// Minibatch size (classification only).
    pub batch_size: usize,
    /// L2 penalty on softmax-head particles (classification only).
    pub classifier_l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Dpkl,
            kernel_mode: KernelMode::Rff,
            m: 50,
            q: 100,
            learning_rate: 1e-3,
            noise_var: 0.1,
            ssdpkl_alpha: 1.0,
            max_epochs: 200,
            val_fraction: 0.1,
            early_stop_check_every: 10,
            seed: 0,
            adam: AdamConfig::default(),
            kernel: LatentKernelSpec::default(),
            hidden_dims: vec![100, 50, 50],
            latent_dim: 2,
            activation: Activation::Relu,
            base_jitter: crate::linalg::DEFAULT_BASE_JITTER,
            kappa_bandwidth: None,
            unlabeled_cap: 50_000,
            batch_size: 16,
            classifier_l2: 0.0,
        }
    }
}

impl TrainConfig {
    /// Defaults for the softmax classifier: one hidden layer of 30 units,
    /// a 30-dimensional latent space, 5 particles, 100 epochs.
    pub fn classification_default() -> Self {
        TrainConfig {
            m: 5,
            max_epochs: 100,
            hidden_dims: vec![30],
            latent_dim: 30,
            ..TrainConfig::default()
        }
    }

    pub fn architecture(&self, input_dim: usize) -> Result<MlpArchitecture> {
        MlpArchitecture::new(input_dim, self.hidden_dims.clone(), self.latent_dim, self.activation)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DpklError::Config(msg));
        if self.m == 0 {
            return bad("m must be >= 1".into());
        }
        if self.mode == TrainMode::Dkl && self.m != 1 {
            return bad(format!("dkl mode requires m = 1, got m = {}", self.m));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.noise_var > 0.0) {
            return bad(format!("noise_var must be > 0, got {}", self.noise_var));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if self.q == 0 {
            return bad("q must be >= 1".into());
        }
        if self.early_stop_check_every == 0 {
            return bad("early_stop_check_every must be >= 1".into());
        }
        if !(self.ssdpkl_alpha >= 0.0) {
            return bad(format!("ssdpkl_alpha must be >= 0, got {}", self.ssdpkl_alpha));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.unlabeled_cap == 0 {
            return bad("unlabeled_cap must be >= 1".into());
        }
        if let Some(h) = self.kappa_bandwidth {
            if !(h > 0.0) {
                return bad(format!("kappa_bandwidth must be > 0, got {h}"));
            }
        }
        LatentKernelSpec::new(self.kernel.amplitude, self.kernel.bandwidth)?;
        self.architecture(1)?;
        Ok(())
    }

    pub(crate) fn coupling(&self) -> super::particles::Coupling {
        use super::particles::Coupling;
        match (self.mode, self.kappa_bandwidth) {
            (TrainMode::Dkl, _) => Coupling::Identity,
            (_, Some(h)) => Coupling::KappaFixed(h),
            (_, None) => Coupling::Kappa,
        }
    }
}
