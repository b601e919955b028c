//! Multilayer perceptron particles and their hand-written backward pass.
//!
//! Parameters are stored flat. Layer `k` occupies `fan_in·fan_out` weights in
//! input-major order (entry `(r, c)` maps input `r` to output `c`) followed by
//! `fan_out` biases, so a layer computes `Z = X·W + b`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DpklError, Result};
use crate::linalg::{axpy, dot, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = DpklError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(DpklError::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer shapes of the network `g_w : ℝᴰ → ℝᵈ`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
}

impl MlpArchitecture {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        latent_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 || latent_dim == 0 || hidden_dims.contains(&0) {
            return Err(DpklError::Config(
                "all layer widths must be positive".to_string(),
            ));
        }
        Ok(MlpArchitecture {
            input_dim,
            hidden_dims,
            latent_dim,
            activation,
        })
    }

    /// `D-100-50-50-2`, the regression network.
    pub fn regression_default(input_dim: usize) -> Self {
        MlpArchitecture {
            input_dim,
            hidden_dims: vec![100, 50, 50],
            latent_dim: 2,
            activation: Activation::Relu,
        }
    }

    /// `(fan_in, fan_out)` for every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.latent_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| (i + 1) * o)
            .sum()
    }

    fn offsets(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.layer_dims()
            .into_iter()
            .map(|(i, o)| {
                let start = off;
                off += (i + 1) * o;
                (start, i, o, off)
            })
            .collect()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(DpklError::dims("network input columns", self.input_dim, x.cols()));
        }
        Ok(())
    }

    fn check_params(&self, p: &MlpParams) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(DpklError::dims("parameter vector", self.param_count(), p.len()));
        }
        Ok(())
    }

    /// Evaluates `g_w` on every row of `x`.
    pub fn forward(&self, p: &MlpParams, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_trace(p, x)?.into_output())
    }

    /// Forward pass keeping every layer's output for a later backward pass.
    pub fn forward_trace(&self, p: &MlpParams, x: &Matrix) -> Result<ForwardTrace> {
        self.check_input(x)?;
        self.check_params(p)?;
        let offsets = self.offsets();
        let last = offsets.len() - 1;
        let mut outputs: Vec<Matrix> = Vec::with_capacity(offsets.len());
        for (k, &(start, fan_in, fan_out, _)) in offsets.iter().enumerate() {
            let input = if k == 0 { x } else { &outputs[k - 1] };
            let w = &p.values[start..start + fan_in * fan_out];
            let b = &p.values[start + fan_in * fan_out..start + (fan_in + 1) * fan_out];
            let mut out = Matrix::zeros(input.rows(), fan_out);
            for i in 0..input.rows() {
                let row = out.row_mut(i);
                row.copy_from_slice(b);
                for (r, &a) in input.row(i).iter().enumerate() {
                    if a != 0.0 {
                        axpy(a, &w[r * fan_out..(r + 1) * fan_out], row);
                    }
                }
                if k != last {
                    let act = self.activation;
                    row.iter_mut().for_each(|v| *v = act.apply(*v));
                }
            }
            outputs.push(out);
        }
        Ok(ForwardTrace { outputs })
    }

    /// Vector–Jacobian product: the gradient of `Σᵢⱼ Gᵢⱼ·Zᵢⱼ` with respect to
    /// the flat parameters, reusing a trace from [`Self::forward_trace`].
    pub fn backward_from_trace(
        &self,
        p: &MlpParams,
        x: &Matrix,
        trace: &ForwardTrace,
        g: &Matrix,
    ) -> Result<Vec<f64>> {
        self.check_params(p)?;
        let out = trace.output();
        if g.rows() != out.rows() || g.cols() != out.cols() {
            return Err(DpklError::dims(
                "output cotangent",
                out.rows() * out.cols(),
                g.rows() * g.cols(),
            ));
        }
        let offsets = self.offsets();
        let mut grad = vec![0.0; p.len()];
        let mut delta = g.clone();
        for k in (0..offsets.len()).rev() {
            let (start, fan_in, fan_out, _) = offsets[k];
            let input = if k == 0 { x } else { &trace.outputs[k - 1] };
            let (gw, gb) = grad[start..start + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
            for i in 0..input.rows() {
                let d = delta.row(i);
                axpy(1.0, d, gb);
                for (r, &a) in input.row(i).iter().enumerate() {
                    if a != 0.0 {
                        axpy(a, d, &mut gw[r * fan_out..(r + 1) * fan_out]);
                    }
                }
            }
            if k > 0 {
                let w = &p.values[start..start + fan_in * fan_out];
                let act = self.activation;
                let mut next = Matrix::zeros(input.rows(), fan_in);
                for i in 0..input.rows() {
                    let d = delta.row(i);
                    let a_row = input.row(i);
                    let nrow = next.row_mut(i);
                    for r in 0..fan_in {
                        let da = act.derivative_from_output(a_row[r]);
                        if da != 0.0 {
                            nrow[r] = da * dot(&w[r * fan_out..(r + 1) * fan_out], d);
                        }
                    }
                }
                delta = next;
            }
        }
        Ok(grad)
    }

    /// Convenience wrapper running the forward pass internally.
    pub fn backward_params(&self, p: &MlpParams, x: &Matrix, g: &Matrix) -> Result<Vec<f64>> {
        let trace = self.forward_trace(p, x)?;
        self.backward_from_trace(p, x, &trace, g)
    }
}

/// Per-layer outputs from a forward pass; the last entry is the embedding.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    outputs: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("at least one layer")
    }

    pub fn into_output(mut self) -> Matrix {
        self.outputs.pop().expect("at least one layer")
    }
}

/// Flat parameter vector of one particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MlpParams {
    values: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(arch: &MlpArchitecture) -> Self {
        MlpParams {
            values: vec![0.0; arch.param_count()],
        }
    }

    pub fn from_flat(arch: &MlpArchitecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(DpklError::dims("parameter vector", arch.param_count(), values.len()));
        }
        Ok(MlpParams { values })
    }

    /// Builds parameters from conventional `(fan_out × fan_in)` weight matrices
    /// and bias vectors, so that each layer computes `X·Wᵀ + b`.
    pub fn from_layers(arch: &MlpArchitecture, layers: &[(Matrix, Vec<f64>)]) -> Result<Self> {
        let dims = arch.layer_dims();
        if layers.len() != dims.len() {
            return Err(DpklError::dims("layer count", dims.len(), layers.len()));
        }
        let mut values = Vec::with_capacity(arch.param_count());
        for ((w, b), &(fan_in, fan_out)) in layers.iter().zip(&dims) {
            if w.rows() != fan_out || w.cols() != fan_in {
                return Err(DpklError::dims("layer weight", fan_out * fan_in, w.rows() * w.cols()));
            }
            if b.len() != fan_out {
                return Err(DpklError::dims("layer bias", fan_out, b.len()));
            }
            values.extend_from_slice(w.transpose().as_slice());
            values.extend_from_slice(b);
        }
        Ok(MlpParams { values })
    }

    /// Conventional `(fan_out × fan_in)` weight matrix and bias of layer `k`.
    pub fn layer(&self, arch: &MlpArchitecture, k: usize) -> (Matrix, Vec<f64>) {
        let (start, fan_in, fan_out, _) = arch.offsets()[k];
        let w = Matrix::from_vec(fan_in, fan_out, self.values[start..start + fan_in * fan_out].to_vec())
            .expect("offsets consistent");
        let b = self.values[start + fan_in * fan_out..start + (fan_in + 1) * fan_out].to_vec();
        (w.transpose(), b)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for MlpParams {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

impl AsMut<[f64]> for MlpParams {
    fn as_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// `m` particles sharing one architecture: the empirical stand-in for `p(W)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub arch: MlpArchitecture,
    pub seed: u64,
    pub particles: Vec<MlpParams>,
}

impl ParticleEnsemble {
    pub fn m(&self) -> usize {
        self.particles.len()
    }

    /// Latent embeddings of `x` under every particle, in particle order.
    pub fn embed(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.particles
            .iter()
            .map(|p| self.arch.forward(p, x))
            .collect()
    }

    /// Particle-averaged embedding of every row of `x`.
    pub fn mean_embedding(&self, x: &Matrix) -> Result<Matrix> {
        let embeds = self.embed(x)?;
        Ok(mean_of(&embeds))
    }
}

/// Element-wise mean of equally shaped matrices, summed in order.
pub fn mean_of(mats: &[Matrix]) -> Matrix {
    let mut acc = Matrix::zeros(mats[0].rows(), mats[0].cols());
    for m in mats {
        axpy(1.0, m.as_slice(), acc.as_mut_slice());
    }
    acc.scale(1.0 / mats.len() as f64);
    acc
}

/// Draws `m` particles with He-scaled Gaussian weights (`std = √(2/fan_in)`)
/// and zero biases.
pub fn init_ensemble(arch: &MlpArchitecture, m: usize, seed: u64) -> Result<ParticleEnsemble> {
    if m == 0 {
        return Err(DpklError::Config("particle count must be >= 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let particles = (0..m).map(|_| init_params(arch, &mut rng)).collect();
    Ok(ParticleEnsemble {
        arch: arch.clone(),
        seed,
        particles,
    })
}

fn init_params(arch: &MlpArchitecture, rng: &mut ChaCha8Rng) -> MlpParams {
    let mut values = Vec::with_capacity(arch.param_count());
    for (fan_in, fan_out) in arch.layer_dims() {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        values.extend((0..fan_in * fan_out).map(|_| normal.sample(rng)));
        values.extend(std::iter::repeat(0.0).take(fan_out));
    }
    MlpParams { values }
}
