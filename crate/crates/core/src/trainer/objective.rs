//! The scalar training objective and its per-particle gradients.
//!
//! The objective is written as a function of the kernel entries over all
//! labeled and unlabeled points, `J(K)`. Its symmetric gradient `∂J/∂K` is
//! chained to embedding cotangents (directly in exact mode, through `R` in
//! RFF mode) and then through each particle's network.

use rayon::prelude::*;

use crate::error::{DpklError, Result};
use crate::gp::{nll, nll_grad_kernel, GpState, KernelMode};
use crate::latentkernel::{
    cross_kernel_matrix, empirical_kernel_exact, exact_embedding_cotangents, rff_embedding_cotangents,
    rff_feature_matrix, self_kernel_diag, RffBasis,
};
use crate::linalg::{axpy, dot, Matrix, SymMatrix};
use crate::net::{ForwardTrace, ParticleEnsemble};

use super::config::{TrainConfig, TrainMode};

/// Inputs for one objective evaluation. Targets are expected normalized.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveData<'a> {
    pub labeled: &'a Matrix,
    pub y: &'a [f64],
    pub unlabeled: Option<&'a Matrix>,
}

#[derive(Clone, Debug)]
pub struct LossGrads {
    /// The value being minimized.
    pub objective: f64,
    /// GP negative log marginal likelihood of the labeled data.
    pub nll: f64,
    /// Sum of unlabeled posterior variances (SSDPKL only).
    pub variance_sum: Option<f64>,
    pub jitter: f64,
    /// `∂objective/∂w_l` for each particle.
    pub grads: Vec<Vec<f64>>,
}

fn rows_range(m: &Matrix, start: usize, end: usize) -> Matrix {
    let idx: Vec<usize> = (start..end).collect();
    m.select_rows(&idx)
}

/// Kernel blocks over labeled (L) and unlabeled (U) points.
struct KernelBlocks {
    state: GpState,
    /// `n_u × n_l`
    cross: Option<Matrix>,
    /// `k_**` per unlabeled point
    diag_u: Option<Vec<f64>>,
    /// RFF features over all points.
    features: Option<Matrix>,
}

fn kernel_blocks(
    embeds: &[Matrix],
    n_l: usize,
    y: &[f64],
    basis: Option<&RffBasis>,
    config: &TrainConfig,
) -> Result<KernelBlocks> {
    let n_all = embeds[0].rows();
    let has_u = n_all > n_l;
    match config.kernel_mode {
        KernelMode::Exact => {
            let e_l: Vec<Matrix> = embeds.iter().map(|e| rows_range(e, 0, n_l)).collect();
            let k_ll = empirical_kernel_exact(&config.kernel, &e_l)?;
            let state = GpState::exact(k_ll, y.to_vec(), config.noise_var, config.base_jitter)?;
            let (cross, diag_u) = if has_u {
                let e_u: Vec<Matrix> = embeds.iter().map(|e| rows_range(e, n_l, n_all)).collect();
                (
                    Some(cross_kernel_matrix(&config.kernel, &e_l, &e_u)?),
                    Some(self_kernel_diag(&config.kernel, &e_u)?),
                )
            } else {
                (None, None)
            };
            Ok(KernelBlocks {
                state,
                cross,
                diag_u,
                features: None,
            })
        }
        KernelMode::Rff => {
            let basis = basis.ok_or(DpklError::ModeMismatch { expected: "rff" })?;
            let r = rff_feature_matrix(basis, embeds, &config.kernel)?;
            let r_l = rows_range(&r, 0, n_l);
            let state = GpState::rff(r_l.clone(), y.to_vec(), config.noise_var, config.base_jitter)?;
            let (cross, diag_u) = if has_u {
                let r_u = rows_range(&r, n_l, n_all);
                let diag = (0..r_u.rows()).map(|u| dot(r_u.row(u), r_u.row(u))).collect();
                (Some(r_u.matmul_t(&r_l)), Some(diag))
            } else {
                (None, None)
            };
            Ok(KernelBlocks {
                state,
                cross,
                diag_u,
                features: Some(r),
            })
        }
    }
}

/// Objective value and symmetric gradient `∂J/∂K` over all points.
fn objective_and_kernel_grad(
    blocks: &KernelBlocks,
    n_l: usize,
    n_all: usize,
    config: &TrainConfig,
) -> Result<(f64, f64, Option<f64>, Matrix)> {
    let state = &blocks.state;
    let data_nll = nll(state);
    let g_nll = nll_grad_kernel(state);
    let mut g = Matrix::zeros(n_all, n_all);

    if config.mode != TrainMode::Ssdpkl {
        for i in 0..n_l {
            g.row_mut(i)[..n_l].copy_from_slice(g_nll.row_slice(i));
        }
        return Ok((data_nll, data_nll, None, g));
    }

    let cross = blocks.cross.as_ref().ok_or(DpklError::EmptyUnlabeledSet)?;
    let diag_u = blocks.diag_u.as_ref().ok_or(DpklError::EmptyUnlabeledSet)?;
    let n_u = cross.rows();
    if n_u == 0 {
        return Err(DpklError::EmptyUnlabeledSet);
    }
    let label_scale = 1.0 / n_l as f64;
    let c = config.ssdpkl_alpha / n_u as f64;

    // v_u = (K + σ²I)⁻¹ k_u
    let v: Vec<Vec<f64>> = (0..n_u)
        .map(|u| state.solve(cross.row(u)))
        .collect::<Result<_>>()?;
    let variances: Vec<f64> = (0..n_u).map(|u| diag_u[u] - dot(cross.row(u), &v[u])).collect();
    let variance_sum: f64 = variances.iter().sum();
    let objective = label_scale * data_nll + c * variance_sum;

    for i in 0..n_l {
        let row = &mut g.row_mut(i)[..n_l];
        axpy(label_scale, g_nll.row_slice(i), row);
    }
    for vu in &v {
        for i in 0..n_l {
            let s = c * vu[i];
            if s != 0.0 {
                axpy(s, vu, &mut g.row_mut(i)[..n_l]);
            }
        }
    }
    for (u, vu) in v.iter().enumerate() {
        let ru = n_l + u;
        for i in 0..n_l {
            g[(ru, i)] = -c * vu[i];
            g[(i, ru)] = -c * vu[i];
        }
        g[(ru, ru)] = c;
    }
    Ok((objective, data_nll, Some(variance_sum), g))
}

trait RowSlice {
    fn row_slice(&self, i: usize) -> &[f64];
}

impl RowSlice for SymMatrix {
    fn row_slice(&self, i: usize) -> &[f64] {
        self.matrix().row(i)
    }
}

/// Objective value and full gradient with respect to every particle.
///
/// DPKL and DKL minimize the labeled NLL; SSDPKL minimizes
/// `nll/n_l + (α/n_u)·Σ_u σ²(x_u)`.
pub fn per_particle_loss_grads(
    ensemble: &ParticleEnsemble,
    basis: Option<&RffBasis>,
    data: &ObjectiveData<'_>,
    config: &TrainConfig,
) -> Result<LossGrads> {
    let n_l = data.labeled.rows();
    if data.y.len() != n_l {
        return Err(DpklError::dims("labeled targets", n_l, data.y.len()));
    }
    if n_l == 0 {
        return Err(DpklError::InsufficientData("no labeled points".into()));
    }
    let x_all = match (config.mode, data.unlabeled) {
        (TrainMode::Ssdpkl, Some(u)) if u.rows() > 0 => data.labeled.vstack(u),
        (TrainMode::Ssdpkl, _) => return Err(DpklError::EmptyUnlabeledSet),
        _ => data.labeled.clone(),
    };
    let n_all = x_all.rows();
    let arch = &ensemble.arch;

    let traces: Vec<ForwardTrace> = ensemble
        .particles
        .par_iter()
        .map(|p| arch.forward_trace(p, &x_all))
        .collect::<Result<_>>()?;
    let embeds: Vec<Matrix> = traces.iter().map(|t| t.output().clone()).collect();

    let blocks = kernel_blocks(&embeds, n_l, data.y, basis, config)?;
    let (objective, data_nll, variance_sum, g) = objective_and_kernel_grad(&blocks, n_l, n_all, config)?;

    let cotangents = match config.kernel_mode {
        KernelMode::Exact => exact_embedding_cotangents(&config.kernel, &embeds, &g)?,
        KernelMode::Rff => {
            let r = blocks.features.as_ref().expect("rff features present");
            let mut d_r = g.matmul(r);
            d_r.scale(2.0);
            rff_embedding_cotangents(basis.expect("checked above"), &embeds, &config.kernel, &d_r)?
        }
    };

    let grads: Vec<Vec<f64>> = ensemble
        .particles
        .par_iter()
        .zip(traces.par_iter())
        .zip(cotangents.par_iter())
        .map(|((p, trace), cot)| arch.backward_from_trace(p, &x_all, trace, cot))
        .collect::<Result<_>>()?;

    Ok(LossGrads {
        objective,
        nll: data_nll,
        variance_sum,
        jitter: blocks.state.jitter_used(),
        grads,
    })
}
