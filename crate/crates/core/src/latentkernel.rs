//! Kernels between latent distributions.
//!
//! Each input point is represented by its `m` particle embeddings. The
//! distributional kernel is the double particle average of an RBF base
//! kernel; the random-Fourier-feature path replaces it by `R·Rᵀ` where `R`
//! holds particle-averaged cosine features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DpklError, Result};
use crate::linalg::{axpy, dot, sq_dist, Matrix, SymMatrix};

/// RBF base kernel `k(z, z') = a·exp(−‖z − z'‖² / (2h²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentKernelSpec {
    pub amplitude: f64,
    pub bandwidth: f64,
}

impl Default for LatentKernelSpec {
    /// `½·exp(−½‖z − z'‖²)`
    fn default() -> Self {
        LatentKernelSpec {
            amplitude: 0.5,
            bandwidth: 1.0,
        }
    }
}

impl LatentKernelSpec {
    pub fn new(amplitude: f64, bandwidth: f64) -> Result<Self> {
        if !(amplitude > 0.0) || !(bandwidth > 0.0) {
            return Err(DpklError::Config(format!(
                "kernel amplitude and bandwidth must be positive (got {amplitude}, {bandwidth})"
            )));
        }
        Ok(LatentKernelSpec {
            amplitude,
            bandwidth,
        })
    }

    #[inline]
    fn gamma(&self) -> f64 {
        0.5 / (self.bandwidth * self.bandwidth)
    }

    #[inline]
    fn eval_unchecked(&self, z: &[f64], zp: &[f64]) -> f64 {
        self.amplitude * (-self.gamma() * sq_dist(z, zp)).exp()
    }
}

pub fn base_kernel(spec: &LatentKernelSpec, z: &[f64], zp: &[f64]) -> Result<f64> {
    if z.len() != zp.len() {
        return Err(DpklError::dims("base_kernel", z.len(), zp.len()));
    }
    Ok(spec.eval_unchecked(z, zp))
}

/// `∂k(z, z')/∂z = −k(z, z')·(z − z')/h²`.
pub fn base_kernel_grad(spec: &LatentKernelSpec, z: &[f64], zp: &[f64]) -> Result<Vec<f64>> {
    if z.len() != zp.len() {
        return Err(DpklError::dims("base_kernel_grad", z.len(), zp.len()));
    }
    let k = spec.eval_unchecked(z, zp);
    let s = -k / (spec.bandwidth * spec.bandwidth);
    Ok(z.iter().zip(zp).map(|(a, b)| s * (a - b)).collect())
}

fn check_embeddings(embeds: &[Matrix], context: &'static str) -> Result<(usize, usize)> {
    let first = embeds
        .first()
        .ok_or_else(|| DpklError::dims(context, 1, 0))?;
    let (n, d) = (first.rows(), first.cols());
    for e in embeds {
        if e.rows() != n || e.cols() != d {
            return Err(DpklError::dims(context, n * d, e.rows() * e.cols()));
        }
    }
    Ok((n, d))
}

/// Double particle average of `k` between row `i` of `a` and row `j` of `b`.
#[inline]
fn mean_kernel(spec: &LatentKernelSpec, a: &[Matrix], i: usize, b: &[Matrix], j: usize) -> f64 {
    let mut s = 0.0;
    for za in a {
        let zi = za.row(i);
        for zb in b {
            s += spec.eval_unchecked(zi, zb.row(j));
        }
    }
    s / (a.len() * b.len()) as f64
}

/// `K̂ᵢⱼ = (1/m²)·Σ_{l,l'} k(zᵢ⁽ˡ⁾, zⱼ⁽ˡ'⁾)` over one set of per-particle embeddings.
pub fn empirical_kernel_exact(spec: &LatentKernelSpec, embeds: &[Matrix]) -> Result<SymMatrix> {
    let (n, _) = check_embeddings(embeds, "empirical_kernel_exact")?;
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = mean_kernel(spec, embeds, i, embeds, j);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    SymMatrix::new(k)
}

/// Cross kernel between query points (rows) and training points (columns).
pub fn cross_kernel_matrix(
    spec: &LatentKernelSpec,
    train: &[Matrix],
    query: &[Matrix],
) -> Result<Matrix> {
    let (n, d) = check_embeddings(train, "cross_kernel (train)")?;
    let (nq, dq) = check_embeddings(query, "cross_kernel (query)")?;
    if d != dq {
        return Err(DpklError::dims("cross_kernel latent dim", d, dq));
    }
    Ok(Matrix::from_fn(nq, n, |u, i| mean_kernel(spec, query, u, train, i)))
}

/// `k_**` for every query row.
pub fn self_kernel_diag(spec: &LatentKernelSpec, query: &[Matrix]) -> Result<Vec<f64>> {
    let (nq, _) = check_embeddings(query, "self_kernel_diag")?;
    Ok((0..nq).map(|u| mean_kernel(spec, query, u, query, u)).collect())
}

/// `(k_*, k_**)` for a single query point given its per-particle embeddings
/// (one row each).
pub fn cross_kernel(
    spec: &LatentKernelSpec,
    train: &[Matrix],
    query: &[Matrix],
) -> Result<(Vec<f64>, f64)> {
    let (nq, _) = check_embeddings(query, "cross_kernel (query)")?;
    if nq != 1 {
        return Err(DpklError::dims("cross_kernel query rows", 1, nq));
    }
    if train.len() != query.len() {
        return Err(DpklError::dims("cross_kernel particle count", train.len(), query.len()));
    }
    let k_star = cross_kernel_matrix(spec, train, query)?.into_vec();
    let k_ss = mean_kernel(spec, query, 0, query, 0);
    Ok((k_star, k_ss))
}

/// Cotangents of a scalar objective with respect to every embedding, given
/// the symmetric gradient `g = ∂J/∂K` over all `N` points.
///
/// Zero entries of `g` are skipped, so block-sparse gradients stay cheap.
pub fn exact_embedding_cotangents(
    spec: &LatentKernelSpec,
    embeds: &[Matrix],
    g: &Matrix,
) -> Result<Vec<Matrix>> {
    let (n, d) = check_embeddings(embeds, "exact_embedding_cotangents")?;
    if g.rows() != n || g.cols() != n {
        return Err(DpklError::dims("kernel gradient", n * n, g.rows() * g.cols()));
    }
    let m = embeds.len();
    let scale = 2.0 / (m * m) as f64;
    let inv_h2 = 1.0 / (spec.bandwidth * spec.bandwidth);
    let mut out = vec![Matrix::zeros(n, d); m];
    let mut acc = vec![0.0; d];
    for (l, zl) in embeds.iter().enumerate() {
        for i in 0..n {
            let zi = zl.row(i);
            let row_g = g.row(i);
            for (j, &gij) in row_g.iter().enumerate() {
                if gij == 0.0 {
                    continue;
                }
                acc.iter_mut().for_each(|v| *v = 0.0);
                for zp in embeds {
                    let zj = zp.row(j);
                    let kv = spec.eval_unchecked(zi, zj);
                    for c in 0..d {
                        acc[c] -= kv * (zi[c] - zj[c]);
                    }
                }
                axpy(scale * gij * inv_h2, &acc, out[l].row_mut(i));
            }
        }
    }
    Ok(out)
}

/// Sampled frequencies and phases for the random Fourier feature map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RffBasis {
    pub q: usize,
    /// `q × d`, one frequency vector per row.
    pub frequencies: Matrix,
    pub phases: Vec<f64>,
    pub seed: u64,
}

impl RffBasis {
    pub fn dim(&self) -> usize {
        self.frequencies.cols()
    }
}

/// Frequencies `∼ N(0, I/h²)`, phases `∼ U[0, 2π)`.
pub fn sample_rff_basis(spec: &LatentKernelSpec, d: usize, q: usize, seed: u64) -> Result<RffBasis> {
    if q == 0 || d == 0 {
        return Err(DpklError::Config("RFF basis needs q >= 1 and d >= 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / spec.bandwidth).expect("positive bandwidth");
    let frequencies = Matrix::from_fn(q, d, |_, _| normal.sample(&mut rng));
    let phases = (0..q)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    Ok(RffBasis {
        q,
        frequencies,
        phases,
        seed,
    })
}

/// `Rᵢⱼ = √a·(1/m)·Σ_l √(2/q)·cos(vⱼ·zᵢ⁽ˡ⁾ + bⱼ)`.
pub fn rff_feature_matrix(
    basis: &RffBasis,
    embeds: &[Matrix],
    spec: &LatentKernelSpec,
) -> Result<Matrix> {
    let (n, d) = check_embeddings(embeds, "rff_feature_matrix")?;
    if d != basis.dim() {
        return Err(DpklError::dims("rff_feature_matrix latent dim", basis.dim(), d));
    }
    let q = basis.q;
    let scale = spec.amplitude.sqrt() * (2.0 / q as f64).sqrt() / embeds.len() as f64;
    let mut r = Matrix::zeros(n, q);
    for z in embeds {
        for i in 0..n {
            let zi = z.row(i);
            let row = r.row_mut(i);
            for j in 0..q {
                row[j] += (dot(basis.frequencies.row(j), zi) + basis.phases[j]).cos();
            }
        }
    }
    r.scale(scale);
    Ok(r)
}

/// Chains `∂J/∂R` (`N × q`) back to every particle embedding.
pub fn rff_embedding_cotangents(
    basis: &RffBasis,
    embeds: &[Matrix],
    spec: &LatentKernelSpec,
    d_r: &Matrix,
) -> Result<Vec<Matrix>> {
    let (n, d) = check_embeddings(embeds, "rff_embedding_cotangents")?;
    if d != basis.dim() {
        return Err(DpklError::dims("rff cotangent latent dim", basis.dim(), d));
    }
    if d_r.rows() != n || d_r.cols() != basis.q {
        return Err(DpklError::dims("rff cotangent", n * basis.q, d_r.rows() * d_r.cols()));
    }
    let scale = spec.amplitude.sqrt() * (2.0 / basis.q as f64).sqrt() / embeds.len() as f64;
    Ok(embeds
        .iter()
        .map(|z| {
            let mut c = Matrix::zeros(n, d);
            for i in 0..n {
                let zi = z.row(i);
                let gi = d_r.row(i);
                let ci = c.row_mut(i);
                for j in 0..basis.q {
                    if gi[j] == 0.0 {
                        continue;
                    }
                    let s = (dot(basis.frequencies.row(j), zi) + basis.phases[j]).sin();
                    axpy(-scale * gi[j] * s, basis.frequencies.row(j), ci);
                }
            }
            c
        })
        .collect())
}
