//! Dense row-major matrices and the Cholesky machinery used by the GP.
//!
//! Everything is `f64`; sizes here stay in the hundreds so plain O(n³)
//! factorizations are used throughout.

use serde::{Deserialize, Serialize};

use crate::error::{DpklError, Result};

/// Number of jitter escalation steps tried after the unjittered attempt.
pub const JITTER_STEPS: i32 = 7;

/// Default starting jitter for [`cholesky`].
pub const DEFAULT_BASE_JITTER: f64 = 1e-8;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DpklError::dims("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out_row);
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        Matrix::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "vstack column mismatch");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        }
    }

    /// Gathers the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a·x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Square symmetric matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Wraps `m`, checking squareness and symmetry to within 1e-12 of the
    /// mean of each mirrored pair. The stored matrix is exactly symmetrized.
    pub fn new(mut m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(DpklError::dims("SymMatrix (square)", m.rows(), m.cols()));
        }
        if m.rows() == 0 {
            return Err(DpklError::dims("SymMatrix (n >= 1)", 1, 0));
        }
        let n = m.rows();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                let mean = 0.5 * (a + b);
                if (a - b).abs() > 1e-12 * mean.abs().max(1.0) {
                    return Err(DpklError::Internal(format!(
                        "matrix not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
                m[(i, j)] = mean;
                m[(j, i)] = mean;
            }
        }
        Ok(SymMatrix(m))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Returns `self + s·I`.
    pub fn add_diagonal(&self, s: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.rows() {
            m[(i, i)] += s;
        }
        SymMatrix(m)
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Lower Cholesky factor `L` with `L·Lᵀ = A + jitter_used·I`.
#[derive(Clone, Debug)]
pub struct CholFactor {
    l: Matrix,
    jitter_used: f64,
}

impl CholFactor {
    pub fn n(&self) -> usize {
        self.l.rows()
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    /// Solves `L·x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            let row = self.l.row(i);
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    /// Solves `Lᵀ·x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.n();
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    /// `(L·Lᵀ)⁻¹` as a dense symmetric matrix.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.n();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            self.solve_lower_in_place(&mut e);
            self.solve_upper_in_place(&mut e);
            for i in 0..n {
                inv[(i, j)] = e[i];
            }
        }
        // symmetrize away round-off
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = m;
                inv[(j, i)] = m;
            }
        }
        SymMatrix(inv)
    }
}

fn try_cholesky(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s = dot(&l.row(i)[..j], &l.row(j)[..j]);
            if i == j {
                let d = a[(i, i)] + jitter - s;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[(i, i)] = d.sqrt();
            } else {
                l[(i, j)] = (a[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Cholesky factorization with jitter escalation.
///
/// Tries no jitter first, then `base_jitter·10^k` for `k = 0..7`.
pub fn cholesky(a: &SymMatrix, base_jitter: f64) -> Result<CholFactor> {
    if base_jitter < 0.0 || !base_jitter.is_finite() {
        return Err(DpklError::Config(format!(
            "base_jitter must be finite and >= 0, got {base_jitter}"
        )));
    }
    if let Some(l) = try_cholesky(a.matrix(), 0.0) {
        return Ok(CholFactor { l, jitter_used: 0.0 });
    }
    let mut max_jitter = 0.0;
    if base_jitter > 0.0 {
        for k in 0..JITTER_STEPS {
            let jitter = base_jitter * 10f64.powi(k);
            max_jitter = jitter;
            if let Some(l) = try_cholesky(a.matrix(), jitter) {
                return Ok(CholFactor {
                    l,
                    jitter_used: jitter,
                });
            }
        }
    }
    Err(DpklError::NotPositiveDefinite {
        n: a.n(),
        max_jitter,
    })
}

/// Solves `(L·Lᵀ)·x = b`.
pub fn solve_chol(f: &CholFactor, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != f.n() {
        return Err(DpklError::dims("solve_chol", f.n(), b.len()));
    }
    let mut x = b.to_vec();
    f.solve_lower_in_place(&mut x);
    f.solve_upper_in_place(&mut x);
    Ok(x)
}

/// `log det(L·Lᵀ) = 2·Σ log Lᵢᵢ`.
pub fn logdet_chol(f: &CholFactor) -> f64 {
    2.0 * (0..f.n()).map(|i| f.l[(i, i)].ln()).sum::<f64>()
}

/// Solves a general square system by Gaussian elimination with partial
/// pivoting. Returns `None` if a pivot falls below `1e-14` times the largest
/// absolute entry.
pub fn solve_lu(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    assert_eq!(n, b.len());
    let scale = a.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return None;
    }
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .unwrap();
        if m[(piv, col)].abs() < 1e-14 * scale {
            return None;
        }
        if piv != col {
            for k in 0..n {
                let t = m[(col, k)];
                m[(col, k)] = m[(piv, k)];
                m[(piv, k)] = t;
            }
            rhs.swap(col, piv);
        }
        for r in (col + 1)..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[(r, k)] -= f * m[(col, k)];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for k in (i + 1)..n {
            s -= m[(i, k)] * x[k];
        }
        x[i] = s / m[(i, i)];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sym(rows: &[Vec<f64>]) -> SymMatrix {
        SymMatrix::new(Matrix::from_rows(rows)).unwrap()
    }

    fn random_spd(n: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut a = b.matmul_t(&b);
        for i in 0..n {
            a[(i, i)] += 0.5;
        }
        SymMatrix::new(a).unwrap()
    }

    // Laplace expansion along the first row.
    fn cofactor_det(a: &Matrix) -> f64 {
        let n = a.rows();
        if n == 1 {
            return a[(0, 0)];
        }
        (0..n)
            .map(|j| {
                let minor = Matrix::from_fn(n - 1, n - 1, |r, c| {
                    a[(r + 1, if c < j { c } else { c + 1 })]
                });
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * a[(0, j)] * cofactor_det(&minor)
            })
            .sum()
    }

    #[test]
    fn identity_needs_no_jitter() {
        let f = cholesky(&SymMatrix::new(Matrix::identity(3)).unwrap(), 1e-8).unwrap();
        assert_eq!(f.jitter_used(), 0.0);
        assert_eq!(f.lower(), &Matrix::identity(3));
    }

    #[test]
    fn two_by_two_reconstructs() {
        let a = sym(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let f = cholesky(&a, 1e-8).unwrap();
        let rec = f.lower().matmul_t(f.lower());
        assert!(rec.max_abs_diff(a.matrix()) < 1e-12);
        assert!(f.lower()[(0, 1)] == 0.0);
    }

    #[test]
    fn rank_deficient_forces_jitter() {
        let a = sym(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let f = cholesky(&a, 1e-8).unwrap();
        assert!(f.jitter_used() > 0.0);
        let mut jittered = a.matrix().clone();
        jittered[(0, 0)] += f.jitter_used();
        jittered[(1, 1)] += f.jitter_used();
        let rec = f.lower().matmul_t(f.lower());
        assert!(rec.max_abs_diff(&jittered) / jittered.frobenius() < 1e-8);
    }

    #[test]
    fn indefinite_fails() {
        let a = sym(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
        assert!(matches!(
            cholesky(&a, 1e-8),
            Err(DpklError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn non_symmetric_rejected() {
        let m = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]);
        assert!(SymMatrix::new(m).is_err());
    }

    #[test]
    fn solve_trivial_cases() {
        let f = cholesky(&SymMatrix::new(Matrix::identity(3)).unwrap(), 0.0).unwrap();
        assert_eq!(solve_chol(&f, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let f = cholesky(&sym(&[vec![4.0, 0.0], vec![0.0, 9.0]]), 0.0).unwrap();
        let x = solve_chol(&f, &[4.0, 9.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        assert!(matches!(
            solve_chol(&f, &[1.0]),
            Err(DpklError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn solve_residual_random_spd() {
        let a = random_spd(5, 11);
        let f = cholesky(&a, 1e-8).unwrap();
        let b = vec![0.3, -1.2, 2.0, 0.7, -0.1];
        let x = solve_chol(&f, &b).unwrap();
        let r = a.matrix().matvec(&x);
        let res = r.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(res < 1e-10, "residual {res}");
    }

    #[test]
    fn logdet_cases() {
        let f = cholesky(&SymMatrix::new(Matrix::identity(4)).unwrap(), 0.0).unwrap();
        assert_eq!(logdet_chol(&f), 0.0);
        let f = cholesky(&sym(&[vec![4.0, 0.0], vec![0.0, 9.0]]), 0.0).unwrap();
        assert!((logdet_chol(&f) - 36f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn logdet_matches_cofactor_determinant() {
        for seed in 0..5 {
            let a = random_spd(4, 100 + seed);
            let f = cholesky(&a, 1e-8).unwrap();
            let mut jittered = a.matrix().clone();
            for i in 0..4 {
                jittered[(i, i)] += f.jitter_used();
            }
            let det = cofactor_det(&jittered);
            let want = det.ln();
            assert!(((logdet_chol(&f) - want) / want).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = random_spd(6, 3);
        let inv = cholesky(&a, 0.0).unwrap().inverse();
        let prod = a.matrix().matmul(inv.matrix());
        assert!(prod.max_abs_diff(&Matrix::identity(6)) < 1e-10);
    }

    #[test]
    fn lu_agrees_with_cholesky() {
        let a = random_spd(5, 9);
        let b = vec![1.0, 2.0, -1.0, 0.5, 0.0];
        let x1 = solve_chol(&cholesky(&a, 0.0).unwrap(), &b).unwrap();
        let x2 = solve_lu(a.matrix(), &b).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-10);
        }
        assert!(solve_lu(&Matrix::zeros(2, 2), &[1.0, 1.0]).is_none());
    }

    proptest! {
        #[test]
        fn solve_reconstructs_rhs(seed in 0u64..1000, n in 1usize..9) {
            let a = random_spd(n, seed);
            let f = cholesky(&a, 1e-8).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let x = solve_chol(&f, &b).unwrap();
            let ax = a.matrix().matvec(&x);
            let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let res = ax.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            prop_assert!(res < 1e-9 * bmax.max(1e-300));
        }

        #[test]
        fn diagonally_dominant_needs_no_jitter(seed in 0u64..1000, n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..i {
                    let v = rng.gen_range(-1.0..1.0);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            for i in 0..n {
                let off: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
                // Gershgorin: min eigenvalue >= 1e-3 > 1e-6
                m[(i, i)] = off + 1e-3 + rng.gen_range(0.0..1.0);
            }
            let f = cholesky(&SymMatrix::new(m).unwrap(), 1e-8).unwrap();
            prop_assert_eq!(f.jitter_used(), 0.0);
        }

        #[test]
        fn logdet_monotone_in_jitter(seed in 0u64..1000, eps in 1e-6f64..1.0) {
            let a = random_spd(5, seed);
            let base = logdet_chol(&cholesky(&a, 0.0).unwrap());
            let bumped = logdet_chol(&cholesky(&a.add_diagonal(eps), 0.0).unwrap());
            prop_assert!(bumped >= base);
        }
    }
}
