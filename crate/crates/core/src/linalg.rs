//! Dense linear-algebra helpers shared by the samplers.
//!
//! Everything here works on column-major `nalgebra` matrices. The Cholesky
//! routine is hand-rolled so a failed factorization can report the pivot it
//! stopped on, which `nalgebra::Cholesky` does not expose.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{argument, CovRegError, Result};

/// Jitter levels tried after a plain factorization fails: `1e-10 * 10^j`, `j = 0..=6`.
pub const JITTER_LEVELS: usize = 7;
const BASE_JITTER: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-8;

/// Lower-triangular Cholesky factor together with the diagonal jitter that
/// was needed to obtain it.
#[derive(Debug, Clone)]
pub struct CholFactor {
    pub l: DMatrix<f64>,
    pub jitter: f64,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `L L'` (the jittered input).
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_mut(&self, b: &mut DVector<f64>) {
        let ok = self.l.solve_lower_triangular_mut(b);
        debug_assert!(ok);
    }

    /// Solves `L' x = b` in place.
    pub fn solve_upper_mut(&self, b: &mut DVector<f64>) {
        let ok = self.l.tr_solve_lower_triangular_mut(b);
        debug_assert!(ok);
    }

    /// Solves `(L L') x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_lower_mut(&mut x);
        self.solve_upper_mut(&mut x);
        x
    }

    /// Solves `(L L') X = B` column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        let ok = self.l.solve_lower_triangular_mut(&mut x) && self.l.tr_solve_lower_triangular_mut(&mut x);
        debug_assert!(ok);
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.solve_matrix(&DMatrix::identity(self.dim(), self.dim()));
        symmetrize(&mut inv);
        inv
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Plain Cholesky without jitter. On failure returns the index and value of
/// the offending pivot.
fn cholesky_raw(m: &DMatrix<f64>, jitter: f64) -> std::result::Result<DMatrix<f64>, (usize, f64)> {
    let n = m.nrows();
    let mut l = m.clone();
    if jitter != 0.0 {
        for i in 0..n {
            l[(i, i)] += jitter;
        }
    }
    // Left-looking column algorithm: every update is an axpy on a contiguous
    // column tail.
    for j in 0..n {
        for k in 0..j {
            let ljk = l[(j, k)];
            if ljk == 0.0 {
                continue;
            }
            let (left, mut right) = l.columns_range_pair_mut(k, j);
            let src = left.rows_range(j..n);
            let mut dst = right.rows_range_mut(j..n);
            dst.axpy(-ljk, &src, 1.0);
        }
        let d = l[(j, j)];
        if !(d > 0.0) || !d.is_finite() {
            return Err((j, d));
        }
        let s = d.sqrt();
        l[(j, j)] = s;
        for i in (j + 1)..n {
            l[(i, j)] /= s;
        }
    }
    for j in 1..n {
        for i in 0..j {
            l[(i, j)] = 0.0;
        }
    }
    Ok(l)
}

/// Cholesky factorization with a fixed jitter escalation policy.
///
/// A plain factorization is attempted first. If it fails, diagonal jitter
/// `1e-10 * 10^j` for `j = 0..=6` is added until one succeeds; the jitter
/// actually used is recorded in the returned factor.
pub fn chol_psd(m: &DMatrix<f64>) -> Result<CholFactor> {
    if !m.is_square() {
        return Err(argument(format!("cholesky of non-square {}x{} matrix", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    for j in 0..m.ncols() {
        for i in 0..j {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(argument(format!("matrix not symmetric at ({i},{j})")));
            }
        }
    }
    let mut last = match cholesky_raw(m, 0.0) {
        Ok(l) => return Ok(CholFactor { l, jitter: 0.0 }),
        Err(e) => e,
    };
    let mut jitter = BASE_JITTER;
    for _ in 0..JITTER_LEVELS {
        match cholesky_raw(m, jitter) {
            Ok(l) => {
                log::debug!("cholesky needed jitter {jitter:e} (n = {})", m.nrows());
                return Ok(CholFactor { l, jitter });
            }
            Err(e) => last = e,
        }
        jitter *= 10.0;
    }
    Err(CovRegError::NotPositiveDefinite { jitter: jitter / 10.0, pivot: last.0, value: last.1 })
}

/// Copies the lower triangle's average with the upper one so the matrix is
/// exactly symmetric.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draws from `N(Q^{-1} b, Q^{-1})` given the precision `Q` and the
/// canonical mean vector `b`. Returns `(draw, mean)`.
pub fn sample_canonical<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    b: &DVector<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let chol = chol_psd(precision)?;
    let mut w = b.clone();
    chol.solve_lower_mut(&mut w);
    let mut mean = w.clone();
    chol.solve_upper_mut(&mut mean);
    let mut draw = w + standard_normal_vector(b.len(), rng);
    chol.solve_upper_mut(&mut draw);
    Ok((draw, mean))
}

/// Draws from `N(mean, L L')` for a lower factor `L`.
pub fn sample_with_factor<R: Rng + ?Sized>(mean: &DVector<f64>, chol: &CholFactor, rng: &mut R) -> DVector<f64> {
    mean + &chol.l * standard_normal_vector(mean.len(), rng)
}

/// Extracts the sub-matrix on the given rows and columns.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Eigen-decomposition based square root of a symmetric PSD matrix,
/// truncated to the leading `rank` eigenpairs. Returns a `p x rank` factor
/// `F` with `F F'` the best rank-`rank` approximation of `m`.
pub fn low_rank_factor(m: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let p = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut f = DMatrix::zeros(p, rank);
    for (c, &idx) in order.iter().take(rank).enumerate() {
        let lambda = eig.eigenvalues[idx].max(0.0).sqrt();
        for r in 0..p {
            f[(r, c)] = eig.eigenvectors[(r, idx)] * lambda;
        }
    }
    f
}

/// Moore-Penrose pseudo-inverse via SVD with a relative singular-value cutoff.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-10 * (m.nrows().max(m.ncols()) as f64);
    svd.pseudo_inverse(eps).unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()))
}
