//! Draws from Gaussian-process conditionals of the form
//! `N(Q^{-1} b, Q^{-1})` with `Q = K^{-1} + diag(d)`.
//!
//! `K` is split spectrally as `V V' + nugget I`, dropping kernel eigenvalues
//! that are negligible next to the nugget. The draw then goes through a
//! prior-perturbation identity and a Woodbury solve of size `rank`, which is
//! much cheaper than factoring `Q` when the kernel is smooth. Rough kernels
//! (rank above half of `n`) fall back to a dense Cholesky of `Q`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{argument, Result};
use crate::gp_kernel::GramMatrix;
use crate::linalg::{chol_psd, sample_canonical, standard_normal_vector, CholFactor};

/// Relative cutoff (against the nugget) below which kernel eigenvalues are dropped.
const NUGGET_RELATIVE_CUTOFF: f64 = 1e-4;

#[derive(Debug, Clone)]
enum Backend {
    LowRank { basis: DMatrix<f64>, nugget: f64 },
    Dense { k_inv: DMatrix<f64>, k_chol: CholFactor },
}

/// Cached factorization of one Gram matrix, reused for every conditional draw.
#[derive(Debug, Clone)]
pub struct GpConditional {
    n: usize,
    backend: Backend,
}

impl GpConditional {
    pub fn new(gram: &GramMatrix) -> Result<Self> {
        Self::build(gram, true)
    }

    fn build(gram: &GramMatrix, allow_dense: bool) -> Result<Self> {
        let n = gram.len();
        if n == 0 {
            return Err(argument("empty Gram matrix"));
        }
        let nugget = gram.params.nugget;
        let eig = gram.values.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.max();
        let cutoff = (NUGGET_RELATIVE_CUTOFF * nugget).max(1e-12 * lmax * n as f64);
        let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] - nugget > cutoff).collect();
        if nugget > 0.0 && (2 * keep.len() <= n || !allow_dense) {
            let mut basis = DMatrix::zeros(n, keep.len());
            for (c, &idx) in keep.iter().enumerate() {
                let s = (eig.eigenvalues[idx] - nugget).sqrt();
                basis.set_column(c, &(eig.eigenvectors.column(idx) * s));
            }
            return Ok(Self { n, backend: Backend::LowRank { basis, nugget } });
        }
        let k_chol = gram.factor()?;
        let k_inv = k_chol.inverse();
        Ok(Self { n, backend: Backend::Dense { k_inv, k_chol } })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of retained kernel directions, or `n` on the dense path.
    pub fn rank(&self) -> usize {
        match &self.backend {
            Backend::LowRank { basis, .. } => basis.ncols(),
            Backend::Dense { .. } => self.n,
        }
    }

    /// Unconditional draw from `N(0, K)`.
    pub fn prior_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match &self.backend {
            Backend::LowRank { basis, nugget } => {
                basis * standard_normal_vector(basis.ncols(), rng) + standard_normal_vector(self.n, rng) * nugget.sqrt()
            }
            Backend::Dense { k_chol, .. } => &k_chol.l * standard_normal_vector(self.n, rng),
        }
    }

    /// Posterior mean `(K^{-1} + diag(d))^{-1} b`.
    pub fn mean(&self, d: &DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(d, b)?;
        match &self.backend {
            Backend::LowRank { basis, nugget } => {
                let g = DVector::from_fn(self.n, |i, _| b[i] / (1.0 + nugget * d[i]));
                Ok(low_rank_apply(basis, *nugget, d, g))
            }
            Backend::Dense { k_inv, .. } => {
                let q = dense_precision(k_inv, d);
                Ok(chol_psd(&q)?.solve(b))
            }
        }
    }

    /// One draw from `N(Q^{-1} b, Q^{-1})`, `Q = K^{-1} + diag(d)`, `d >= 0`.
    pub fn sample<R: Rng + ?Sized>(&self, d: &DVector<f64>, b: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        self.check(d, b)?;
        match &self.backend {
            Backend::LowRank { basis, nugget } => {
                // f ~ N(0, K); pseudo-observations u = b/d with noise N(0, 1/d);
                // draw = f + K (K + D^{-1})^{-1} (u - f - e).
                let f = self.prior_draw(rng);
                let z = standard_normal_vector(self.n, rng);
                let g = DVector::from_fn(self.n, |i, _| (b[i] - d[i] * f[i] - d[i].sqrt() * z[i]) / (1.0 + nugget * d[i]));
                Ok(f + low_rank_apply(basis, *nugget, d, g))
            }
            Backend::Dense { k_inv, .. } => {
                let q = dense_precision(k_inv, d);
                Ok(sample_canonical(&q, b, rng)?.0)
            }
        }
    }

    fn check(&self, d: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
        if d.len() != self.n || b.len() != self.n {
            return Err(argument("conditional vectors do not match the Gram size"));
        }
        if d.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(argument("precision increments must be finite and nonnegative"));
        }
        Ok(())
    }
}

fn dense_precision(k_inv: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut q = k_inv.clone();
    for i in 0..d.len() {
        q[(i, i)] += d[i];
    }
    q
}

/// Given `g = W r` with `W = diag(d / (1 + nugget d))`, returns
/// `K (V V' + W^{-1})^{-1} r` using Woodbury in the basis of `V`.
fn low_rank_apply(basis: &DMatrix<f64>, nugget: f64, d: &DVector<f64>, g: DVector<f64>) -> DVector<f64> {
    let (n, r) = basis.shape();
    let w = DVector::from_fn(n, |i, _| d[i] / (1.0 + nugget * d[i]));
    let mut inner = DMatrix::identity(r, r);
    let mut wv = basis.clone();
    for i in 0..n {
        wv.row_mut(i).scale_mut(w[i]);
    }
    inner.gemm_tr(1.0, basis, &wv, 1.0);
    let mut rhs = basis.tr_mul(&g);
    let solve = chol_psd(&inner).expect("identity plus PSD matrix factorizes");
    solve.solve_lower_mut(&mut rhs);
    solve.solve_upper_mut(&mut rhs);
    let sol = g - wv * rhs;
    basis * basis.tr_mul(&sol) + sol * nugget
}
