use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::gp_kernel::KernelParams;

/// Whether the latent factors carry a predictor-dependent mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanMode {
    /// `eta_i ~ N(0, I)`, so `mu(x) = 0`.
    ZeroMean,
    /// `eta_i = psi(x_i) + nu_i` with Gaussian-process mean functions `psi`.
    LatentMean,
}

/// Prior hyperparameters and truncation levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Shape of the first global shrinkage multiplier `delta_1 ~ Ga(a1, 1)`.
    pub a1: f64,
    /// Shape of the remaining multipliers `delta_h ~ Ga(a2, 1)`.
    pub a2: f64,
    /// Noise precisions `sigma_j^-2 ~ Ga(a_sigma, b_sigma)` (shape, rate).
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// Number of dictionary rows `L*`.
    pub l_star: usize,
    /// Latent factor dimension `k*`.
    pub k_star: usize,
    pub kernel: KernelParams,
}

impl Hyperparameters {
    /// Settings used to fit the 10-dimensional simulation study.
    pub fn fitting_defaults() -> Self {
        Self {
            a1: 2.0,
            a2: 2.0,
            a_sigma: 1.0,
            b_sigma: 0.1,
            l_star: 10,
            k_star: 10,
            kernel: KernelParams { kappa: 10.0, nugget: crate::gp_kernel::DEFAULT_NUGGET },
        }
    }

    /// Settings used to generate the 10-dimensional simulation study data.
    pub fn generating_defaults() -> Self {
        Self { a1: 10.0, a2: 10.0, l_star: 5, k_star: 4, ..Self::fitting_defaults() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a1", self.a1), ("a2", self.a2), ("a_sigma", self.a_sigma), ("b_sigma", self.b_sigma)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(argument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.l_star == 0 || self.k_star == 0 {
            return Err(argument("truncation levels must be at least 1"));
        }
        KernelParams::new(self.kernel.kappa, self.kernel.nugget)?;
        if self.a2 <= 2.0 {
            log::debug!("a2 = {} <= 2: loadings are not guaranteed to be absolutely summable", self.a2);
        }
        Ok(())
    }
}

/// Local and global shrinkage variables of the loadings prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageState {
    /// `p x L*` local precisions.
    pub phi: DMatrix<f64>,
    /// Length-`L*` multiplicative increments.
    pub delta: DVector<f64>,
    /// Running products of `delta`.
    pub tau: DVector<f64>,
}

impl ShrinkageState {
    pub fn new(phi: DMatrix<f64>, delta: DVector<f64>) -> Self {
        let tau = running_product(&delta);
        Self { phi, delta, tau }
    }

    pub fn recompute_tau(&mut self) {
        self.tau = running_product(&self.delta);
    }

    /// Prior variance `1 / (phi_jl tau_l)` of each loading.
    pub fn loading_variances(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.phi.nrows(), self.phi.ncols(), |j, l| 1.0 / (self.phi[(j, l)] * self.tau[l]))
    }
}

pub(crate) fn running_product(delta: &DVector<f64>) -> DVector<f64> {
    let mut acc = 1.0;
    DVector::from_iterator(
        delta.len(),
        delta.iter().map(|d| {
            acc *= d;
            acc
        }),
    )
}

/// Every latent quantity of one sampler iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// `p x L*` loadings weights.
    pub theta: DMatrix<f64>,
    /// Dictionary values at the observed predictors: `xi[i]` is the `L* x k*`
    /// matrix `xi(x_i)`.
    pub xi: Vec<DMatrix<f64>>,
    /// `k* x n` latent factors; column `i` is `eta_i`. In latent-mean mode this
    /// is kept equal to `psi + nu`.
    pub eta: DMatrix<f64>,
    /// `k* x n` latent mean functions at the predictors (zero in zero-mean mode).
    pub psi: DMatrix<f64>,
    /// `k* x n` residual factors (equal to `eta` in zero-mean mode).
    pub nu: DMatrix<f64>,
    /// Diagonal of `Sigma_0`.
    pub sigma0: DVector<f64>,
    pub shrinkage: ShrinkageState,
    pub mode: MeanMode,
}

impl ModelState {
    pub fn p(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n(&self) -> usize {
        self.xi.len()
    }

    pub fn l_star(&self) -> usize {
        self.theta.ncols()
    }

    pub fn k_star(&self) -> usize {
        self.eta.nrows()
    }

    /// `Lambda(x_i) = Theta xi(x_i)`, a `p x k*` matrix.
    pub fn loadings(&self, i: usize) -> DMatrix<f64> {
        &self.theta * &self.xi[i]
    }

    pub fn covariance_at(&self, i: usize) -> DMatrix<f64> {
        super::induced_covariance(&self.theta, &self.xi[i], &self.sigma0)
    }

    pub fn mean_at(&self, i: usize) -> DVector<f64> {
        match self.mode {
            MeanMode::ZeroMean => DVector::zeros(self.p()),
            MeanMode::LatentMean => super::induced_mean(&self.theta, &self.xi[i], &self.psi.column(i).into_owned()),
        }
    }

    pub fn trajectory(&self) -> CovarianceTrajectory {
        let sigmas = (0..self.n()).map(|i| self.covariance_at(i)).collect();
        let mus = match self.mode {
            MeanMode::ZeroMean => None,
            MeanMode::LatentMean => Some((0..self.n()).map(|i| self.mean_at(i)).collect()),
        };
        CovarianceTrajectory { sigmas, mus }
    }

    /// Checks dimensions and positivity constraints.
    pub fn validate(&self) -> Result<()> {
        let (p, l, k, n) = (self.p(), self.l_star(), self.k_star(), self.n());
        if self.xi.iter().any(|x| x.nrows() != l || x.ncols() != k) {
            return Err(argument("xi blocks do not match L* x k*"));
        }
        for m in [&self.eta, &self.psi, &self.nu] {
            if m.nrows() != k || m.ncols() != n {
                return Err(argument("factor matrices do not match k* x n"));
            }
        }
        if self.sigma0.len() != p || self.sigma0.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(argument("sigma0 must hold p strictly positive entries"));
        }
        let sh = &self.shrinkage;
        if sh.phi.nrows() != p || sh.phi.ncols() != l || sh.delta.len() != l || sh.tau.len() != l {
            return Err(argument("shrinkage dimensions do not match p x L*"));
        }
        if sh.phi.iter().chain(sh.delta.iter()).any(|v| !(*v > 0.0)) {
            return Err(argument("shrinkage variables must be strictly positive"));
        }
        if self.mode == MeanMode::LatentMean {
            let diff = (&self.psi + &self.nu - &self.eta).amax();
            if diff > 1e-9 * (1.0 + self.eta.amax()) {
                return Err(argument("eta must equal psi + nu in latent-mean mode"));
            }
        }
        let all = self.theta.iter().chain(self.xi.iter().flat_map(|x| x.iter())).chain(self.eta.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(argument("non-finite entries in model state"));
        }
        Ok(())
    }
}

/// Predictors, responses and the mask of observed entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    /// `n x p` responses; unobserved entries may hold anything (usually NaN).
    pub y: DMatrix<f64>,
    /// `n x p`, true where `y` is observed.
    pub observed: DMatrix<bool>,
}

impl Dataset {
    pub fn new(xs: Vec<Vec<f64>>, y: DMatrix<f64>, observed: DMatrix<bool>) -> Result<Self> {
        if xs.len() != y.nrows() || observed.shape() != y.shape() {
            return Err(argument(format!(
                "dataset shape mismatch: {} predictors, y {:?}, mask {:?}",
                xs.len(),
                y.shape(),
                observed.shape()
            )));
        }
        if let Some(q) = xs.first().map(|x| x.len()) {
            if q == 0 || xs.iter().any(|x| x.len() != q || x.iter().any(|v| !v.is_finite())) {
                return Err(argument("predictors must be finite vectors of one common dimension"));
            }
        }
        for i in 0..y.nrows() {
            for j in 0..y.ncols() {
                if observed[(i, j)] && !y[(i, j)].is_finite() {
                    return Err(argument(format!("observed entry ({i},{j}) is not finite")));
                }
            }
        }
        Ok(Self { xs, y, observed })
    }

    /// Dataset with every entry observed.
    pub fn complete(xs: Vec<Vec<f64>>, y: DMatrix<f64>) -> Result<Self> {
        let observed = DMatrix::from_element(y.nrows(), y.ncols(), true);
        Self::new(xs, y, observed)
    }

    /// Scalar predictors `x_1..x_n`.
    pub fn scalar(xs: &[f64], y: DMatrix<f64>) -> Result<Self> {
        Self::complete(xs.iter().map(|x| vec![*x]).collect(), y)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[(i, j)]
    }

    pub fn observed_in_row(&self, i: usize) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.observed[(i, j)]).collect()
    }

    pub fn missing_in_row(&self, i: usize) -> Vec<usize> {
        (0..self.p()).filter(|&j| !self.observed[(i, j)]).collect()
    }

    pub fn observed_count_in_column(&self, j: usize) -> usize {
        (0..self.n()).filter(|&i| self.observed[(i, j)]).count()
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    /// Copy with the given mask applied on top of the current one; newly
    /// hidden entries are overwritten with NaN.
    pub fn with_hidden(&self, hide: &DMatrix<bool>) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..self.n() {
            for j in 0..self.p() {
                if hide[(i, j)] {
                    out.observed[(i, j)] = false;
                    out.y[(i, j)] = f64::NAN;
                }
            }
        }
        Ok(out)
    }

    /// True when the predictors are scalar.
    pub fn scalar_predictors(&self) -> Option<Vec<f64>> {
        if self.xs.iter().all(|x| x.len() == 1) {
            Some(self.xs.iter().map(|x| x[0]).collect())
        } else {
            None
        }
    }
}

/// Covariance matrices (and optional means) at each predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceTrajectory {
    pub sigmas: Vec<DMatrix<f64>>,
    pub mus: Option<Vec<DVector<f64>>>,
}

impl CovarianceTrajectory {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn p(&self) -> usize {
        self.sigmas.first().map_or(0, |s| s.nrows())
    }

    /// Mean vector at point `i`, zero when the trajectory carries no means.
    pub fn mean_at(&self, i: usize) -> DVector<f64> {
        match &self.mus {
            Some(m) => m[i].clone(),
            None => DVector::zeros(self.p()),
        }
    }
}
