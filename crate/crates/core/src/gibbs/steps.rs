//! Full-conditional draws of the Gibbs sampler.
//!
//! Every step conditions on observed entries only: unobserved cells carry
//! zero weight and their stored values are never read. Each step also has a
//! `*_conditional` companion returning the closed-form parameters it samples
//! from, so the draws can be checked against independent calculations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::gp_posterior::GpConditional;
use crate::distributions::{sample_gamma, sample_standard_normal};
use crate::error::{argument, Result};
use crate::linalg::sample_canonical;
use crate::model::{Dataset, Hyperparameters, MeanMode, ModelState};

/// Responses with unobserved cells zeroed, plus 0/1 observation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedData {
    /// `n x p`; zero wherever `weight` is zero.
    pub y: DMatrix<f64>,
    /// `n x p`; 1 for observed cells, 0 otherwise.
    pub weight: DMatrix<f64>,
    observed_rows: Vec<Vec<usize>>,
}

impl ObservedData {
    pub fn new(data: &Dataset) -> Self {
        let (n, p) = (data.n(), data.p());
        let weight = DMatrix::from_fn(n, p, |i, j| if data.observed[(i, j)] { 1.0 } else { 0.0 });
        let y = DMatrix::from_fn(n, p, |i, j| if data.observed[(i, j)] { data.y[(i, j)] } else { 0.0 });
        let observed_rows = (0..n).map(|i| data.observed_in_row(i)).collect();
        Self { y, weight, observed_rows }
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn observed_in_row(&self, i: usize) -> &[usize] {
        &self.observed_rows[i]
    }

    pub fn observed_in_column(&self, j: usize) -> usize {
        self.weight.column(j).iter().filter(|w| **w > 0.0).count()
    }

    /// Treats every cell as observed with the given values (used when
    /// missing responses are imputed each sweep).
    pub fn completed(y: DMatrix<f64>) -> Self {
        let (n, p) = y.shape();
        Self { y, weight: DMatrix::from_element(n, p, 1.0), observed_rows: vec![(0..p).collect(); n] }
    }
}

fn check_dims(state: &ModelState, data: &ObservedData) -> Result<()> {
    if state.p() != data.p() || state.n() != data.n() {
        return Err(argument(format!(
            "state is {} x {} but data is {} x {}",
            state.n(),
            state.p(),
            data.n(),
            data.p()
        )));
    }
    Ok(())
}

/// `n x p` matrix of `Theta xi(x_i) eta_i`.
pub fn fitted_values(state: &ModelState) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(state.n(), state.p());
    for i in 0..state.n() {
        let h = &state.xi[i] * state.eta.column(i);
        f.row_mut(i).copy_from(&(&state.theta * h).transpose());
    }
    f
}

fn residuals(state: &ModelState, data: &ObservedData) -> DMatrix<f64> {
    let mut r = &data.y - fitted_values(state);
    r.component_mul_assign(&data.weight);
    r
}

fn noise_precisions(state: &ModelState) -> DVector<f64> {
    state.sigma0.map(|s| 1.0 / s)
}

/// Parameters `(d, b)` of the conditional of `xi_lm(x_1..x_n)`: precision
/// `K^{-1} + diag(d)` and canonical mean `b`.
pub fn xi_conditional(state: &ModelState, data: &ObservedData, l: usize, m: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dims(state, data)?;
    let r = residuals(state, data);
    Ok(xi_parameters(state, data, &r, &noise_precisions(state), l, m))
}

fn xi_parameters(
    state: &ModelState,
    data: &ObservedData,
    resid: &DMatrix<f64>,
    prec: &DVector<f64>,
    l: usize,
    m: usize,
) -> (DVector<f64>, DVector<f64>) {
    let (n, p) = (data.n(), data.p());
    let mut d = DVector::zeros(n);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        let e = state.eta[(m, i)];
        let old = state.xi[i][(l, m)];
        let (mut s2, mut sy) = (0.0, 0.0);
        for j in 0..p {
            let w = data.weight[(i, j)];
            if w == 0.0 {
                continue;
            }
            let t = state.theta[(j, l)];
            let ytil = resid[(i, j)] + t * old * e;
            s2 += t * t * prec[j];
            sy += t * prec[j] * ytil;
        }
        d[i] = e * e * s2;
        b[i] = e * sy;
    }
    (d, b)
}

/// Step 1: redraws every dictionary function at the observed predictors,
/// scanning `(l, m)` row-major.
pub fn step_xi<R: Rng + ?Sized>(state: &mut ModelState, data: &ObservedData, gp: &GpConditional, rng: &mut R) -> Result<()> {
    check_dims(state, data)?;
    if gp.len() != data.n() {
        return Err(argument("Gram matrix does not match the number of predictors"));
    }
    let (n, p) = (data.n(), data.p());
    let prec = noise_precisions(state);
    let mut resid = residuals(state, data);
    for l in 0..state.l_star() {
        for m in 0..state.k_star() {
            let (d, b) = xi_parameters(state, data, &resid, &prec, l, m);
            let new = gp.sample(&d, &b, rng)?;
            for i in 0..n {
                let delta = (new[i] - state.xi[i][(l, m)]) * state.eta[(m, i)];
                if delta != 0.0 {
                    for j in 0..p {
                        resid[(i, j)] -= data.weight[(i, j)] * state.theta[(j, l)] * delta;
                    }
                }
                state.xi[i][(l, m)] = new[i];
            }
        }
    }
    Ok(())
}

/// `Theta xi(x_i)` restricted to the observed rows of `i`.
fn observed_loadings(state: &ModelState, i: usize, obs: &[usize]) -> DMatrix<f64> {
    let lambda = state.loadings(i);
    DMatrix::from_fn(obs.len(), state.k_star(), |r, c| lambda[(obs[r], c)])
}

/// Precision `I + Lambda_o' Sigma_o^{-1} Lambda_o` and canonical mean
/// `Lambda_o' Sigma_o^{-1} r_o` of a latent factor given a residual row.
fn factor_parameters(
    state: &ModelState,
    data: &ObservedData,
    i: usize,
    target: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let obs = data.observed_in_row(i);
    let k = state.k_star();
    let lam = observed_loadings(state, i, obs);
    let mut scaled = lam.clone();
    for (r, &j) in obs.iter().enumerate() {
        scaled.row_mut(r).scale_mut(1.0 / state.sigma0[j]);
    }
    let mut precision = DMatrix::identity(k, k);
    precision.gemm_tr(1.0, &lam, &scaled, 1.0);
    let t = DVector::from_fn(obs.len(), |r, _| target[obs[r]]);
    (precision, scaled.tr_mul(&t))
}

/// Parameters of the Step 2 conditional of `eta_i`: `(precision, b)`.
pub fn eta_conditional(state: &ModelState, data: &ObservedData, i: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_dims(state, data)?;
    let y = data.y.row(i).transpose();
    Ok(factor_parameters(state, data, i, &y))
}

/// Step 2 (zero-mean mode): redraws every latent factor `eta_i`.
pub fn step_eta<R: Rng + ?Sized>(state: &mut ModelState, data: &ObservedData, rng: &mut R) -> Result<()> {
    check_dims(state, data)?;
    if state.mode != MeanMode::ZeroMean {
        return Err(argument("step_eta applies to the zero-mean model; use step_psi_nu"));
    }
    for i in 0..data.n() {
        let (q, b) = eta_conditional(state, data, i)?;
        let draw = sample_canonical(&q, &b, rng)?.0;
        state.eta.set_column(i, &draw);
        state.nu.set_column(i, &draw);
    }
    state.psi.fill(0.0);
    Ok(())
}

/// Shape and rate of every noise precision conditional (Step 3).
pub fn sigma0_conditional(state: &ModelState, data: &ObservedData, hyper: &Hyperparameters) -> Result<Vec<(f64, f64)>> {
    check_dims(state, data)?;
    let r = residuals(state, data);
    Ok((0..data.p())
        .map(|j| {
            let nj = data.observed_in_column(j) as f64;
            let ssr = r.column(j).norm_squared();
            (hyper.a_sigma + nj / 2.0, hyper.b_sigma + ssr / 2.0)
        })
        .collect())
}

/// Step 3: redraws the noise variances `sigma_j^2`.
pub fn step_sigma0<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ObservedData,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    for (j, (shape, rate)) in sigma0_conditional(state, data, hyper)?.into_iter().enumerate() {
        state.sigma0[j] = 1.0 / sample_gamma(shape, rate, rng);
    }
    Ok(())
}

fn dictionary_factor_products(state: &ModelState) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(state.n(), state.l_star());
    for i in 0..state.n() {
        h.row_mut(i).copy_from(&(&state.xi[i] * state.eta.column(i)).transpose());
    }
    h
}

fn theta_parameters(state: &ModelState, data: &ObservedData, h: &DMatrix<f64>, j: usize) -> (DMatrix<f64>, DVector<f64>) {
    let l = state.l_star();
    let prec = 1.0 / state.sigma0[j];
    let mut weighted = h.clone();
    for i in 0..data.n() {
        weighted.row_mut(i).scale_mut(data.weight[(i, j)] * prec);
    }
    let mut q = DMatrix::from_diagonal(&DVector::from_fn(l, |c, _| state.shrinkage.phi[(j, c)] * state.shrinkage.tau[c]));
    q.gemm_tr(1.0, h, &weighted, 1.0);
    let b = weighted.tr_mul(&data.y.column(j));
    (q, b)
}

/// Parameters of the Step 4 conditional of row `j` of `Theta`: `(precision, b)`.
pub fn theta_conditional(state: &ModelState, data: &ObservedData, j: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_dims(state, data)?;
    Ok(theta_parameters(state, data, &dictionary_factor_products(state), j))
}

/// Step 4: redraws each row of `Theta`.
pub fn step_theta<R: Rng + ?Sized>(state: &mut ModelState, data: &ObservedData, rng: &mut R) -> Result<()> {
    check_dims(state, data)?;
    let h = dictionary_factor_products(state);
    for j in 0..data.p() {
        let (q, b) = theta_parameters(state, data, &h, j);
        let row = sample_canonical(&q, &b, rng)?.0;
        state.theta.row_mut(j).copy_from(&row.transpose());
    }
    Ok(())
}

/// Rates of the Step 5 conditionals `phi_jl ~ Ga(2, rate_jl)`.
pub fn phi_conditional(state: &ModelState) -> DMatrix<f64> {
    let sh = &state.shrinkage;
    DMatrix::from_fn(sh.phi.nrows(), sh.phi.ncols(), |j, l| (3.0 + sh.tau[l] * state.theta[(j, l)].powi(2)) / 2.0)
}

/// Step 5: redraws the local shrinkage precisions.
pub fn step_phi<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) {
    let rates = phi_conditional(state);
    for (phi, rate) in state.shrinkage.phi.iter_mut().zip(rates.iter()) {
        *phi = sample_gamma(2.0, *rate, rng);
    }
}

/// Shape and rate of the conditional of `delta_h` (0-based `h`) given the
/// current values of the other multipliers. Only columns `l >= h` involve
/// `delta_h`.
pub fn delta_conditional(state: &ModelState, hyper: &Hyperparameters, h: usize) -> (f64, f64) {
    let sh = &state.shrinkage;
    let (p, l_star) = (state.p(), state.l_star());
    let mut partial = 1.0;
    let mut rate = 1.0;
    for l in 0..l_star {
        if l != h {
            partial *= sh.delta[l];
        }
        if l >= h {
            let s: f64 = (0..p).map(|j| sh.phi[(j, l)] * state.theta[(j, l)].powi(2)).sum();
            rate += 0.5 * partial * s;
        }
    }
    let a = if h == 0 { hyper.a1 } else { hyper.a2 };
    (a + (p * (l_star - h)) as f64 / 2.0, rate)
}

/// Step 6: redraws `delta_1..delta_L` in order and restores `tau`.
pub fn step_delta<R: Rng + ?Sized>(state: &mut ModelState, hyper: &Hyperparameters, rng: &mut R) {
    for h in 0..state.l_star() {
        let (shape, rate) = delta_conditional(state, hyper, h);
        state.shrinkage.delta[h] = sample_gamma(shape, rate, rng);
    }
    state.shrinkage.recompute_tau();
}

/// Per-point quantities shared by the mean-function block.
struct MarginalRow {
    /// `Omega_o' S^{-1} Omega_o` (`k x k`), with `S = Omega_o Omega_o' + Sigma_0,o`.
    gram: DMatrix<f64>,
    /// `Omega_o' S^{-1} y_o`.
    proj: DVector<f64>,
}

fn marginal_rows(state: &ModelState, data: &ObservedData) -> Result<Vec<MarginalRow>> {
    let k = state.k_star();
    (0..data.n())
        .map(|i| {
            let obs = data.observed_in_row(i);
            if obs.is_empty() {
                return Ok(MarginalRow { gram: DMatrix::zeros(k, k), proj: DVector::zeros(k) });
            }
            let om = observed_loadings(state, i, obs);
            let mut s = &om * om.transpose();
            for (r, &j) in obs.iter().enumerate() {
                s[(r, r)] += state.sigma0[j];
            }
            let chol = crate::linalg::chol_psd(&s)?;
            let s_inv_om = chol.solve_matrix(&om);
            let y = DVector::from_fn(obs.len(), |r, _| data.y[(i, obs[r])]);
            Ok(MarginalRow { gram: om.tr_mul(&s_inv_om), proj: s_inv_om.tr_mul(&y) })
        })
        .collect()
}

/// Parameters `(d, b)` of the conditional of `psi_m(x_1..x_n)` with the
/// residual factors `nu` integrated out.
pub fn psi_conditional(state: &ModelState, data: &ObservedData, m: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dims(state, data)?;
    let rows = marginal_rows(state, data)?;
    Ok(psi_parameters(state, &rows, m))
}

fn psi_parameters(state: &ModelState, rows: &[MarginalRow], m: usize) -> (DVector<f64>, DVector<f64>) {
    let n = rows.len();
    let k = state.k_star();
    let mut d = DVector::zeros(n);
    let mut b = DVector::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        d[i] = row.gram[(m, m)];
        let mut v = row.proj[m];
        for c in 0..k {
            if c != m {
                v -= row.gram[(m, c)] * state.psi[(c, i)];
            }
        }
        b[i] = v;
    }
    (d, b)
}

/// Parameters of the conditional of `nu_i` given `psi`: `(precision, b)`.
pub fn nu_conditional(state: &ModelState, data: &ObservedData, i: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_dims(state, data)?;
    let target = data.y.row(i).transpose() - state.loadings(i) * state.psi.column(i);
    Ok(factor_parameters(state, data, i, &target))
}

/// Mean-regression block: draws each `psi_m(.)` with `nu` marginalized, then
/// every `nu_i` given `psi`, and sets `eta = psi + nu`.
pub fn step_psi_nu<R: Rng + ?Sized>(state: &mut ModelState, data: &ObservedData, gp: &GpConditional, rng: &mut R) -> Result<()> {
    check_dims(state, data)?;
    if state.mode != MeanMode::LatentMean {
        return Err(argument("step_psi_nu applies to the latent-mean model"));
    }
    let rows = marginal_rows(state, data)?;
    for m in 0..state.k_star() {
        let (d, b) = psi_parameters(state, &rows, m);
        let draw = gp.sample(&d, &b, rng)?;
        state.psi.row_mut(m).copy_from(&draw.transpose());
    }
    for i in 0..data.n() {
        let (q, b) = nu_conditional(state, data, i)?;
        let draw = sample_canonical(&q, &b, rng)?.0;
        state.nu.set_column(i, &draw);
    }
    state.eta = &state.psi + &state.nu;
    Ok(())
}

/// Replaces unobserved responses by draws from `N(Theta xi(x_i) eta_i, sigma_j^2)`.
pub fn impute_missing<R: Rng + ?Sized>(state: &ModelState, data: &Dataset, rng: &mut R) -> Result<ObservedData> {
    if state.p() != data.p() || state.n() != data.n() {
        return Err(argument("state and dataset dimensions differ"));
    }
    let f = fitted_values(state);
    let mut y = data.y.clone();
    for i in 0..data.n() {
        for j in 0..data.p() {
            if !data.observed[(i, j)] {
                y[(i, j)] = f[(i, j)] + state.sigma0[j].sqrt() * sample_standard_normal(rng);
            }
        }
    }
    Ok(ObservedData::completed(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_kernel::{gram_matrix, KernelParams};
    use crate::model::{sample_prior, unit_grid, ShrinkageState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_state(theta: f64, xi: f64, eta: f64, sigma2: f64) -> ModelState {
        ModelState {
            theta: DMatrix::from_element(1, 1, theta),
            xi: vec![DMatrix::from_element(1, 1, xi)],
            eta: DMatrix::from_element(1, 1, eta),
            psi: DMatrix::zeros(1, 1),
            nu: DMatrix::from_element(1, 1, eta),
            sigma0: DVector::from_element(1, sigma2),
            shrinkage: ShrinkageState::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0)),
            mode: MeanMode::ZeroMean,
        }
    }

    fn scalar_data(y: f64) -> ObservedData {
        ObservedData::new(&Dataset::scalar(&[0.5], DMatrix::from_element(1, 1, y)).unwrap())
    }

    #[test]
    fn eta_scalar_matches_normal_normal_update() {
        // y = lambda eta + e, e ~ N(0, s2): precision 1 + lambda^2/s2, mean lambda y / s2 / precision.
        let s = scalar_state(2.0, 0.5, 0.3, 0.25);
        let (q, b) = eta_conditional(&s, &scalar_data(1.2), 0).unwrap();
        assert!((q[(0, 0)] - 5.0).abs() < 1e-14);
        assert!((b[0] / q[(0, 0)] - 0.96).abs() < 1e-14);
    }

    #[test]
    fn missing_row_gives_prior_factor() {
        let ds = Dataset::new(vec![vec![0.5]], DMatrix::from_element(1, 2, f64::NAN), DMatrix::from_element(1, 2, false)).unwrap();
        let mut s = scalar_state(2.0, 0.5, 0.3, 0.25);
        s.theta = DMatrix::from_element(2, 1, 1.0);
        s.sigma0 = DVector::from_element(2, 1.0);
        s.shrinkage = ShrinkageState::new(DMatrix::from_element(2, 1, 1.0), DVector::from_element(1, 1.0));
        let (q, b) = eta_conditional(&s, &ObservedData::new(&ds), 0).unwrap();
        assert_eq!(q, DMatrix::identity(1, 1));
        assert_eq!(b, DVector::zeros(1));
    }

    #[test]
    fn sigma0_zero_residual_arithmetic() {
        let n = 10;
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ds = Dataset::scalar(&xs, DMatrix::zeros(n, 1)).unwrap();
        let mut s = scalar_state(0.0, 0.0, 0.0, 1.0);
        s.xi = vec![DMatrix::zeros(1, 1); n];
        s.eta = DMatrix::zeros(1, n);
        s.psi = DMatrix::zeros(1, n);
        s.nu = DMatrix::zeros(1, n);
        let hyper = Hyperparameters { a_sigma: 1.0, b_sigma: 0.1, ..Hyperparameters::fitting_defaults() };
        let params = sigma0_conditional(&s, &ObservedData::new(&ds), &hyper).unwrap();
        assert_eq!(params, vec![(6.0, 0.1)]);
    }

    #[test]
    fn phi_rates() {
        let mut s = scalar_state(0.0, 0.0, 0.0, 1.0);
        assert_eq!(phi_conditional(&s)[(0, 0)], 1.5);
        s.theta[(0, 0)] = 1.0;
        assert_eq!(phi_conditional(&s)[(0, 0)], 2.0);
    }

    #[test]
    fn delta_single_column_hand_update() {
        let mut s = scalar_state(0.7, 0.0, 0.0, 1.0);
        s.shrinkage.phi[(0, 0)] = 2.0;
        let hyper = Hyperparameters::fitting_defaults();
        let (shape, rate) = delta_conditional(&s, &hyper, 0);
        assert_eq!(shape, hyper.a1 + 0.5);
        assert!((rate - (1.0 + 0.5 * 2.0 * 0.49)).abs() < 1e-15);
    }

    #[test]
    fn delta_ignores_earlier_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hyper = Hyperparameters { l_star: 3, k_star: 2, ..Hyperparameters::fitting_defaults() };
        let mut s = sample_prior(&hyper, &unit_grid(4), 2, MeanMode::ZeroMean, &mut rng).unwrap();
        let before = delta_conditional(&s, &hyper, 1);
        s.theta.column_mut(0).fill(100.0);
        assert_eq!(delta_conditional(&s, &hyper, 1), before);
        // rate for h = 2 (0-based 1): 1 + 0.5 sum_{l >= 1} (prod_{t <= l, t != 1} delta_t) sum_j phi theta^2
        let sh = &s.shrinkage;
        let col = |l: usize| (0..2).map(|j| sh.phi[(j, l)] * s.theta[(j, l)].powi(2)).sum::<f64>();
        let expected = 1.0 + 0.5 * (sh.delta[0] * col(1) + sh.delta[0] * sh.delta[2] * col(2));
        assert!((before.1 - expected).abs() < 1e-12 * expected);
        assert_eq!(before.0, hyper.a2 + 2.0 * 2.0 / 2.0);
    }

    #[test]
    fn xi_without_loadings_is_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hyper = Hyperparameters { l_star: 2, k_star: 2, ..Hyperparameters::fitting_defaults() };
        let xs = unit_grid(6);
        let mut s = sample_prior(&hyper, &xs, 3, MeanMode::ZeroMean, &mut rng).unwrap();
        s.theta.fill(0.0);
        let ds = Dataset::complete(xs, DMatrix::from_element(6, 3, 1.0)).unwrap();
        let (d, b) = xi_conditional(&s, &ObservedData::new(&ds), 1, 0).unwrap();
        assert_eq!(d, DVector::zeros(6));
        assert_eq!(b, DVector::zeros(6));
    }

    #[test]
    fn theta_scalar_ridge_posterior() {
        // y_i = theta h_i + e: precision sum h^2 / s2 + phi tau.
        let n = 3;
        let xs: Vec<f64> = (1..=n).map(|i| i as f64 / 3.0).collect();
        let y = DMatrix::from_column_slice(n, 1, &[1.0, 2.0, -1.0]);
        let ds = Dataset::scalar(&xs, y).unwrap();
        let mut s = scalar_state(0.3, 0.0, 0.0, 0.5);
        s.xi = vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, -1.0)];
        s.eta = DMatrix::from_row_slice(1, n, &[1.0, 0.5, 2.0]);
        s.nu = s.eta.clone();
        s.psi = DMatrix::zeros(1, n);
        s.shrinkage = ShrinkageState::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 3.0));
        let (q, b) = theta_conditional(&s, &ObservedData::new(&ds), 0).unwrap();
        // h = (1, 1, -2)
        assert!((q[(0, 0)] - (6.0 / 0.5 + 6.0)).abs() < 1e-12);
        assert!((b[0] - (1.0 + 2.0 + 2.0) / 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_values_never_read() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hyper = Hyperparameters { l_star: 3, k_star: 2, ..Hyperparameters::fitting_defaults() };
        let xs = unit_grid(8);
        let state = sample_prior(&hyper, &xs, 3, MeanMode::LatentMean, &mut rng).unwrap();
        let mut observed = DMatrix::from_element(8, 3, true);
        observed[(2, 1)] = false;
        observed[(5, 0)] = false;
        let mut y = DMatrix::from_fn(8, 3, |i, j| (i + j) as f64 * 0.1);
        let a = Dataset::new(xs.clone(), y.clone(), observed.clone()).unwrap();
        y[(2, 1)] = 1e300;
        y[(5, 0)] = f64::NAN;
        let b = Dataset::new(xs.clone(), y, observed).unwrap();
        let gp = GpConditional::new(&gram_matrix(&xs, &KernelParams::with_kappa(10.0).unwrap()).unwrap()).unwrap();
        let run = |ds: &Dataset| {
            let mut s = state.clone();
            let od = ObservedData::new(ds);
            let mut r = ChaCha8Rng::seed_from_u64(1);
            step_xi(&mut s, &od, &gp, &mut r).unwrap();
            step_psi_nu(&mut s, &od, &gp, &mut r).unwrap();
            step_sigma0(&mut s, &od, &hyper, &mut r).unwrap();
            step_theta(&mut s, &od, &mut r).unwrap();
            s
        };
        assert_eq!(run(&a), run(&b));
    }
}
