//! Blocked Gibbs sampler for the covariance regression model.

mod chain;
mod gp_posterior;
mod init;
mod kappa;
mod steps;

pub use chain::{
    run_chain, run_chain_timed, ChainConfig, InitScheme, KappaPolicy, PosteriorArchive, StepTiming, ARCHIVE_FORMAT_VERSION,
};
pub use gp_posterior::GpConditional;
pub use init::{data_driven_init, DataDrivenInit};
pub use kappa::{
    default_bin_halfwidth, kappa_grid_logmarginal, kappa_heuristic, kappa_heuristic_detailed, local_covariance,
    sample_grid_index, KappaEstimate, KappaHeuristicConfig, LocalCovariance, DEFAULT_MARGINAL_CAP, KAPPA_FLOOR,
};
pub use steps::{
    delta_conditional, eta_conditional, fitted_values, impute_missing, nu_conditional, phi_conditional, psi_conditional,
    sigma0_conditional, step_delta, step_eta, step_phi, step_psi_nu, step_sigma0, step_theta, step_xi, theta_conditional,
    xi_conditional, ObservedData,
};
