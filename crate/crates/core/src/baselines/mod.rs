//! Comparison models: Wishart matrix discounting and two homoscedastic
//! mean-regression models.

mod discount;
mod homoscedastic;

pub use discount::{
    check_discount, fit_matrix_discounting, mdw_backward_sample, mdw_forward_filter, steady_state_beta, DiscountState,
    DEFAULT_DISCOUNT_DRAWS,
};
pub use homoscedastic::{
    complete_responses, factor_theta_conditional, fit_homoscedastic_gp_mean, fit_homoscedastic_gp_mean_state,
    fit_homoscedastic_latent_factor, fit_homoscedastic_latent_factor_state, gp_mean_conditional, row_precisions,
    sigma_conditional, HomoscedasticFit, HomoscedasticMean, SigmaModel,
};
