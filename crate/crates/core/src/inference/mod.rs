//! Likelihoods, maximum likelihood fitting and posterior sampling.

mod likelihood;
mod mcmc;
mod ml;
mod model;
mod optimize;
mod prior;

pub use likelihood::{gaussian_loglik, gls, loglik_exact, loglik_tapered, Backend, Likelihood, ModelData, Profile};
pub use mcmc::{effective_sample_size, mcmc_fit, posterior_summary, quantile_sorted, ChainConfig, ParamSummary, PosteriorDraws};
pub use ml::{fit_ml, fit_ml_from, initial_params, FitMethod, FitResult, OptimizerConfig};
pub use model::{Layout, ModelKind, ModelSpec, ParamVector, TemporalKind};
pub use optimize::{nelder_mead, Minimum};
pub use prior::{pc_prior_logdensity, Ar1Prior, FixedEffectPrior, NuggetPrior, PriorSpec};
