use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::likelihood::{Backend, Likelihood, ModelData};
use super::model::{Layout, ModelSpec, ParamVector, TemporalKind};
use super::optimize::nelder_mead;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    MlExact,
    MlTapered,
    Mcmc,
}

impl FitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitMethod::MlExact => "ml-exact",
            FitMethod::MlTapered => "ml-tapered",
            FitMethod::Mcmc => "mcmc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ml-exact" => Ok(FitMethod::MlExact),
            "ml-tapered" => Ok(FitMethod::MlTapered),
            "mcmc" => Ok(FitMethod::Mcmc),
            other => Err(Error::Config(format!("unknown fit method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelSpec,
    pub estimates: ParamVector,
    pub loglik: f64,
    /// Likelihood evaluations spent.
    pub iterations: usize,
    pub converged: bool,
    pub elapsed_seconds: f64,
    pub method: FitMethod,
    pub backend: Backend,
    /// Largest diagonal jitter the final factorization needed.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Absolute tolerance on the log-likelihood spread across the simplex.
    pub tolerance: f64,
    /// Evaluation budget per simplex run.
    pub max_evaluations: usize,
    /// Extra runs restarted from jittered copies of the best point.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            tolerance: 1e-6,
            max_evaluations: 2000,
            restarts: 3,
            seed: 0,
        }
    }
}

/// Ordinary least squares fixed effects and residuals.
fn ols(data: &ModelData) -> Result<(Vec<f64>, Vec<f64>)> {
    let cols = data.design_columns();
    let y = data.response().values();
    let p = cols.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let a = DMatrix::from_fn(p, p, |i, j| dot(&cols[i], &cols[j]));
    let b = DVector::from_fn(p, |i, _| dot(&cols[i], y));
    let beta: Vec<f64> = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("design matrix is rank deficient".into()))?
        .solve(&b)
        .data
        .into();
    let mu = data.mean(&beta);
    let resid = y.iter().zip(&mu).map(|(y, m)| y - m).collect();
    Ok((beta, resid))
}

/// Semivariance of residuals between nodes at the smallest spacing, pooled over periods.
fn nearest_semivariance(data: &ModelData, resid: &[f64]) -> Option<f64> {
    let n = data.n_locations();
    let h = data.domain().min_spacing();
    if !h.is_finite() {
        return None;
    }
    let table = data.distances();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if table.distance(i, j) <= h * (1.0 + 1e-9) {
                for k in 0..data.times().len() {
                    total += 0.5 * (resid[k * n + i] - resid[k * n + j]).powi(2);
                    count += 1;
                }
            }
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Moment-based starting point: OLS fixed effects, half the nearest-neighbour
/// semivariance as nugget, a tenth of the domain diameter as range.
pub fn initial_params(model: &ModelSpec, data: &ModelData) -> Result<ParamVector> {
    let (beta, resid) = ols(data)?;
    let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
    let var = if var > 0.0 { var } else { 1.0 };
    let tau_sq = nearest_semivariance(data, &resid)
        .map(|g| (0.5 * g).clamp(1e-6 * var, 0.9 * var))
        .unwrap_or(0.5 * var);
    let diameter = data.domain().diameter();
    let range = if diameter > 0.0 { diameter / 10.0 } else { 1.0 };
    let process_var = (var - tau_sq).max(0.1 * var);
    let mean_sq_x = data
        .covariates()
        .iter()
        .flat_map(|x| x.values().iter().map(|v| v * v))
        .sum::<f64>()
        / (data.len() * model.q.max(1)) as f64;
    Ok(ParamVector {
        beta0: beta[0],
        beta1: beta[1..].to_vec(),
        theta0: model.has_intercept_process().then(|| model.kernel(range, process_var.sqrt())),
        theta1: model
            .varying_slopes
            .then(|| model.kernel(range, (0.1 * process_var / mean_sq_x.max(1e-12)).sqrt())),
        tau_sq,
        rho_ar: (model.temporal == TemporalKind::Ar1).then_some(0.5),
    })
}

fn method_for(backend: &Backend) -> FitMethod {
    match backend {
        Backend::Exact => FitMethod::MlExact,
        Backend::Tapered(_) => FitMethod::MlTapered,
    }
}

/// Maximum likelihood fit with the fixed effects profiled out by GLS.
pub fn fit_ml(model: &ModelSpec, data: &ModelData, backend: Backend, config: &OptimizerConfig) -> Result<FitResult> {
    fit_ml_from(model, data, backend, config, None)
}

/// As `fit_ml`, optionally starting from a given parameter vector.
pub fn fit_ml_from(
    model: &ModelSpec,
    data: &ModelData,
    backend: Backend,
    config: &OptimizerConfig,
    start: Option<&ParamVector>,
) -> Result<FitResult> {
    let clock = Instant::now();
    let lik = Likelihood::new(model, data, backend)?;
    let template = match start {
        Some(p) => {
            p.validate_for(model)?;
            p.clone()
        }
        None => initial_params(model, data)?,
    };

    if !model.has_intercept_process() {
        // Nugget-only model: GLS is OLS and the nugget MLE is the mean squared residual.
        let (beta, resid) = ols(data)?;
        let mut p = template;
        p.set_fixed_effects(&beta);
        p.tau_sq = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
        if !(p.tau_sq > 0.0) {
            return Err(Error::Numerical("response has zero residual variance".into()));
        }
        let loglik = lik.loglik(&p)?;
        return Ok(FitResult {
            model: *model,
            estimates: p,
            loglik,
            iterations: 1,
            converged: true,
            elapsed_seconds: clock.elapsed().as_secs_f64(),
            method: method_for(&backend),
            backend,
            jitter: 0.0,
        });
    }

    let layout = Layout::new(*model, false, false);
    let objective = |z: &[f64]| -> f64 {
        let p = layout.from_free(z, &template);
        match lik.profile(&p) {
            Ok(pr) if pr.loglik.is_finite() => -pr.loglik,
            _ => f64::INFINITY,
        }
    };
    let step: Vec<f64> = layout
        .names()
        .iter()
        .map(|n| if n == "rho" { 0.5 } else { 1.0 })
        .collect();

    let z0 = layout.to_free(&template);
    let mut best = nelder_mead(objective, &z0, &step, config.tolerance, config.max_evaluations);
    let mut evaluations = best.evaluations;
    let mut converged = best.converged;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let jitter = Normal::new(0.0, 0.1).expect("valid normal");
    for _ in 0..config.restarts {
        let start: Vec<f64> = best.x.iter().map(|v| v + jitter.sample(&mut rng)).collect();
        let run = nelder_mead(objective, &start, &step, config.tolerance, config.max_evaluations);
        evaluations += run.evaluations;
        converged |= run.converged;
        if run.value < best.value {
            best = run;
        }
    }
    if !best.value.is_finite() {
        return Err(Error::Numerical("no feasible parameter value found".into()));
    }

    let mut estimates = layout.from_free(&best.x, &template);
    let profile = lik.profile(&estimates)?;
    estimates.set_fixed_effects(&profile.beta);
    Ok(FitResult {
        model: *model,
        estimates,
        loglik: profile.loglik,
        iterations: evaluations,
        converged,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        method: method_for(&backend),
        backend,
        jitter: profile.jitter,
    })
}
