//! Adaptive random-walk Metropolis on the unconstrained parameter coordinates.
//!
//! During burn-in the proposal is diagonal Gaussian with per-coordinate
//! variances from the running chain variance, times a global scale that a
//! Robbins-Monro recursion steers toward the target acceptance rate. Both are
//! frozen once burn-in ends, so the kept draws come from a fixed kernel.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::likelihood::{Backend, Likelihood, ModelData};
use super::ml::{fit_ml, FitMethod, FitResult, OptimizerConfig};
use super::model::{Layout, ModelSpec, ParamVector};
use super::prior::{pc_prior_logdensity, PriorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    /// Kept draws after burn-in.
    pub draws: usize,
    pub burn_in: usize,
    pub target_acceptance: f64,
    pub seed: u64,
    /// Hold the nugget at its starting value.
    pub fix_nugget: bool,
    /// Per-coordinate initial proposal sd; derived from local curvature when absent.
    pub initial_sd: Option<Vec<f64>>,
    /// Kept-draw window over which zero acceptance is an error.
    pub window: usize,
    /// Starting point; the ML estimate when absent.
    #[serde(skip)]
    pub start: Option<ParamVector>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            draws: 20_000,
            burn_in: 5_000,
            target_acceptance: 0.234,
            seed: 0,
            fix_nugget: false,
            initial_sd: None,
            window: 1_000,
            start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub model: ModelSpec,
    pub backend: Backend,
    layout: Layout,
    template: ParamVector,
    names: Vec<String>,
    /// Row-major `n_draws x n_params`, natural scale.
    values: Vec<f64>,
    /// Same draws on the unconstrained scale.
    free: Vec<f64>,
    pub acceptance_rate: f64,
    pub ess: Vec<f64>,
    pub elapsed_seconds: f64,
}

impl PosteriorDraws {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn n_draws(&self) -> usize {
        self.values.len() / self.n_params().max(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_params();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_draws()).map(|i| self.row(i)[j]).collect()
    }

    pub fn param_vector(&self, i: usize) -> ParamVector {
        let p = self.n_params();
        self.layout.from_free(&self.free[i * p..(i + 1) * p], &self.template)
    }

    /// Parameters at the posterior mean of each coordinate (natural scale).
    pub fn posterior_mean(&self) -> ParamVector {
        let means: Vec<f64> = (0..self.n_params())
            .map(|j| self.column(j).iter().sum::<f64>() / self.n_draws() as f64)
            .collect();
        let mut values = self.template.named_values();
        for (name, v) in values.iter_mut() {
            if let Some(j) = self.names.iter().position(|n| n == name) {
                *v = means[j];
            }
        }
        ParamVector::from_named(&self.model, &values).unwrap_or_else(|_| self.template.clone())
    }

    /// `count` draws evenly spaced over the chain.
    pub fn thinned(&self, count: usize) -> Vec<ParamVector> {
        let n = self.n_draws();
        let count = count.min(n).max(1);
        (0..count).map(|k| self.param_vector(k * n / count)).collect()
    }

    /// Point summary in `FitResult` form, at the posterior mean.
    pub fn to_fit_result(&self, data: &ModelData) -> Result<FitResult> {
        let estimates = self.posterior_mean();
        let lik = Likelihood::new(&self.model, data, self.backend)?;
        Ok(FitResult {
            model: self.model,
            loglik: lik.loglik(&estimates)?,
            estimates,
            iterations: self.n_draws(),
            converged: self.acceptance_rate > 0.0,
            elapsed_seconds: self.elapsed_seconds,
            method: FitMethod::Mcmc,
            backend: self.backend,
            jitter: 0.0,
        })
    }
}

/// Effective sample size via Geyer's initial monotone sequence estimator.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = chain.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    };
    let g0 = autocov(0);
    if !(g0 > 0.0) {
        return n as f64;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = autocov(2 * k) + autocov(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * sum / g0).max(1.0 / n as f64);
    (n as f64 / tau).max(1.0)
}

struct Posterior<'a> {
    lik: Likelihood<'a>,
    prior: &'a PriorSpec,
    layout: Layout,
    template: ParamVector,
}

impl Posterior<'_> {
    fn log_density(&self, z: &[f64]) -> f64 {
        if z.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let p = self.layout.from_free(z, &self.template);
        let lp = pc_prior_logdensity(self.prior, &p);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        match self.lik.loglik(&p) {
            Ok(ll) if ll.is_finite() => ll + lp + self.layout.log_jacobian(z),
            _ => f64::NEG_INFINITY,
        }
    }

    /// Proposal variance per coordinate from the local curvature of the log density.
    fn curvature_variance(&self, z: &[f64], at: f64) -> Vec<f64> {
        (0..z.len())
            .map(|i| {
                let mut h = 1e-2;
                let mut var = 0.01;
                for _ in 0..6 {
                    let mut zp = z.to_vec();
                    let mut zm = z.to_vec();
                    zp[i] += h;
                    zm[i] -= h;
                    let d2 = (self.log_density(&zp) - 2.0 * at + self.log_density(&zm)) / (h * h);
                    if !(d2 < 0.0 && d2.is_finite()) {
                        h *= 0.1;
                        continue;
                    }
                    var = -1.0 / d2;
                    if var.sqrt() >= 0.1 * h {
                        break;
                    }
                    h = var.sqrt();
                }
                var
            })
            .collect()
    }
}

/// Posterior sampling under the PC prior with the given likelihood backend.
pub fn mcmc_fit(
    model: &ModelSpec,
    data: &ModelData,
    prior: &PriorSpec,
    backend: Backend,
    config: &ChainConfig,
) -> Result<PosteriorDraws> {
    let clock = Instant::now();
    prior.validate()?;
    if config.draws == 0 {
        return Err(Error::Config("chain needs at least one kept draw".into()));
    }
    let lik = Likelihood::new(model, data, backend)?;
    let template = match &config.start {
        Some(p) => {
            p.validate_for(model)?;
            p.clone()
        }
        None => fit_ml(model, data, backend, &OptimizerConfig::default())?.estimates,
    };
    let layout = Layout::new(*model, true, config.fix_nugget);
    let post = Posterior {
        lik,
        prior,
        layout: layout.clone(),
        template: template.clone(),
    };
    let dim = layout.dim();
    let mut z = layout.to_free(&template);
    let mut current = post.log_density(&z);
    if !current.is_finite() {
        return Err(Error::Numerical("posterior density is zero at the starting point".into()));
    }

    let init_var: Vec<f64> = match &config.initial_sd {
        Some(sd) if sd.len() == dim => sd.iter().map(|s| s * s).collect(),
        Some(sd) => {
            return Err(Error::Dimension(format!("{} initial sds for {dim} coordinates", sd.len())));
        }
        None => post.curvature_variance(&z, current),
    };
    let mut log_scale = (2.38f64 * 2.38 / dim.max(1) as f64).ln();
    let mut mean = z.clone();
    let mut m2 = vec![0.0; dim];
    let mut count = 1.0;
    let mut proposal_sd: Vec<f64> = init_var.iter().map(|v| (log_scale.exp() * v).sqrt()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut values = Vec::with_capacity(config.draws * dim);
    let mut free = Vec::with_capacity(config.draws * dim);
    let mut accepted = 0usize;
    let mut window_accepted = 0usize;

    for it in 0..config.burn_in + config.draws {
        let burning = it < config.burn_in;
        let proposal: Vec<f64> = z
            .iter()
            .zip(&proposal_sd)
            .map(|(v, s)| v + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        // A proposal equal to the current state is not a move.
        let moved = proposal != z;
        let mut accept_prob = 0.0;
        if moved {
            let cand = post.log_density(&proposal);
            accept_prob = (cand - current).exp().min(1.0);
            if rng.random::<f64>() < accept_prob {
                z = proposal;
                current = cand;
                if !burning {
                    accepted += 1;
                    window_accepted += 1;
                }
            }
        }

        if burning {
            log_scale += ((it + 1) as f64).powf(-0.6) * (accept_prob - config.target_acceptance);
            count += 1.0;
            for i in 0..dim {
                let d = z[i] - mean[i];
                mean[i] += d / count;
                m2[i] += d * (z[i] - mean[i]);
            }
            let use_chain = count >= 100.0;
            proposal_sd = (0..dim)
                .map(|i| {
                    let var = if use_chain { m2[i] / (count - 1.0) + 0.01 * init_var[i] } else { init_var[i] };
                    (log_scale.exp() * var).sqrt()
                })
                .collect();
            continue;
        }

        let p = layout.from_free(&z, &template);
        values.extend(p.named_values().iter().filter(|(n, _)| layout.names().contains(n)).map(|(_, v)| *v));
        free.extend_from_slice(&z);
        let kept = it + 1 - config.burn_in;
        if kept % config.window == 0 {
            if window_accepted == 0 {
                return Err(Error::Diagnostics(format!(
                    "no proposal accepted in kept draws {}..{kept}",
                    kept - config.window
                )));
            }
            window_accepted = 0;
        }
    }
    if accepted == 0 {
        return Err(Error::Diagnostics("no proposal accepted after burn-in".into()));
    }

    let names = layout.names();
    let n_draws = config.draws;
    let ess = (0..dim)
        .map(|j| effective_sample_size(&(0..n_draws).map(|i| values[i * dim + j]).collect::<Vec<_>>()))
        .collect();
    Ok(PosteriorDraws {
        model: *model,
        backend,
        layout,
        template,
        names,
        values,
        free,
        acceptance_rate: accepted as f64 / n_draws as f64,
        ess,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Linear-interpolation quantile of sorted data (the "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and central `level` interval per parameter.
pub fn posterior_summary(draws: &PosteriorDraws, level: f64) -> Result<Vec<ParamSummary>> {
    if draws.n_draws() < 100 {
        return Err(Error::Config(format!("need at least 100 draws, have {}", draws.n_draws())));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("interval level must lie in (0, 1), got {level}")));
    }
    Ok(draws
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut col = draws.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            col.sort_by(f64::total_cmp);
            ParamSummary {
                name: name.clone(),
                mean,
                lower: quantile_sorted(&col, (1.0 - level) / 2.0),
                upper: quantile_sorted(&col, (1.0 + level) / 2.0),
            }
        })
        .collect())
}
