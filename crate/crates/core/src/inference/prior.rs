//! Penalized-complexity priors for the covariance parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::ParamVector;

/// Calibration of the AR(1) coefficient prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "base", rename_all = "lowercase")]
pub enum Ar1Prior {
    /// Base model rho = 1 with `P(rho > u) = alpha`; needs `alpha` in `(sqrt(1/2) + (1 - sqrt(1/2)) * g(u), 1)`.
    One { u: f64, alpha: f64 },
    /// Base model rho = 0 with `P(|rho| > u) = alpha`.
    Zero { u: f64, alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FixedEffectPrior {
    Gaussian { mean: f64, sd: f64 },
    Flat,
}

/// Log-gamma prior on the nugget precision `1 / tau^2`, or flat on `tau^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NuggetPrior {
    GammaPrecision { shape: f64, rate: f64 },
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// `P(phi < range_median) = 1/2`.
    pub range_median: f64,
    /// `P(sigma > sd_threshold) = sd_probability`.
    pub sd_threshold: f64,
    pub sd_probability: f64,
    pub ar1: Ar1Prior,
    pub fixed_effects: FixedEffectPrior,
    pub nugget: NuggetPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            range_median: 700.0,
            sd_threshold: 0.32,
            sd_probability: 0.01,
            ar1: Ar1Prior::One { u: 0.0, alpha: 0.9 },
            fixed_effects: FixedEffectPrior::Gaussian { mean: 0.0, sd: 1000.0 },
            nugget: NuggetPrior::GammaPrecision { shape: 1.0, rate: 5e-5 },
        }
    }
}

/// Distance to the rho = 1 base model.
fn d_one(rho: f64) -> f64 {
    (1.0 - rho).sqrt()
}

/// Distance to the rho = 0 base model.
fn d_zero(rho: f64) -> f64 {
    (-(1.0 - rho * rho).ln()).sqrt()
}

/// `P(rho > u)` under the rho = 1 prior with rate `theta`.
fn upper_tail_one(theta: f64, u: f64) -> f64 {
    (-(-theta * d_one(u)).exp_m1()) / (-(-theta * std::f64::consts::SQRT_2).exp_m1())
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| p > 0.0 && p < 1.0;
        if !(self.range_median > 0.0 && self.sd_threshold > 0.0 && prob(self.sd_probability)) {
            return Err(Error::Config(format!("invalid PC prior calibration: {self:?}")));
        }
        self.ar1_rate()?;
        match self.fixed_effects {
            FixedEffectPrior::Gaussian { sd, .. } if !(sd > 0.0) => {
                Err(Error::Config("fixed-effect prior sd must be positive".into()))
            }
            _ => Ok(()),
        }?;
        match self.nugget {
            NuggetPrior::GammaPrecision { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                Err(Error::Config("nugget prior needs positive shape and rate".into()))
            }
            _ => Ok(()),
        }
    }

    /// Rate of the exponential prior on the standard deviation.
    pub fn sd_rate(&self) -> f64 {
        -self.sd_probability.ln() / self.sd_threshold
    }

    /// Scale `lambda` of the range prior `(lambda / phi^2) exp(-lambda / phi)`.
    pub fn range_scale(&self) -> f64 {
        self.range_median * std::f64::consts::LN_2
    }

    /// Rate `theta` of the AR(1) prior on its base-model distance.
    pub fn ar1_rate(&self) -> Result<f64> {
        match self.ar1 {
            Ar1Prior::Zero { u, alpha } => {
                if !(u > 0.0 && u < 1.0 && alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::Config(format!("rho=0 PC prior needs u, alpha in (0,1): {u}, {alpha}")));
                }
                Ok(-alpha.ln() / d_zero(u))
            }
            Ar1Prior::One { u, alpha } => {
                if !(u > -1.0 && u < 1.0 && alpha < 1.0) {
                    return Err(Error::Config(format!("rho=1 PC prior needs u in (-1,1), alpha < 1: {u}, {alpha}")));
                }
                // P(rho > u) rises from its theta -> 0 limit to 1 as theta grows.
                let floor = d_one(u) / std::f64::consts::SQRT_2;
                if !(alpha > floor) {
                    return Err(Error::Config(format!(
                        "rho=1 PC prior: P(rho > {u}) must exceed {floor:.4}, got {alpha}"
                    )));
                }
                let (mut lo, mut hi) = (1e-12, 1.0);
                while upper_tail_one(hi, u) < alpha {
                    hi *= 2.0;
                    if hi > 1e8 {
                        return Err(Error::Config(format!("rho=1 PC prior: cannot reach P = {alpha}")));
                    }
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if upper_tail_one(mid, u) < alpha {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }

    pub fn log_sd_density(&self, sigma: f64) -> f64 {
        if !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        let l = self.sd_rate();
        l.ln() - l * sigma
    }

    pub fn log_range_density(&self, phi: f64) -> f64 {
        if !(phi > 0.0) {
            return f64::NEG_INFINITY;
        }
        let l = self.range_scale();
        l.ln() - 2.0 * phi.ln() - l / phi
    }

    pub fn log_ar1_density(&self, rho: f64) -> f64 {
        if !(rho.abs() < 1.0) {
            return f64::NEG_INFINITY;
        }
        let theta = match self.ar1_rate() {
            Ok(t) => t,
            Err(_) => return f64::NEG_INFINITY,
        };
        match self.ar1 {
            Ar1Prior::One { .. } => {
                let d = d_one(rho);
                theta.ln() - theta * d - (2.0 * d).ln() - (-(-theta * std::f64::consts::SQRT_2).exp_m1()).ln()
            }
            Ar1Prior::Zero { .. } => {
                if rho == 0.0 {
                    // The density tends to theta/2 at the base model.
                    return (0.5 * theta).ln();
                }
                let d = d_zero(rho);
                (0.5 * theta).ln() - theta * d + rho.abs().ln() - (1.0 - rho * rho).ln() - d.ln()
            }
        }
    }

    pub fn log_nugget_density(&self, tau_sq: f64) -> f64 {
        if !(tau_sq > 0.0) {
            return f64::NEG_INFINITY;
        }
        match self.nugget {
            NuggetPrior::Flat => 0.0,
            NuggetPrior::GammaPrecision { shape, rate } => {
                let prec = 1.0 / tau_sq;
                // Gamma density of the precision times |d prec / d tau^2| = prec^2.
                shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * prec.ln()
                    - rate * prec
                    + 2.0 * prec.ln()
            }
        }
    }

    pub fn log_fixed_effect_density(&self, beta: f64) -> f64 {
        match self.fixed_effects {
            FixedEffectPrior::Flat => 0.0,
            FixedEffectPrior::Gaussian { mean, sd } => {
                let z = (beta - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
        }
    }
}

/// Joint log prior density: range and sd of each process, AR(1) coefficient, nugget and fixed effects.
pub fn pc_prior_logdensity(prior: &PriorSpec, params: &ParamVector) -> f64 {
    let mut total = 0.0;
    for k in params.theta0.iter().chain(params.theta1.iter()) {
        total += prior.log_range_density(k.range) + prior.log_sd_density(k.sd);
    }
    if let Some(r) = params.rho_ar {
        total += prior.log_ar1_density(r);
    }
    total += prior.log_nugget_density(params.tau_sq);
    total += params.fixed_effects().iter().map(|&b| prior.log_fixed_effect_density(b)).sum::<f64>();
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}
