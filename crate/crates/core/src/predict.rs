//! Conditional Gaussian prediction of the response at fine locations and times.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::grid::{nearest_in, CoarseFineMap, Point, SpatialDomain};
use crate::inference::{Backend, FitResult, Likelihood, ModelData, ModelSpec, ParamVector, PosteriorDraws};
use crate::simulate::SpaceTimeField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// The log scale the model is fitted on.
    Model,
    /// After the exponential back-transform.
    Physical,
}

impl Scale {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scale::Model => "model",
            Scale::Physical => "physical",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Scale::Model),
            "physical" => Ok(Scale::Physical),
            other => Err(Error::Config(format!("unknown scale '{other}'"))),
        }
    }
}

/// Prediction targets: every listed fine location at every listed time.
#[derive(Debug, Clone)]
pub struct TargetSet {
    pub times: Vec<i64>,
    pub locations: Vec<usize>,
    /// Covariates over the full fine domain at `times` (one field per covariate).
    pub covariates: Vec<SpaceTimeField>,
}

impl TargetSet {
    pub fn all_locations(n_locations: usize, times: Vec<i64>, covariates: Vec<SpaceTimeField>) -> Self {
        TargetSet {
            times,
            locations: (0..n_locations).collect(),
            covariates,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len() * self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-target predictive mean and interval, ordered time-major over the target set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub times: Vec<i64>,
    pub locations: Vec<usize>,
    pub coords: Vec<Point>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Predictive variance on the model scale.
    pub variance: Vec<f64>,
    pub level: f64,
    pub scale: Scale,
}

impl PredictionResult {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

pub enum Predictor<'a> {
    /// Plug-in prediction at the point estimate.
    Plugin(&'a FitResult),
    /// Posterior-predictive mixture over thinned draws.
    Posterior(&'a PosteriorDraws),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    pub level: f64,
    /// Add the variance due to estimating the fixed effects (universal kriging).
    pub mean_uncertainty: bool,
    /// Posterior draws used in the predictive mixture.
    pub posterior_draws: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            level: 0.95,
            mean_uncertainty: false,
            posterior_draws: 500,
        }
    }
}

fn check_targets(model: &ModelSpec, data: &ModelData, targets: &TargetSet) -> Result<()> {
    let n = data.n_locations();
    if targets.is_empty() {
        return Err(Error::Dimension("no prediction targets".into()));
    }
    if targets.locations.iter().any(|&w| w >= n) {
        return Err(Error::Dimension("target location outside the fine domain".into()));
    }
    if targets.covariates.len() != model.q {
        return Err(Error::Dimension(format!(
            "{} target covariate fields for {} covariates",
            targets.covariates.len(),
            model.q
        )));
    }
    for x in &targets.covariates {
        if x.times() != targets.times || x.n_locations() != n {
            return Err(Error::Dimension("target covariates do not cover the targets".into()));
        }
    }
    Ok(())
}

/// Conditional means and variances of the targets given the data at parameters `p`.
pub fn conditional_moments(
    model: &ModelSpec,
    p: &ParamVector,
    backend: Backend,
    data: &ModelData,
    targets: &TargetSet,
    mean_uncertainty: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_targets(model, data, targets)?;
    let lik = Likelihood::new(model, data, backend)?;
    let factor = lik.factor(p)?;
    let temporal = lik.temporal(p);
    let table = data.distances();
    let n = data.n_locations();
    let train_times = data.times();
    let beta = p.fixed_effects();
    let y = data.response().values();
    let resid: Vec<f64> = y.iter().zip(data.mean(&beta)).map(|(y, m)| y - m).collect();
    let weights = factor.solve(&resid);

    let k0 = p.theta0.as_ref().map(|k| lik.spatial_values(k));
    let k1 = p.theta1.as_ref().map(|k| lik.spatial_values(k));
    let var0 = k0.as_ref().map_or(0.0, |v| v[0]);
    let var1 = k1.as_ref().map_or(0.0, |v| v[0]);

    // Universal kriging pieces: F' S^-1 F and S^-1 F.
    let cols = data.design_columns();
    let (gram, solved_cols) = if mean_uncertainty {
        let solved: Vec<Vec<f64>> = cols.iter().map(|c| factor.solve(c)).collect();
        let q = cols.len();
        let a = DMatrix::from_fn(q, q, |i, j| cols[i].iter().zip(&solved[j]).map(|(a, b)| a * b).sum());
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Numerical("design matrix is rank deficient".into()))?;
        (Some(chol), solved)
    } else {
        (None, vec![])
    };

    let jobs: Vec<(usize, usize)> = (0..targets.times.len())
        .flat_map(|a| targets.locations.iter().map(move |&w| (a, w)))
        .collect();
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(a, w)| {
            let t_star = targets.times[a];
            let x_star: Vec<f64> = targets.covariates.iter().map(|x| x.get(a, w)).collect();
            let mut mean = beta[0] + beta[1..].iter().zip(&x_star).map(|(b, x)| b * x).sum::<f64>();
            let mut prior_var = var0 + p.tau_sq;
            prior_var += x_star.iter().map(|x| x * x * var1).sum::<f64>();

            let mut k = vec![0.0; data.len()];
            let mut any = false;
            for (kt, &t) in train_times.iter().enumerate() {
                let r = temporal.correlation(t_star - t);
                if r == 0.0 {
                    continue;
                }
                any = true;
                for i in 0..n {
                    let idx = table.index(w, i);
                    let mut c = 0.0;
                    if let Some(v) = &k0 {
                        c += v[idx];
                    }
                    if let Some(v) = &k1 {
                        for (xs, x) in x_star.iter().zip(data.covariates()) {
                            c += xs * x.get(kt, i) * v[idx];
                        }
                    }
                    if t == t_star && i == w {
                        c += p.tau_sq;
                    }
                    k[kt * n + i] = r * c;
                }
            }
            let mut var = prior_var;
            let mut solved_k = None;
            if any {
                mean += k.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
                let s = factor.solve(&k);
                var -= k.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>();
                solved_k = Some(s);
            }
            if let Some(chol) = &gram {
                let f_star: Vec<f64> = std::iter::once(1.0).chain(x_star.iter().copied()).collect();
                let u = DVector::from_fn(f_star.len(), |j, _| {
                    let proj = match &solved_k {
                        Some(s) => cols[j].iter().zip(s).map(|(a, b)| a * b).sum::<f64>(),
                        None => 0.0,
                    };
                    f_star[j] - proj
                });
                let _ = &solved_cols;
                var += u.dot(&chol.solve(&u));
            }
            (mean, var.max(0.0))
        })
        .collect();
    Ok(results.into_iter().unzip())
}

fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("interval level must lie in (0, 1), got {level}")));
    }
    Ok(Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 * (1.0 + level)))
}

fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        0.5 * erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2))
    } else if x >= mean {
        1.0
    } else {
        0.0
    }
}

/// Quantile of an equal-weight normal mixture by bisection on its CDF.
pub fn mixture_quantile(means: &[f64], sds: &[f64], p: f64) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (m, s) in means.iter().zip(sds) {
        lo = lo.min(m - 10.0 * s);
        hi = hi.max(m + 10.0 * s);
    }
    let cdf = |x: f64| means.iter().zip(sds).map(|(m, s)| normal_cdf(x, *m, *s)).sum::<f64>() / means.len() as f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn target_coords(data: &ModelData, targets: &TargetSet) -> (Vec<i64>, Vec<usize>, Vec<Point>) {
    let mut times = Vec::with_capacity(targets.len());
    let mut locations = Vec::with_capacity(targets.len());
    let mut coords = Vec::with_capacity(targets.len());
    for &t in &targets.times {
        for &w in &targets.locations {
            times.push(t);
            locations.push(w);
            coords.push(data.domain().location(w));
        }
    }
    (times, locations, coords)
}

/// Predict the response at the targets given training data.
///
/// Plug-in intervals are `mean -/+ z sd`; posterior intervals are quantiles of
/// the Gaussian mixture over thinned draws.
pub fn predict_response(
    predictor: Predictor<'_>,
    data: &ModelData,
    targets: &TargetSet,
    options: &PredictOptions,
) -> Result<PredictionResult> {
    let z = normal_quantile(options.level)?;
    let (times, locations, coords) = target_coords(data, targets);
    let (mean, lower, upper, variance) = match predictor {
        Predictor::Plugin(fit) => {
            let (mean, variance) = conditional_moments(
                &fit.model,
                &fit.estimates,
                fit.backend,
                data,
                targets,
                options.mean_uncertainty,
            )?;
            let lower = mean.iter().zip(&variance).map(|(m, v)| m - z * v.sqrt()).collect();
            let upper = mean.iter().zip(&variance).map(|(m, v)| m + z * v.sqrt()).collect();
            (mean, lower, upper, variance)
        }
        Predictor::Posterior(draws) => {
            let params = draws.thinned(options.posterior_draws);
            let moments = params
                .iter()
                .map(|p| conditional_moments(&draws.model, p, draws.backend, data, targets, false))
                .collect::<Result<Vec<_>>>()?;
            let m = moments.len() as f64;
            let count = targets.len();
            let mut mean = vec![0.0; count];
            let mut lower = vec![0.0; count];
            let mut upper = vec![0.0; count];
            let mut variance = vec![0.0; count];
            let lo_p = 0.5 * (1.0 - options.level);
            let hi_p = 0.5 * (1.0 + options.level);
            for i in 0..count {
                let means: Vec<f64> = moments.iter().map(|(mu, _)| mu[i]).collect();
                let sds: Vec<f64> = moments.iter().map(|(_, v)| v[i].sqrt()).collect();
                let mu = means.iter().sum::<f64>() / m;
                let second = moments.iter().map(|(mu, v)| v[i] + mu[i] * mu[i]).sum::<f64>() / m;
                mean[i] = mu;
                variance[i] = (second - mu * mu).max(0.0);
                lower[i] = mixture_quantile(&means, &sds, lo_p).min(mu);
                upper[i] = mixture_quantile(&means, &sds, hi_p).max(mu);
            }
            (mean, lower, upper, variance)
        }
    };
    Ok(PredictionResult {
        times,
        locations,
        coords,
        mean,
        lower,
        upper,
        variance,
        level: options.level,
        scale: Scale::Model,
    })
}

/// Adds the coarse field at `s(w)` to model-scale predictions, turning `Y_t(w)` into `C_t(w)`.
pub fn add_coarse_field(pred: &PredictionResult, coarse: &SpaceTimeField, map: &CoarseFineMap) -> Result<PredictionResult> {
    if pred.scale != Scale::Model {
        return Err(Error::Domain("offsets apply on the model scale only".into()));
    }
    let mut out = pred.clone();
    for i in 0..pred.len() {
        let k = coarse
            .position(pred.times[i])
            .ok_or_else(|| Error::Dimension(format!("coarse field lacks time {}", pred.times[i])))?;
        let c = coarse.get(k, map.fine_to_coarse[pred.locations[i]]);
        out.mean[i] += c;
        out.lower[i] += c;
        out.upper[i] += c;
    }
    Ok(out)
}

/// Maps mean and bounds through `exp`; quantile bounds stay quantiles under a monotone map.
pub fn back_transform(pred: &PredictionResult) -> Result<PredictionResult> {
    if pred.scale == Scale::Physical {
        return Err(Error::Domain("prediction is already on the physical scale".into()));
    }
    let mut out = pred.clone();
    for v in out.mean.iter_mut().chain(out.lower.iter_mut()).chain(out.upper.iter_mut()) {
        *v = v.exp();
    }
    out.scale = Scale::Physical;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub time: i64,
    pub point: Point,
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationPair {
    pub time: i64,
    pub fine_index: usize,
    pub observed: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationEvaluation {
    pub pairs: Vec<StationPair>,
    /// Stations without an observation.
    pub dropped_missing: usize,
    /// Stations outside the fine lattice's cells (still matched to the nearest node).
    pub outside_extent: usize,
    /// Stations at times without predictions.
    pub unmatched_time: usize,
}

/// Pair each station with the prediction at its nearest fine node.
pub fn evaluate_at_stations(
    pred: &PredictionResult,
    fine: &SpatialDomain,
    stations: &[Station],
) -> Result<StationEvaluation> {
    if stations.is_empty() {
        return Err(Error::Dimension("station list is empty".into()));
    }
    let lookup: HashMap<(i64, usize), usize> =
        (0..pred.len()).map(|i| ((pred.times[i], pred.locations[i]), i)).collect();
    let [dx, dy] = fine.spacing();
    let xs = fine.locations().iter().map(|p| p[0]);
    let ys = fine.locations().iter().map(|p| p[1]);
    let x_lo = xs.clone().fold(f64::INFINITY, f64::min) - 0.5 * dx;
    let x_hi = xs.fold(f64::NEG_INFINITY, f64::max) + 0.5 * dx;
    let y_lo = ys.clone().fold(f64::INFINITY, f64::min) - 0.5 * dy;
    let y_hi = ys.fold(f64::NEG_INFINITY, f64::max) + 0.5 * dy;

    let mut out = StationEvaluation {
        pairs: vec![],
        dropped_missing: 0,
        outside_extent: 0,
        unmatched_time: 0,
    };
    for s in stations {
        let [x, y] = s.point;
        if x < x_lo || x > x_hi || y < y_lo || y > y_hi {
            out.outside_extent += 1;
        }
        let observed = match s.observed {
            Some(v) if v.is_finite() => v,
            _ => {
                out.dropped_missing += 1;
                continue;
            }
        };
        let w = nearest_in(fine, s.point);
        match lookup.get(&(s.time, w)) {
            Some(&i) => out.pairs.push(StationPair {
                time: s.time,
                fine_index: w,
                observed,
                mean: pred.mean[i],
                lower: pred.lower[i],
                upper: pred.upper[i],
            }),
            None => out.unmatched_time += 1,
        }
    }
    Ok(out)
}
