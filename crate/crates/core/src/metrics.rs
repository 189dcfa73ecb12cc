//! Prediction scores and timing.

use std::time::Instant;

use crate::error::{Error, Result};

fn check_lengths(n: usize, others: &[usize]) -> Result<()> {
    if n == 0 {
        return Err(Error::Dimension("cannot score an empty prediction".into()));
    }
    if others.iter().any(|&m| m != n) {
        return Err(Error::Dimension(format!("length mismatch: {n} vs {others:?}")));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(observed.len(), &[predicted.len()])?;
    let total: f64 = observed.iter().zip(predicted).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(total / observed.len() as f64)
}

pub fn rmse(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    mse(observed, predicted).map(f64::sqrt)
}

/// Mean interval score at interval level `level`.
///
/// The exceedance penalty is `2 / (1 - level)`, so a 95% interval pays 40 per unit
/// outside. Literature that parameterizes by the tail mass `a = 1 - level` writes the
/// same factor as `2 / a`.
pub fn interval_score(observed: &[f64], lower: &[f64], upper: &[f64], level: f64) -> Result<f64> {
    check_lengths(observed.len(), &[lower.len(), upper.len()])?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("interval level must lie in (0, 1), got {level}")));
    }
    // Levels are decimal quantities; snapping the tail mass drops binary noise so 0.95 gives exactly 40.
    let snapped = ((1.0 - level) * 1e12).round() / 1e12;
    let tail = if snapped > 0.0 { snapped } else { 1.0 - level };
    let penalty = 2.0 / tail;
    let mut total = 0.0;
    for ((&y, &l), &u) in observed.iter().zip(lower).zip(upper) {
        if !(l <= u) {
            return Err(Error::Domain(format!("lower bound {l} exceeds upper bound {u}")));
        }
        total += u - l;
        if y < l {
            total += penalty * (l - y);
        }
        if y > u {
            total += penalty * (y - u);
        }
    }
    Ok(total / observed.len() as f64)
}

/// Fraction of observations inside their intervals.
pub fn coverage(observed: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64> {
    check_lengths(observed.len(), &[lower.len(), upper.len()])?;
    let hits = observed
        .iter()
        .zip(lower)
        .zip(upper)
        .filter(|((y, l), u)| *l <= *y && *y <= *u)
        .count();
    Ok(hits as f64 / observed.len() as f64)
}

/// Runs `thunk` and returns its result with the wall-clock seconds it took.
pub fn timed<R>(_phase: &str, thunk: impl FnOnce() -> R) -> (R, f64) {
    let start = Instant::now();
    let out = thunk();
    (out, start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub mse: f64,
    pub rmse: f64,
    pub interval_score: f64,
    pub coverage: f64,
    pub level: f64,
    pub n_pairs: usize,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
}

impl MetricsReport {
    pub fn score(label: &str, observed: &[f64], mean: &[f64], lower: &[f64], upper: &[f64], level: f64) -> Result<Self> {
        let m = mse(observed, mean)?;
        Ok(MetricsReport {
            label: label.to_string(),
            mse: m,
            rmse: m.sqrt(),
            interval_score: interval_score(observed, lower, upper, level)?,
            coverage: coverage(observed, lower, upper)?,
            level,
            n_pairs: observed.len(),
            fit_seconds: 0.0,
            predict_seconds: 0.0,
        })
    }
}
