//! Exact vs tapered likelihood timings over grid sizes and taper ranges.

use std::path::Path;
use std::time::Instant;

use crate::covariance::{TaperPattern, TaperSpec};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::inference::{Backend, Likelihood, ModelData, ModelKind, ParamVector};
use crate::simulate::simulate_scenario;

use super::config::RunConfig;
use super::study::{model_for_scenario, study_entries};

pub const BENCH_HEADER: [&str; 7] = ["fine_side", "n", "backend", "taper_range", "nonzero_fraction", "median_seconds", "loglik"];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub fine_side: usize,
    pub n: usize,
    pub backend: Backend,
    pub nonzero_fraction: f64,
    pub median_seconds: f64,
    pub loglik: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median wall-clock seconds of one log-likelihood evaluation over `trials`,
/// including covariance assembly and factorization.
pub fn time_loglik(lik: &Likelihood<'_>, params: &ParamVector, trials: usize) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::Config("bench needs at least one trial".into()));
    }
    let mut times = Vec::with_capacity(trials);
    let mut value = f64::NAN;
    for _ in 0..trials {
        let start = Instant::now();
        value = lik.loglik(params)?;
        times.push(start.elapsed().as_secs_f64());
    }
    Ok((median(times), value))
}

/// Fraction of node pairs (both triangles, diagonal included) the taper keeps.
pub fn taper_fraction(data: &ModelData, taper: &TaperSpec) -> Result<f64> {
    let n = data.n_locations() as f64;
    Ok(TaperPattern::new(data.domain(), taper)?.stored_entries() as f64 / (n * n))
}

/// Runs the sweep on the first study entry, one period, at the true parameters of an M1 fit.
pub fn run_bench(cfg: &RunConfig, csv_path: &Path) -> Result<Vec<BenchRow>> {
    let entry = study_entries(cfg)?.remove(0);
    let seed = cfg.seed()?;
    let mut rows = vec![];
    for &side in &cfg.bench_sides {
        let mut scenario = entry.config.clone();
        scenario.grid = GridSpec::new(scenario.grid.extent, side, scenario.grid.coarse_side.min(side));
        let sim = simulate_scenario(&scenario, seed)?;
        let data = ModelData::from_pair(&sim.pair, sim.response.select_times(&[0]), &[])?;
        let model = model_for_scenario(&scenario, ModelKind::M1);
        let params = ParamVector {
            beta0: scenario.regional.beta0 - scenario.global.alpha,
            beta1: vec![],
            theta0: Some(scenario.regional.theta0),
            theta1: None,
            tau_sq: scenario.regional.tau_sq,
            rho_ar: None,
        };
        let spacing = data.domain().min_spacing();
        let mut backends = vec![(Backend::Exact, 1.0)];
        for &factor in &cfg.bench_tapers {
            let t = TaperSpec::wendland1(factor * spacing);
            backends.push((Backend::Tapered(t), taper_fraction(&data, &t)?));
        }
        for (backend, fraction) in backends {
            let lik = Likelihood::new(&model, &data, backend)?;
            let (secs, loglik) = time_loglik(&lik, &params, cfg.bench_trials)?;
            rows.push(BenchRow {
                fine_side: side,
                n: data.n_locations(),
                backend,
                nonzero_fraction: fraction,
                median_seconds: secs,
                loglik,
            });
        }
    }
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(BENCH_HEADER)?;
    for r in &rows {
        let range = match r.backend {
            Backend::Exact => String::new(),
            Backend::Tapered(t) => t.range.to_string(),
        };
        w.write_record([
            r.fine_side.to_string(),
            r.n.to_string(),
            r.backend.label().to_string(),
            range,
            r.nonzero_fraction.to_string(),
            r.median_seconds.to_string(),
            r.loglik.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
