//! Independent dense oracles and random problem instances shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vcdown::inference::TemporalKind;
use vcdown::{Extent, KernelFamily, KernelParams, ModelData, ModelSpec, ParamVector, SpaceTimeField, SpatialDomain};

pub struct Instance {
    pub model: ModelSpec,
    pub params: ParamVector,
    pub data: ModelData,
}

/// Closed-form correlation at distance `d`: exponential or half-integer Matérn.
pub fn correlation(k: &KernelParams, d: f64) -> f64 {
    let x = d / k.range;
    let poly = match k.family {
        KernelFamily::Exponential => 1.0,
        KernelFamily::Matern if k.smoothness == 0.5 => 1.0,
        KernelFamily::Matern if k.smoothness == 1.5 => 1.0 + x,
        KernelFamily::Matern if k.smoothness == 2.5 => 1.0 + x + x * x / 3.0,
        _ => panic!("oracle covers half-integer smoothness only"),
    };
    poly * (-x).exp()
}

fn cov(k: &Option<KernelParams>, d: f64) -> f64 {
    k.as_ref().map_or(0.0, |k| k.sd * k.sd * correlation(k, d))
}

fn temporal(model: &ModelSpec, p: &ParamVector, lag: i64) -> f64 {
    match (model.temporal, p.rho_ar) {
        (TemporalKind::Ar1, Some(r)) => r.powi(lag.unsigned_abs() as i32),
        _ => f64::from(u8::from(lag == 0)),
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Signal covariance between `(t_a, i)` with covariates `xa` and `(t_b, j)` with `xb`.
fn signal(model: &ModelSpec, p: &ParamVector, lag: i64, d: f64, xa: &[f64], xb: &[f64]) -> f64 {
    let r = temporal(model, p, lag);
    if r == 0.0 {
        return 0.0;
    }
    let slopes: f64 = xa.iter().zip(xb).map(|(a, b)| a * b).sum();
    let varying = if model.varying_slopes { slopes * cov(&p.theta1, d) } else { 0.0 };
    r * (cov(&p.theta0, d) + varying)
}

fn covariates_at(data: &ModelData, k: usize, i: usize) -> Vec<f64> {
    data.covariates().iter().map(|x| x.get(k, i)).collect()
}

/// Closed-form Wendland-1 weight with support `range`.
pub fn wendland1(d: f64, range: f64) -> f64 {
    let x = d / range;
    if x >= 1.0 {
        0.0
    } else {
        (1.0 - x).powi(4) * (1.0 + 4.0 * x)
    }
}

/// Observation covariance built entry by entry in time-major order.
pub fn dense_covariance(model: &ModelSpec, p: &ParamVector, data: &ModelData) -> DMatrix<f64> {
    dense_covariance_tapered(model, p, data, None)
}

/// As `dense_covariance`, with every spatial process multiplied by a Wendland-1 taper of range `taper`.
pub fn dense_covariance_tapered(model: &ModelSpec, p: &ParamVector, data: &ModelData, taper: Option<f64>) -> DMatrix<f64> {
    let n = data.n_locations();
    let times = data.times();
    let dom = data.domain();
    let size = n * times.len();
    DMatrix::from_fn(size, size, |r, c| {
        let (ka, i) = (r / n, r % n);
        let (kb, j) = (c / n, c % n);
        let d = dist(dom.location(i), dom.location(j));
        let weight = taper.map_or(1.0, |t| wendland1(d, t));
        let mut v = weight * signal(model, p, times[ka] - times[kb], d, &covariates_at(data, ka, i), &covariates_at(data, kb, j));
        if r == c {
            v += p.tau_sq;
        }
        v
    })
}

pub fn mean_vector(p: &ParamVector, data: &ModelData) -> DVector<f64> {
    let n = data.n_locations();
    DVector::from_fn(data.len(), |r, _| {
        let x = covariates_at(data, r / n, r % n);
        p.beta0 + p.beta1.iter().zip(&x).map(|(b, x)| b * x).sum::<f64>()
    })
}

/// Multivariate normal log density via LU: explicit log-determinant and linear solve.
pub fn dense_loglik(model: &ModelSpec, p: &ParamVector, data: &ModelData) -> f64 {
    dense_loglik_tapered(model, p, data, None)
}

pub fn dense_loglik_tapered(model: &ModelSpec, p: &ParamVector, data: &ModelData, taper: Option<f64>) -> f64 {
    let s = dense_covariance_tapered(model, p, data, taper);
    let y = DVector::from_column_slice(data.response().values());
    let r = y - mean_vector(p, data);
    let lu = s.lu();
    let log_det: f64 = lu.u().diagonal().iter().map(|v| v.abs().ln()).sum();
    let solved = lu.solve(&r).expect("nonsingular covariance");
    -0.5 * (r.len() as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + r.dot(&solved))
}

/// Partitioned-Gaussian conditional mean and variance of `Y` at every location for each target time.
pub fn dense_conditional(
    model: &ModelSpec,
    p: &ParamVector,
    data: &ModelData,
    target_times: &[i64],
    target_covariates: &[SpaceTimeField],
) -> (Vec<f64>, Vec<f64>) {
    let n = data.n_locations();
    let times = data.times();
    let dom = data.domain();
    let s = dense_covariance(model, p, data);
    let y = DVector::from_column_slice(data.response().values());
    let resid = y - mean_vector(p, data);
    let lu = s.lu();
    let alpha = lu.solve(&resid).expect("nonsingular covariance");
    let mut means = vec![];
    let mut vars = vec![];
    for (a, &ts) in target_times.iter().enumerate() {
        for w in 0..n {
            let xs: Vec<f64> = target_covariates.iter().map(|x| x.get(a, w)).collect();
            let c = DVector::from_fn(data.len(), |r, _| {
                let (kb, j) = (r / n, r % n);
                let mut v = signal(
                    model,
                    p,
                    ts - times[kb],
                    dist(dom.location(w), dom.location(j)),
                    &xs,
                    &covariates_at(data, kb, j),
                );
                if ts == times[kb] && w == j {
                    v += p.tau_sq;
                }
                v
            });
            let prior_mean = p.beta0 + p.beta1.iter().zip(&xs).map(|(b, x)| b * x).sum::<f64>();
            let prior_var = signal(model, p, 0, 0.0, &xs, &xs) + p.tau_sq;
            let sc = lu.solve(&c).expect("nonsingular covariance");
            means.push(prior_mean + c.dot(&alpha));
            vars.push(prior_var - c.dot(&sc));
        }
    }
    (means, vars)
}

fn normals(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn random_kernel(rng: &mut ChaCha8Rng, diameter: f64) -> KernelParams {
    let range = rng.random_range(0.05..0.8) * diameter;
    let sd = rng.random_range(0.3..1.5);
    match rng.random_range(0..4) {
        0 => KernelParams::exponential(range, sd),
        1 => KernelParams::matern(range, sd, 0.5),
        2 => KernelParams::matern(range, sd, 1.5),
        _ => KernelParams::matern(range, sd, 2.5),
    }
}

/// Regular or irregular rectangular lattice with at most `max_points` nodes.
pub fn random_domain(rng: &mut ChaCha8Rng, max_points: usize) -> SpatialDomain {
    let width = rng.random_range(1.0..20.0);
    loop {
        let nx = rng.random_range(2..=20);
        let ny = rng.random_range(2..=20);
        if nx * ny > max_points {
            continue;
        }
        if rng.random_bool(0.5) {
            return SpatialDomain::lattice(Extent::square(0.0, width), nx, ny).unwrap();
        }
        let axis = |rng: &mut ChaCha8Rng, k: usize| {
            let mut v: Vec<f64> = (0..k).map(|i| (i as f64 + rng.random_range(-0.3..0.3)) * width / k as f64).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let xs = axis(rng, nx);
        let ys = axis(rng, ny);
        return SpatialDomain::from_axes(&xs, &ys).unwrap();
    }
}

/// Increasing, possibly gapped, period labels.
pub fn random_times(rng: &mut ChaCha8Rng, count: usize) -> Vec<i64> {
    let mut t = rng.random_range(0..5i64);
    (0..count)
        .map(|_| {
            t += rng.random_range(1..=2);
            t
        })
        .collect()
}

pub fn random_field(rng: &mut ChaCha8Rng, times: &[i64], n: usize) -> SpaceTimeField {
    SpaceTimeField::new(times.to_vec(), n, normals(rng, n * times.len())).unwrap()
}

/// Model structure with its parameters; `iid_only` keeps periods independent.
pub fn random_model(rng: &mut ChaCha8Rng, diameter: f64, iid_only: bool) -> (ModelSpec, ParamVector) {
    let q = rng.random_range(0..=2);
    let temporal = if !iid_only && rng.random_bool(0.5) {
        TemporalKind::Ar1
    } else {
        TemporalKind::Iid
    };
    let kind = rng.random_range(0..4);
    let k0 = random_kernel(rng, diameter);
    let model = match kind {
        0 => ModelSpec::named(vcdown::ModelKind::M0, q),
        1 if temporal == TemporalKind::Iid => ModelSpec::m1(),
        1 => ModelSpec::m2(),
        2 if temporal == TemporalKind::Ar1 => ModelSpec::m3(q.max(1)),
        _ => ModelSpec::generic(q.max(1), temporal, true),
    }
    .with_kernel(k0.family, k0.smoothness);
    let theta0 = model.has_intercept_process().then_some(k0);
    let theta1 = model.varying_slopes.then(|| {
        let k = random_kernel(rng, diameter);
        KernelParams { family: k0.family, smoothness: k0.smoothness, ..k }
    });
    let params = ParamVector {
        beta0: rng.random_range(-2.0..2.0),
        beta1: (0..model.q).map(|_| rng.random_range(-1.0..1.0)).collect(),
        theta0,
        theta1,
        tau_sq: rng.random_range(0.05..0.5),
        rho_ar: (model.temporal == TemporalKind::Ar1).then(|| rng.random_range(-0.9..0.9)),
    };
    (model, params)
}

/// Random instance with at most `max_obs` observations and `max_points` locations.
pub fn random_instance(rng: &mut ChaCha8Rng, max_points: usize, max_obs: usize, iid_only: bool) -> Instance {
    let domain = random_domain(rng, max_points);
    let n = domain.len();
    let periods = rng.random_range(1..=(max_obs / n).clamp(1, 5));
    let times = random_times(rng, periods);
    let (model, params) = random_model(rng, domain.diameter(), iid_only);
    let covariates = (0..model.q).map(|_| random_field(rng, &times, n)).collect();
    let response = random_field(rng, &times, n);
    let data = ModelData::new(domain, response, covariates).unwrap();
    Instance { model, params, data }
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
