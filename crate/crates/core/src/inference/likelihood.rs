//! Gaussian log-likelihood of the response under exact or tapered covariance.
//!
//! Observations are ordered time-major. The covariance is
//! `R ⊗ K0 + sum_j (R ⊗ K1) ⊙ x_j x_j' + tau^2 I`, and the factorization is
//! chosen by structure: a diagonal for the nugget-only model, shared or
//! per-period blocks when periods are independent, the Kronecker eigenbasis
//! for an exact AR(1) intercept, and the assembled matrix otherwise.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{
    hadamard_rank1, spacetime_cov_at, DistanceTable, KernelParams, SymmetricMatrix, TaperPattern, TaperSpec,
    TemporalStructure,
};
use crate::error::{Error, Result};
use crate::grid::{GridPair, SpatialDomain};
use crate::linalg::{CovFactor, KroneckerFactor};
use crate::simulate::SpaceTimeField;

use super::model::{ModelSpec, ParamVector, TemporalKind};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Backend {
    Exact,
    Tapered(TaperSpec),
}

impl Backend {
    pub fn label(&self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::Tapered(_) => "tapered",
        }
    }
}

/// Response and covariates on the fine domain, with cached pairwise distances.
#[derive(Debug, Clone)]
pub struct ModelData {
    domain: SpatialDomain,
    distances: Arc<DistanceTable>,
    response: SpaceTimeField,
    /// Covariates already pulled back to the fine domain.
    covariates: Vec<SpaceTimeField>,
}

impl ModelData {
    pub fn new(domain: SpatialDomain, response: SpaceTimeField, covariates: Vec<SpaceTimeField>) -> Result<Self> {
        let distances = Arc::new(DistanceTable::new(&domain));
        Self::with_distances(domain, distances, response, covariates)
    }

    fn with_distances(
        domain: SpatialDomain,
        distances: Arc<DistanceTable>,
        response: SpaceTimeField,
        covariates: Vec<SpaceTimeField>,
    ) -> Result<Self> {
        if response.n_times() == 0 || response.n_locations() == 0 {
            return Err(Error::Dimension("training data is empty".into()));
        }
        if response.n_locations() != domain.len() {
            return Err(Error::Dimension(format!(
                "response has {} locations, domain {}",
                response.n_locations(),
                domain.len()
            )));
        }
        for x in &covariates {
            if x.times() != response.times() || x.n_locations() != domain.len() {
                return Err(Error::Dimension("covariate field does not match the response".into()));
            }
        }
        if response.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("response contains non-finite values".into()));
        }
        Ok(ModelData {
            domain,
            distances,
            response,
            covariates,
        })
    }

    /// Response on the fine grid with coarse covariates pulled back through the map.
    pub fn from_pair(pair: &GridPair, response: SpaceTimeField, coarse_covariates: &[SpaceTimeField]) -> Result<Self> {
        let covariates = coarse_covariates.iter().map(|x| x.on_fine(&pair.map)).collect();
        Self::new(pair.fine.clone(), response, covariates)
    }

    /// Same locations, a subset of periods (shares the distance cache).
    pub fn select_times(&self, positions: &[usize]) -> Result<Self> {
        Self::with_distances(
            self.domain.clone(),
            Arc::clone(&self.distances),
            self.response.select_times(positions),
            self.covariates.iter().map(|x| x.select_times(positions)).collect(),
        )
    }

    /// New response/covariates over the same domain (shares the distance cache).
    pub fn with_fields(&self, response: SpaceTimeField, covariates: Vec<SpaceTimeField>) -> Result<Self> {
        Self::with_distances(self.domain.clone(), Arc::clone(&self.distances), response, covariates)
    }

    /// Keeps the first `q` covariates, for models that use fewer than the data carries.
    pub fn leading_covariates(&self, q: usize) -> Result<Self> {
        if q > self.covariates.len() {
            return Err(Error::Dimension(format!(
                "model needs {q} covariates, data has {}",
                self.covariates.len()
            )));
        }
        Self::with_distances(
            self.domain.clone(),
            Arc::clone(&self.distances),
            self.response.clone(),
            self.covariates[..q].to_vec(),
        )
    }

    pub fn domain(&self) -> &SpatialDomain {
        &self.domain
    }

    pub fn distances(&self) -> &DistanceTable {
        &self.distances
    }

    pub fn response(&self) -> &SpaceTimeField {
        &self.response
    }

    pub fn covariates(&self) -> &[SpaceTimeField] {
        &self.covariates
    }

    pub fn times(&self) -> &[i64] {
        self.response.times()
    }

    pub fn n_locations(&self) -> usize {
        self.domain.len()
    }

    pub fn len(&self) -> usize {
        self.response.values().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Design matrix columns: intercept, then covariates.
    pub fn design_columns(&self) -> Vec<Vec<f64>> {
        let mut cols = vec![vec![1.0; self.len()]];
        cols.extend(self.covariates.iter().map(|x| x.values().to_vec()));
        cols
    }

    pub fn mean(&self, beta: &[f64]) -> Vec<f64> {
        let mut mu = vec![beta[0]; self.len()];
        for (b, x) in beta[1..].iter().zip(&self.covariates) {
            for (m, v) in mu.iter_mut().zip(x.values()) {
                *m += b * v;
            }
        }
        mu
    }
}

/// Log-likelihood evaluator for one model, dataset and backend.
#[derive(Debug, Clone)]
pub struct Likelihood<'a> {
    model: ModelSpec,
    data: &'a ModelData,
    backend: Backend,
    pattern: Option<TaperPattern>,
}

/// Profile log-likelihood at given covariance parameters.
#[derive(Debug, Clone)]
pub struct Profile {
    pub loglik: f64,
    pub beta: Vec<f64>,
    pub jitter: f64,
}

impl<'a> Likelihood<'a> {
    pub fn new(model: &ModelSpec, data: &'a ModelData, backend: Backend) -> Result<Self> {
        model.validate()?;
        if data.covariates().len() != model.q {
            return Err(Error::Dimension(format!(
                "model has {} covariates, data {}",
                model.q,
                data.covariates().len()
            )));
        }
        let pattern = match backend {
            Backend::Exact => None,
            Backend::Tapered(t) => Some(TaperPattern::new(data.domain(), &t)?),
        };
        Ok(Likelihood {
            model: *model,
            data,
            backend,
            pattern,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn data(&self) -> &ModelData {
        self.data
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    /// Spatial covariance under the backend.
    pub fn spatial(&self, k: &KernelParams) -> SymmetricMatrix {
        match &self.pattern {
            None => SymmetricMatrix::Dense(self.data.distances().kernel_matrix(k)),
            Some(p) => SymmetricMatrix::Sparse(p.assemble(k)),
        }
    }

    /// Kernel (times taper, if any) at each distinct distance of the data's distance table.
    pub fn spatial_values(&self, k: &KernelParams) -> Vec<f64> {
        let d = self.data.distances().distinct_distances();
        match &self.backend {
            Backend::Exact => d.iter().map(|&d| k.covariance(d)).collect(),
            Backend::Tapered(t) => d.iter().map(|&d| k.covariance(d) * t.weight(d)).collect(),
        }
    }

    pub fn temporal(&self, p: &ParamVector) -> TemporalStructure {
        match p.rho_ar {
            Some(rho) if self.model.temporal == TemporalKind::Ar1 => TemporalStructure::Ar1 { rho },
            _ => TemporalStructure::Iid,
        }
    }

    /// Covariance of one period's observations (independent periods only).
    fn period_matrix(&self, p: &ParamVector, k: usize) -> Result<SymmetricMatrix> {
        let n = self.data.n_locations();
        let mut m = match &p.theta0 {
            Some(t0) => self.spatial(t0),
            None => SymmetricMatrix::Dense(DMatrix::zeros(n, n)),
        };
        if let Some(t1) = &p.theta1 {
            let base = self.spatial(t1);
            for x in self.data.covariates() {
                m = m.add(&hadamard_rank1(&base, x.slice(k))?)?;
            }
        }
        m.add_diagonal(p.tau_sq);
        Ok(m)
    }

    /// Full assembled covariance of all observations.
    pub fn covariance(&self, p: &ParamVector) -> Result<SymmetricMatrix> {
        let times = self.data.times();
        let temporal = self.temporal(p);
        let n = self.data.n_locations();
        let nt = times.len();
        let mut m = match &p.theta0 {
            Some(t0) => spacetime_cov_at(&self.spatial(t0), &temporal, times)?,
            None => SymmetricMatrix::Dense(DMatrix::zeros(n * nt, n * nt)),
        };
        if let Some(t1) = &p.theta1 {
            let base = spacetime_cov_at(&self.spatial(t1), &temporal, times)?;
            for x in self.data.covariates() {
                m = m.add(&hadamard_rank1(&base, x.values())?)?;
            }
        }
        m.add_diagonal(p.tau_sq);
        Ok(m)
    }

    /// Factor of the observation covariance.
    pub fn factor(&self, p: &ParamVector) -> Result<CovFactor> {
        p.validate_for(&self.model)?;
        let n = self.data.n_locations();
        let nt = self.data.times().len();
        let independent_periods = self.model.temporal == TemporalKind::Iid || nt == 1;
        if p.theta0.is_none() && p.theta1.is_none() {
            return Ok(CovFactor::Diagonal(vec![p.tau_sq; n * nt]));
        }
        if independent_periods {
            if p.theta1.is_none() {
                let m = self.period_matrix(p, 0)?;
                let f = Arc::new(CovFactor::from_matrix(&m, max_diagonal(&m))?);
                return Ok(CovFactor::Blocks {
                    size: n,
                    blocks: vec![f; nt],
                });
            }
            let blocks = (0..nt)
                .map(|k| {
                    let m = self.period_matrix(p, k)?;
                    Ok(Arc::new(CovFactor::from_matrix(&m, max_diagonal(&m))?))
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(CovFactor::Blocks { size: n, blocks });
        }
        if let (Backend::Exact, None, Some(t0)) = (self.backend, &p.theta1, &p.theta0) {
            let temporal = self.temporal(p);
            let times = self.data.times();
            let r = DMatrix::from_fn(nt, nt, |a, b| temporal.correlation(times[a] - times[b]));
            let k = self.data.distances().kernel_matrix(t0);
            return Ok(CovFactor::Kronecker(KroneckerFactor::new(r, k, p.tau_sq)?));
        }
        let m = self.covariance(p)?;
        CovFactor::from_matrix(&m, max_diagonal(&m))
    }

    /// Log-likelihood with the fixed effects taken from `p`.
    pub fn loglik(&self, p: &ParamVector) -> Result<f64> {
        let f = self.factor(p)?;
        let mu = self.data.mean(&p.fixed_effects());
        let r: Vec<f64> = self.data.response().values().iter().zip(&mu).map(|(y, m)| y - m).collect();
        Ok(gaussian_loglik(&f, &r))
    }

    /// Log-likelihood with the fixed effects replaced by their GLS estimate.
    pub fn profile(&self, p: &ParamVector) -> Result<Profile> {
        let f = self.factor(p)?;
        let beta = gls(&f, self.data)?;
        let mu = self.data.mean(&beta);
        let r: Vec<f64> = self.data.response().values().iter().zip(&mu).map(|(y, m)| y - m).collect();
        Ok(Profile {
            loglik: gaussian_loglik(&f, &r),
            beta,
            jitter: f.jitter(),
        })
    }
}

fn max_diagonal(m: &SymmetricMatrix) -> f64 {
    (0..m.dim()).map(|i| m.get(i, i)).fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-1/2 (N log 2 pi + log|S| + r' S^-1 r)`.
pub fn gaussian_loglik(f: &CovFactor, r: &[f64]) -> f64 {
    let quad = dot(r, &f.solve(r));
    -0.5 * (r.len() as f64 * LN_2PI + f.log_det() + quad)
}

/// Generalized least squares estimate of the fixed effects.
pub fn gls(f: &CovFactor, data: &ModelData) -> Result<Vec<f64>> {
    let cols = data.design_columns();
    let y = data.response().values();
    let p = cols.len();
    let solved: Vec<Vec<f64>> = cols.iter().map(|c| f.solve(c)).collect();
    let a = DMatrix::from_fn(p, p, |i, j| dot(&cols[i], &solved[j]));
    let b = DVector::from_fn(p, |i, _| dot(&solved[i], y));
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("design matrix is rank deficient".into()))?;
    Ok(chol.solve(&b).data.into())
}

pub fn loglik_exact(model: &ModelSpec, params: &ParamVector, data: &ModelData) -> Result<f64> {
    Likelihood::new(model, data, Backend::Exact)?.loglik(params)
}

pub fn loglik_tapered(model: &ModelSpec, params: &ParamVector, taper: &TaperSpec, data: &ModelData) -> Result<f64> {
    Likelihood::new(model, data, Backend::Tapered(*taper))?.loglik(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Extent;
    use crate::simulate::standard_normal_covariates;

    fn dense_oracle(sigma: &DMatrix<f64>, r: &[f64]) -> f64 {
        let lu = sigma.clone().lu();
        let det = lu.determinant();
        let x = lu.solve(&DVector::from_column_slice(r)).unwrap();
        let quad: f64 = r.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        -0.5 * (r.len() as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
    }

    fn dataset(side: usize, periods: usize, q: usize, seed: u64) -> ModelData {
        let d = SpatialDomain::lattice(Extent::square(0.0, 1.0), side, side).unwrap();
        let n = d.len();
        let y = standard_normal_covariates(n, 1, periods, seed).unwrap().remove(0);
        let x = standard_normal_covariates(n, q, periods, seed + 1000).unwrap();
        ModelData::new(d, y, x).unwrap()
    }

    fn full_params(q: usize) -> ParamVector {
        ParamVector {
            beta0: 0.2,
            beta1: vec![0.1; q],
            theta0: Some(KernelParams::matern(0.4, 0.9, 1.0)),
            theta1: Some(KernelParams::matern(0.3, 0.5, 1.0)),
            tau_sq: 0.3,
            rho_ar: Some(0.6),
        }
    }

    fn brute_covariance(model: &ModelSpec, p: &ParamVector, data: &ModelData) -> DMatrix<f64> {
        let n = data.n_locations();
        let times = data.times();
        let nt = times.len();
        DMatrix::from_fn(n * nt, n * nt, |a, b| {
            let (ka, i) = (a / n, a % n);
            let (kb, j) = (b / n, b % n);
            let lag = (times[ka] - times[kb]).abs();
            let r = match (model.temporal, p.rho_ar) {
                (TemporalKind::Ar1, Some(rho)) => rho.powi(lag as i32),
                _ => (lag == 0) as i32 as f64,
            };
            let d = data.domain().distance(i, j);
            let mut v = 0.0;
            if let Some(k) = &p.theta0 {
                v += r * k.covariance(d);
            }
            if let Some(k) = &p.theta1 {
                for x in data.covariates() {
                    v += r * k.covariance(d) * x.get(ka, i) * x.get(kb, j);
                }
            }
            if a == b {
                v += p.tau_sq;
            }
            v
        })
    }

    fn residual(p: &ParamVector, data: &ModelData) -> Vec<f64> {
        let mu = data.mean(&p.fixed_effects());
        data.response().values().iter().zip(&mu).map(|(y, m)| y - m).collect()
    }

    #[test]
    fn scalar_nugget_model() {
        let d = SpatialDomain::lattice(Extent::square(0.0, 1.0), 1, 1).unwrap();
        let y = SpaceTimeField::new(vec![1], 1, vec![2.5]).unwrap();
        let data = ModelData::new(d, y, vec![]).unwrap();
        let p = ParamVector {
            beta0: 1.0,
            beta1: vec![],
            theta0: None,
            theta1: None,
            tau_sq: 0.7,
            rho_ar: None,
        };
        let want = -0.5 * (2.0 * std::f64::consts::PI * 0.7).ln() - 1.5f64.powi(2) / 1.4;
        let got = loglik_exact(&ModelSpec::m0(), &p, &data).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn every_factor_path_matches_dense_oracle() {
        let cases = [
            (ModelSpec::m1(), 0),
            (ModelSpec::m2(), 0),
            (ModelSpec::m3(2), 2),
            (ModelSpec::generic(1, TemporalKind::Iid, true), 1),
            (ModelSpec::generic(2, TemporalKind::Ar1, true), 2),
        ];
        for (i, (model, q)) in cases.into_iter().enumerate() {
            let data = dataset(3, 4, q, i as u64);
            let mut p = full_params(q);
            if !model.varying_slopes {
                p.theta1 = None;
            }
            if model.temporal == TemporalKind::Iid {
                p.rho_ar = None;
            }
            let want = dense_oracle(&brute_covariance(&model, &p, &data), &residual(&p, &data));
            let got = loglik_exact(&model, &p, &data).unwrap();
            assert!(((got - want) / want).abs() < 1e-10, "{:?}: {got} vs {want}", model.kind);
            let wide = TaperSpec::wendland1(1e6);
            let tap = loglik_tapered(&model, &p, &wide, &data).unwrap();
            assert!(((tap - want) / want).abs() < 1e-8, "{:?} tapered: {tap} vs {want}", model.kind);
        }
    }

    #[test]
    fn tapered_matches_dense_tapered_oracle() {
        let data = dataset(5, 2, 1, 42);
        let model = ModelSpec::generic(1, TemporalKind::Ar1, true);
        let p = full_params(1);
        let taper = TaperSpec::wendland1(0.45);
        let mut sigma = brute_covariance(&model, &p, &data);
        let n = data.n_locations();
        for a in 0..sigma.nrows() {
            for b in 0..sigma.ncols() {
                let w = taper.weight(data.domain().distance(a % n, b % n));
                let nug = if a == b { p.tau_sq } else { 0.0 };
                sigma[(a, b)] = (sigma[(a, b)] - nug) * w + nug;
            }
        }
        let want = dense_oracle(&sigma, &residual(&p, &data));
        let got = loglik_tapered(&model, &p, &taper, &data).unwrap();
        assert!(((got - want) / want).abs() < 1e-10);
    }

    #[test]
    fn fully_tapered_is_independent() {
        let data = dataset(4, 3, 1, 5);
        let model = ModelSpec::generic(1, TemporalKind::Iid, true);
        let mut p = full_params(1);
        p.rho_ar = None;
        let taper = TaperSpec::wendland1(0.1);
        let r = residual(&p, &data);
        let x = data.covariates()[0].values();
        let (s0, s1) = (p.theta0.unwrap().variance(), p.theta1.unwrap().variance());
        let want: f64 = r
            .iter()
            .zip(x)
            .map(|(e, xi)| {
                let v = s0 + s1 * xi * xi + p.tau_sq;
                -0.5 * (2.0 * std::f64::consts::PI * v).ln() - e * e / (2.0 * v)
            })
            .sum();
        let got = loglik_tapered(&model, &p, &taper, &data).unwrap();
        assert!(((got - want) / want).abs() < 1e-12);
    }

    #[test]
    fn vanishing_process_gives_iid_likelihood() {
        let data = dataset(3, 2, 0, 8);
        let mut p = full_params(0);
        p.theta1 = None;
        p.rho_ar = None;
        p.theta0 = Some(KernelParams::matern(0.4, 1e-9, 1.0));
        let got = loglik_exact(&ModelSpec::m1(), &p, &data).unwrap();
        let want: f64 = residual(&p, &data)
            .iter()
            .map(|e| -0.5 * (2.0 * std::f64::consts::PI * p.tau_sq).ln() - e * e / (2.0 * p.tau_sq))
            .sum();
        assert!(((got - want) / want).abs() < 1e-10);
    }

    #[test]
    fn gls_profile_is_the_maximum_over_beta() {
        let data = dataset(3, 3, 1, 77);
        let model = ModelSpec::m3(1);
        let mut p = full_params(1);
        p.theta1 = None;
        let lik = Likelihood::new(&model, &data, Backend::Exact).unwrap();
        let prof = lik.profile(&p).unwrap();
        let mut at = p.clone();
        at.set_fixed_effects(&prof.beta);
        assert!((lik.loglik(&at).unwrap() - prof.loglik).abs() < 1e-10);
        for delta in [-0.01, 0.01] {
            let mut q = at.clone();
            q.beta0 += delta;
            assert!(lik.loglik(&q).unwrap() < prof.loglik);
        }
    }
}
