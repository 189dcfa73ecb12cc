//! Synthetic coarse and fine fields, the downscaling response and train/test splits.
//!
//! Every random component draws from its own ChaCha8 stream of the run seed, so
//! the coarse noise `eps` seen by the regional simulation is the same
//! realization as in the global one and cancels in the response.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::{KernelParams, TemporalStructure};
use crate::error::{Error, Result};
use crate::grid::{build_grids, CoarseFineMap, GridPair, GridSpec, SpatialDomain};
use crate::linalg::DenseFactor;

const STREAM_EPSILON: u64 = 1;
const STREAM_INTERCEPT: u64 = 2;
const STREAM_NUGGET: u64 = 3;
const STREAM_COVARIATES: u64 = 4;
const STREAM_SLOPES: u64 = 16;
const STREAM_GP: u64 = 64;

/// Values over (time, location), stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    times: Vec<i64>,
    n_locations: usize,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn new(times: Vec<i64>, n_locations: usize, values: Vec<f64>) -> Result<Self> {
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Domain("field times must be strictly increasing".into()));
        }
        if values.len() != times.len() * n_locations {
            return Err(Error::Dimension(format!(
                "{} values for {} times x {} locations",
                values.len(),
                times.len(),
                n_locations
            )));
        }
        Ok(SpaceTimeField {
            times,
            n_locations,
            values,
        })
    }

    pub fn constant(times: Vec<i64>, n_locations: usize, value: f64) -> Self {
        let values = vec![value; times.len() * n_locations];
        SpaceTimeField {
            times,
            n_locations,
            values,
        }
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    /// Time-major values: entry `k * n_locations + i` is time `times[k]`, location `i`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.n_locations + i]
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_locations..(k + 1) * self.n_locations]
    }

    pub fn position(&self, time: i64) -> Option<usize> {
        self.times.binary_search(&time).ok()
    }

    /// Sub-field at the given time positions (ascending).
    pub fn select_times(&self, positions: &[usize]) -> SpaceTimeField {
        let mut values = Vec::with_capacity(positions.len() * self.n_locations);
        for &k in positions {
            values.extend_from_slice(self.slice(k));
        }
        SpaceTimeField {
            times: positions.iter().map(|&k| self.times[k]).collect(),
            n_locations: self.n_locations,
            values,
        }
    }

    /// Pulls a coarse field back onto the fine domain through `fine_to_coarse`.
    pub fn on_fine(&self, map: &CoarseFineMap) -> SpaceTimeField {
        let n = map.fine_to_coarse.len();
        let mut values = Vec::with_capacity(self.n_times() * n);
        for k in 0..self.n_times() {
            let row = self.slice(k);
            values.extend(map.fine_to_coarse.iter().map(|&s| row[s]));
        }
        SpaceTimeField {
            times: self.times.clone(),
            n_locations: n,
            values,
        }
    }

    fn same_shape(&self, other: &SpaceTimeField, what: &str) -> Result<()> {
        if self.times != other.times || self.n_locations != other.n_locations {
            return Err(Error::Dimension(format!(
                "{what}: fields have shapes {}x{} and {}x{}",
                self.n_times(),
                self.n_locations,
                other.n_times(),
                other.n_locations
            )));
        }
        Ok(())
    }
}

/// Parameters of the coarse (global) model `C_t(s) = alpha + beta' X_t(s) + eps_t(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    pub alpha: f64,
    #[serde(default)]
    pub beta: Vec<f64>,
    pub zeta_sq: f64,
}

impl GlobalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta_sq > 0.0 && self.zeta_sq.is_finite()) {
            return Err(Error::Domain(format!("zeta_sq must be positive, got {}", self.zeta_sq)));
        }
        Ok(())
    }
}

/// Parameters of the regional adjustment: varying intercept, varying slopes and nugget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalParams {
    pub beta0: f64,
    #[serde(default)]
    pub beta1: Vec<f64>,
    pub theta0: KernelParams,
    /// Kernel shared by the slope processes; `None` keeps the slopes fixed at `beta1`.
    #[serde(default)]
    pub theta1: Option<KernelParams>,
    pub tau_sq: f64,
    pub temporal: TemporalStructure,
}

impl RegionalParams {
    pub fn validate(&self) -> Result<()> {
        self.theta0.validate()?;
        if let Some(t) = &self.theta1 {
            t.validate()?;
        }
        self.temporal.validate()?;
        if !(self.tau_sq > 0.0 && self.tau_sq.is_finite()) {
            return Err(Error::Domain(format!("tau_sq must be positive, got {}", self.tau_sq)));
        }
        Ok(())
    }
}

/// A complete simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub grid: GridSpec,
    pub global: GlobalParams,
    pub regional: RegionalParams,
    pub periods: usize,
    pub train_fraction: f64,
    pub replications: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.global.validate()?;
        self.regional.validate()?;
        if self.global.beta.len() != self.regional.beta1.len() {
            return Err(Error::Config(format!(
                "global model has {} covariates but the regional model has {}",
                self.global.beta.len(),
                self.regional.beta1.len()
            )));
        }
        train_periods(self.periods, self.train_fraction)?;
        Ok(())
    }

    pub fn covariates(&self) -> usize {
        self.global.beta.len()
    }
}

/// Latent pieces of one regional draw, kept for oracle checks.
#[derive(Debug, Clone)]
pub struct RegionalComponents {
    /// `alpha^r_t(w)`, including its mean `beta0`.
    pub intercept: SpaceTimeField,
    /// `beta^r_{t,j}(w)`, including the means `beta1`.
    pub slopes: Vec<SpaceTimeField>,
    pub nugget: SpaceTimeField,
    /// Coarse noise `eps_t(s)` shared with the global field.
    pub epsilon: SpaceTimeField,
}

#[derive(Debug, Clone)]
pub struct RegionalDraw {
    pub c_fine: SpaceTimeField,
    pub components: RegionalComponents,
}

/// One simulated dataset: grids, covariates, both fields and the response.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub pair: GridPair,
    /// Covariates on the coarse domain.
    pub covariates: Vec<SpaceTimeField>,
    pub c_coarse: SpaceTimeField,
    pub c_fine: SpaceTimeField,
    pub response: SpaceTimeField,
    pub components: RegionalComponents,
}

/// Deterministic child seed from a master seed and integer coordinates.
pub fn derive_seed(master: u64, coordinates: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for c in coordinates {
        h.update(c.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn periods_vec(periods: usize) -> Result<Vec<i64>> {
    if periods == 0 {
        return Err(Error::Domain("need at least one period".into()));
    }
    Ok((1..=periods as i64).collect())
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn gp_factor(domain: &SpatialDomain, params: &KernelParams) -> Result<DenseFactor> {
    params.validate()?;
    let m = crate::covariance::dense_kernel_matrix(domain, params);
    DenseFactor::new_with_jitter(m, params.variance())
}

/// Zero-mean draw given the spatial factor; AR(1) fields are built recursively in time.
fn draw_gp(
    factor: &DenseFactor,
    temporal: &TemporalStructure,
    times: Vec<i64>,
    rng: &mut ChaCha8Rng,
) -> SpaceTimeField {
    let n = factor.dim();
    let mut values = Vec::with_capacity(n * times.len());
    let mut prev: Option<Vec<f64>> = None;
    for _ in 0..times.len() {
        let innovation = factor.mul_lower(&normals(rng, n));
        let next = match (temporal, &prev) {
            (TemporalStructure::Ar1 { rho }, Some(p)) => {
                let s = (1.0 - rho * rho).sqrt();
                p.iter().zip(&innovation).map(|(a, e)| rho * a + s * e).collect()
            }
            _ => innovation,
        };
        values.extend_from_slice(&next);
        prev = Some(next);
    }
    SpaceTimeField {
        times,
        n_locations: n,
        values,
    }
}

/// Zero-mean Gaussian field with covariance `R_T ⊗ K(params)` over times `1..=periods`.
pub fn sample_gp(
    domain: &SpatialDomain,
    params: &KernelParams,
    temporal: &TemporalStructure,
    periods: usize,
    seed: u64,
) -> Result<SpaceTimeField> {
    temporal.validate()?;
    let times = periods_vec(periods)?;
    let factor = gp_factor(domain, params)?;
    Ok(draw_gp(&factor, temporal, times, &mut stream(seed, STREAM_GP)))
}

/// `q` i.i.d. standard normal covariate fields.
pub fn standard_normal_covariates(
    n_locations: usize,
    q: usize,
    periods: usize,
    seed: u64,
) -> Result<Vec<SpaceTimeField>> {
    let times = periods_vec(periods)?;
    let mut rng = stream(seed, STREAM_COVARIATES);
    Ok((0..q)
        .map(|_| SpaceTimeField {
            values: normals(&mut rng, n_locations * times.len()),
            times: times.clone(),
            n_locations,
        })
        .collect())
}

fn check_covariates(covariates: &[SpaceTimeField], q: usize, n: usize, times: &[i64]) -> Result<()> {
    if covariates.len() != q {
        return Err(Error::Dimension(format!(
            "{} covariate fields for {q} coefficients",
            covariates.len()
        )));
    }
    for x in covariates {
        if x.n_locations != n || x.times != times {
            return Err(Error::Dimension(format!(
                "covariate field is {}x{}, expected {}x{n}",
                x.n_times(),
                x.n_locations,
                times.len()
            )));
        }
    }
    Ok(())
}

fn epsilon(n: usize, zeta_sq: f64, times: &[i64], seed: u64) -> SpaceTimeField {
    let mut rng = stream(seed, STREAM_EPSILON);
    let sd = zeta_sq.sqrt();
    SpaceTimeField {
        values: normals(&mut rng, n * times.len()).into_iter().map(|z| sd * z).collect(),
        times: times.to_vec(),
        n_locations: n,
    }
}

/// Coarse field `C_t(s) = alpha + beta' X_t(s) + eps_t(s)`.
pub fn simulate_global(
    coarse: &SpatialDomain,
    gp: &GlobalParams,
    covariates: &[SpaceTimeField],
    periods: usize,
    seed: u64,
) -> Result<SpaceTimeField> {
    gp.validate()?;
    let times = periods_vec(periods)?;
    let n = coarse.len();
    check_covariates(covariates, gp.beta.len(), n, &times)?;
    let mut c = epsilon(n, gp.zeta_sq, &times, seed);
    for (idx, v) in c.values.iter_mut().enumerate() {
        *v += gp.alpha;
        for (b, x) in gp.beta.iter().zip(covariates) {
            *v += b * x.values[idx];
        }
    }
    Ok(c)
}

/// Fine field `C_t(w) = [alpha + alpha^r] + [beta + beta^r]' X_t(s) + eps_t(s) + gamma_t(w)`, `s = s(w)`.
pub fn simulate_regional(
    pair: &GridPair,
    gp: &GlobalParams,
    rp: &RegionalParams,
    covariates: &[SpaceTimeField],
    periods: usize,
    seed: u64,
) -> Result<RegionalDraw> {
    gp.validate()?;
    rp.validate()?;
    if rp.beta1.len() != gp.beta.len() {
        return Err(Error::Dimension(format!(
            "{} regional slope means for {} global slopes",
            rp.beta1.len(),
            gp.beta.len()
        )));
    }
    let times = periods_vec(periods)?;
    let nc = pair.coarse.len();
    let nf = pair.fine.len();
    check_covariates(covariates, gp.beta.len(), nc, &times)?;

    let eps = epsilon(nc, gp.zeta_sq, &times, seed);
    let f0 = gp_factor(&pair.fine, &rp.theta0)?;
    let mut intercept = draw_gp(&f0, &rp.temporal, times.clone(), &mut stream(seed, STREAM_INTERCEPT));
    intercept.values.iter_mut().for_each(|v| *v += rp.beta0);

    let f1 = rp.theta1.as_ref().map(|t| gp_factor(&pair.fine, t)).transpose()?;
    let mut slopes = Vec::with_capacity(rp.beta1.len());
    for (j, &mean) in rp.beta1.iter().enumerate() {
        let mut s = match &f1 {
            Some(f) => draw_gp(f, &rp.temporal, times.clone(), &mut stream(seed, STREAM_SLOPES + j as u64)),
            None => SpaceTimeField::constant(times.clone(), nf, 0.0),
        };
        s.values.iter_mut().for_each(|v| *v += mean);
        slopes.push(s);
    }

    let mut rng = stream(seed, STREAM_NUGGET);
    let tau = rp.tau_sq.sqrt();
    let nugget = SpaceTimeField {
        values: normals(&mut rng, nf * times.len()).into_iter().map(|z| tau * z).collect(),
        times: times.clone(),
        n_locations: nf,
    };

    let map = &pair.map.fine_to_coarse;
    let mut values = Vec::with_capacity(nf * times.len());
    for k in 0..times.len() {
        for (w, &s) in map.iter().enumerate() {
            let cs = k * nc + s;
            let fw = k * nf + w;
            let mut v = gp.alpha + intercept.values[fw] + eps.values[cs] + nugget.values[fw];
            for j in 0..gp.beta.len() {
                v += (gp.beta[j] + slopes[j].values[fw]) * covariates[j].values[cs];
            }
            values.push(v);
        }
    }
    Ok(RegionalDraw {
        c_fine: SpaceTimeField {
            times,
            n_locations: nf,
            values,
        },
        components: RegionalComponents {
            intercept,
            slopes,
            nugget,
            epsilon: eps,
        },
    })
}

/// Response `Y_t(w) = C_t(w) - C_t(s(w))`.
pub fn make_response(
    c_fine: &SpaceTimeField,
    c_coarse: &SpaceTimeField,
    map: &CoarseFineMap,
) -> Result<SpaceTimeField> {
    if c_fine.times != c_coarse.times {
        return Err(Error::Dimension(format!(
            "fine field has {} times, coarse field {}",
            c_fine.n_times(),
            c_coarse.n_times()
        )));
    }
    if c_fine.n_locations != map.fine_to_coarse.len() || c_coarse.n_locations != map.coarse_to_fine.len() {
        return Err(Error::Dimension("fields do not match the coarse/fine map".into()));
    }
    let lifted = c_coarse.on_fine(map);
    c_fine.same_shape(&lifted, "make_response")?;
    let values = c_fine.values.iter().zip(&lifted.values).map(|(f, c)| f - c).collect();
    Ok(SpaceTimeField {
        times: c_fine.times.clone(),
        n_locations: c_fine.n_locations,
        values,
    })
}

/// Number of leading training periods: `floor(periods * fraction)`.
///
/// A 1e-9 allowance absorbs representation error, so 5/6 of 12 gives 10.
pub fn train_periods(periods: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {fraction}")));
    }
    let k = (periods as f64 * fraction + 1e-9).floor() as usize;
    if k < 1 || k >= periods {
        return Err(Error::Config(format!(
            "split of {periods} periods at fraction {fraction} leaves an empty side"
        )));
    }
    Ok(k)
}

/// Leading `floor(T * fraction)` periods for training, the rest for testing.
pub fn split_train_test(field: &SpaceTimeField, fraction: f64) -> Result<(SpaceTimeField, SpaceTimeField)> {
    let k = train_periods(field.n_times(), fraction)?;
    let train: Vec<usize> = (0..k).collect();
    let test: Vec<usize> = (k..field.n_times()).collect();
    Ok((field.select_times(&train), field.select_times(&test)))
}

/// Simulate one replication of a scenario with the given data seed.
pub fn simulate_scenario(config: &ScenarioConfig, seed: u64) -> Result<SimulatedData> {
    config.validate()?;
    let pair = build_grids(&config.grid)?;
    let covariates =
        standard_normal_covariates(pair.coarse.len(), config.covariates(), config.periods, seed)?;
    let c_coarse = simulate_global(&pair.coarse, &config.global, &covariates, config.periods, seed)?;
    let draw = simulate_regional(
        &pair,
        &config.global,
        &config.regional,
        &covariates,
        config.periods,
        seed,
    )?;
    let response = make_response(&draw.c_fine, &c_coarse, &pair.map)?;
    Ok(SimulatedData {
        pair,
        covariates,
        c_coarse,
        c_fine: draw.c_fine,
        response,
        components: draw.components,
    })
}
