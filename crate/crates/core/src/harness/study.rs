//! Scenario x model x replication study runner.
//!
//! Each cell simulates one dataset, fits one model on the leading training
//! periods and scores physical-scale predictions on the test periods and, by
//! leaving one training period out at a time, on the training periods. Cells
//! are cached under `cells/<key>/` and reused when the configuration matches.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::covariance::TemporalStructure;
use crate::error::{Error, Result};
use crate::inference::{
    fit_ml, mcmc_fit, Backend, ChainConfig, FitResult, ModelData, ModelKind, ModelSpec, OptimizerConfig,
    PosteriorDraws, TemporalKind,
};
use crate::metrics::{timed, MetricsReport};
use crate::predict::{add_coarse_field, back_transform, predict_response, PredictOptions, PredictionResult, Predictor, TargetSet};
use crate::simulate::{derive_seed, simulate_scenario, train_periods, ScenarioConfig, SimulatedData};

use super::catalog::{catalog_entries, CatalogEntry};
use super::config::{Method, RunConfig};

pub const TABLE2_HEADER: [&str; 8] = ["model", "scenario", "resolution", "split", "mse", "rmse", "is95", "scale"];
pub const TABLE3_HEADER: [&str; 4] = ["model", "scenario", "resolution", "minutes"];
const CELL_HEADER: [&str; 8] = ["split", "mse", "rmse", "is95", "coverage", "n_pairs", "fit_seconds", "predict_seconds"];

/// AR(1) coefficient of the intercept process when simulating data for AR(1) models.
pub const AR1_RHO: f64 = 0.8;

/// A fitted model: a point estimate, plus posterior draws for MCMC fits.
pub enum Fitted {
    Ml(FitResult),
    Mcmc(Box<PosteriorDraws>),
}

impl Fitted {
    pub fn predictor(&self) -> Predictor<'_> {
        match self {
            Fitted::Ml(f) => Predictor::Plugin(f),
            Fitted::Mcmc(d) => Predictor::Posterior(d),
        }
    }
}

/// Fits `model` to `data` with the configured method.
pub fn fit_with(
    method: Method,
    model: &ModelSpec,
    data: &ModelData,
    backend: Backend,
    cfg: &RunConfig,
    seed: u64,
) -> Result<Fitted> {
    let optimizer = OptimizerConfig {
        seed: derive_seed(seed, &[1]),
        ..cfg.optimizer.clone()
    };
    match method {
        Method::Ml => Ok(Fitted::Ml(fit_ml(model, data, backend, &optimizer)?)),
        Method::Mcmc => {
            let chain = ChainConfig {
                seed: derive_seed(seed, &[2]),
                ..cfg.chain.clone()
            };
            let prior = cfg.prior_for(data.domain().diameter());
            Ok(Fitted::Mcmc(Box::new(mcmc_fit(model, data, &prior, backend, &chain)?)))
        }
    }
}

/// Stable 64-bit code of a label, for seed derivation.
pub fn label_code(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Scenario as simulated for `model`: AR(1) models get an AR(1) intercept process.
pub fn scenario_for_model(config: &ScenarioConfig, model: ModelKind) -> ScenarioConfig {
    let mut c = config.clone();
    if ModelSpec::named(model, c.covariates()).temporal == TemporalKind::Ar1 {
        c.regional.temporal = TemporalStructure::Ar1 { rho: AR1_RHO };
    }
    c
}

/// The model fitted to a scenario: named structure with the scenario's kernel family.
pub fn model_for_scenario(config: &ScenarioConfig, model: ModelKind) -> ModelSpec {
    let k = &config.regional.theta0;
    ModelSpec::named(model, config.covariates()).with_kernel(k.family, k.smoothness)
}

/// Data seed for a replication; variance scenarios and models of one family share it.
pub fn data_seed(master: u64, family: &str, replication: usize) -> u64 {
    derive_seed(master, &[label_code(family), replication as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub train: MetricsReport,
    pub test: MetricsReport,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
}

/// Moves model-scale predictions of `Y` to the physical scale of `C`.
fn physical(pred: &PredictionResult, sim: &SimulatedData) -> Result<PredictionResult> {
    back_transform(&add_coarse_field(pred, &sim.c_coarse, &sim.pair.map)?)
}

fn score(label: &str, pred: &PredictionResult, sim: &SimulatedData, level: f64) -> Result<MetricsReport> {
    let mut observed = Vec::with_capacity(pred.len());
    for i in 0..pred.len() {
        let k = sim
            .c_fine
            .position(pred.times[i])
            .ok_or_else(|| Error::Dimension(format!("no fine field at time {}", pred.times[i])))?;
        observed.push(sim.c_fine.get(k, pred.locations[i]).exp());
    }
    MetricsReport::score(label, &observed, &pred.mean, &pred.lower, &pred.upper, level)
}

fn targets(full: &ModelData, positions: &[usize]) -> TargetSet {
    let times = positions.iter().map(|&k| full.times()[k]).collect();
    let covariates = full.covariates().iter().map(|x| x.select_times(positions)).collect();
    TargetSet::all_locations(full.n_locations(), times, covariates)
}

fn concat(parts: Vec<PredictionResult>) -> PredictionResult {
    let mut it = parts.into_iter();
    let mut out = it.next().expect("at least one part");
    for p in it {
        out.times.extend(p.times);
        out.locations.extend(p.locations);
        out.coords.extend(p.coords);
        out.mean.extend(p.mean);
        out.lower.extend(p.lower);
        out.upper.extend(p.upper);
        out.variance.extend(p.variance);
    }
    out
}

/// Runs one study cell.
pub fn run_cell(cfg: &RunConfig, entry: &CatalogEntry, model: ModelKind, replication: usize) -> Result<CellResult> {
    let master = cfg.seed()?;
    let scenario = scenario_for_model(&entry.config, model);
    let seed = data_seed(master, &entry.family, replication);
    let sim = simulate_scenario(&scenario, seed)?;
    let k = train_periods(scenario.periods, scenario.train_fraction)?;
    let spec = model_for_scenario(&scenario, model);
    let full = ModelData::from_pair(&sim.pair, sim.response.clone(), &sim.covariates)?.leading_covariates(spec.q)?;
    let train_pos: Vec<usize> = (0..k).collect();
    let test_pos: Vec<usize> = (k..scenario.periods).collect();
    let train = full.select_times(&train_pos)?;
    let fit_seed = derive_seed(seed, &[label_code(&entry.scenario), label_code(model.as_str())]);

    let (fitted, fit_seconds) = timed("fit", || fit_with(cfg.method, &spec, &train, cfg.backend()?, cfg, fit_seed));
    let fitted = fitted?;
    let options = PredictOptions {
        level: cfg.level,
        mean_uncertainty: cfg.mean_uncertainty,
        posterior_draws: cfg.posterior_draws,
    };
    let (test_pred, predict_seconds) =
        timed("predict", || predict_response(fitted.predictor(), &train, &targets(&full, &test_pos), &options));
    let test = score("test", &physical(&test_pred?, &sim)?, &sim, cfg.level)?;

    // Leave one training period out, keeping the fitted parameters.
    let mut parts = Vec::with_capacity(k);
    for held in 0..k {
        let rest: Vec<usize> = (0..k).filter(|&j| j != held).collect();
        let reduced = full.select_times(&rest)?;
        let pred = predict_response(fitted.predictor(), &reduced, &targets(&full, &[held]), &options)?;
        parts.push(physical(&pred, &sim)?);
    }
    let train_report = score("train", &concat(parts), &sim, cfg.level)?;
    Ok(CellResult {
        train: train_report,
        test,
        fit_seconds,
        predict_seconds,
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(cfg: &RunConfig) -> String {
    hex(&Sha256::digest(cfg.canonical().as_bytes()))
}

fn cell_key(hash: &str, entry: &CatalogEntry, model: ModelKind, replication: usize) -> String {
    let text = format!("{hash}|{}|{}|{}|{replication}", entry.family, entry.scenario, model.as_str());
    hex(&Sha256::digest(text.as_bytes())[..12])
}

fn write_cell(dir: &Path, r: &CellResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join("result.csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(CELL_HEADER)?;
        for m in [&r.train, &r.test] {
            w.write_record([
                m.label.clone(),
                m.mse.to_string(),
                m.rmse.to_string(),
                m.interval_score.to_string(),
                m.coverage.to_string(),
                m.n_pairs.to_string(),
                r.fit_seconds.to_string(),
                r.predict_seconds.to_string(),
            ])?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, dir.join("result.csv"))?;
    Ok(())
}

fn read_cell(path: &Path, level: f64) -> Result<CellResult> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut reports = vec![];
    let mut seconds = (0.0, 0.0);
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("bad field {i}"),
                })
        };
        seconds = (num(6)?, num(7)?);
        reports.push(MetricsReport {
            label: record[0].to_string(),
            mse: num(1)?,
            rmse: num(2)?,
            interval_score: num(3)?,
            coverage: num(4)?,
            level,
            n_pairs: num(5)? as usize,
            fit_seconds: seconds.0,
            predict_seconds: seconds.1,
        });
    }
    if reports.len() != 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "cell result needs a train and a test row".into(),
        });
    }
    let test = reports.pop().expect("two rows");
    let train = reports.pop().expect("two rows");
    Ok(CellResult {
        train,
        test,
        fit_seconds: seconds.0,
        predict_seconds: seconds.1,
    })
}

/// Study entries: the explicit scenario if given, otherwise the expanded presets.
pub fn study_entries(cfg: &RunConfig) -> Result<Vec<CatalogEntry>> {
    if let Some(s) = &cfg.scenario {
        return Ok(vec![CatalogEntry {
            family: s.name.clone(),
            resolution: s.name.clone(),
            scenario: s.name.clone(),
            config: s.clone(),
        }]);
    }
    if cfg.presets.is_empty() {
        return Err(Error::Config("study needs presets or an explicit scenario".into()));
    }
    let mut out = vec![];
    for p in &cfg.presets {
        out.extend(catalog_entries(p)?);
    }
    Ok(out)
}

/// Aggregated rows of one (scenario, model) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub model: ModelKind,
    pub scenario: String,
    pub resolution: String,
    pub family: String,
    pub train: MetricsReport,
    pub test: MetricsReport,
    /// Mean fit plus test-prediction time per replication.
    pub minutes: f64,
    pub replications: usize,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub rows: Vec<StudyRow>,
    pub cells: usize,
    pub reused: usize,
    pub config_hash: String,
    pub written: Vec<PathBuf>,
}

fn mean_report(label: &str, reports: &[&MetricsReport]) -> MetricsReport {
    let n = reports.len() as f64;
    let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    MetricsReport {
        label: label.to_string(),
        mse: avg(&|r| r.mse),
        rmse: avg(&|r| r.rmse),
        interval_score: avg(&|r| r.interval_score),
        coverage: avg(&|r| r.coverage),
        level: reports[0].level,
        n_pairs: reports.iter().map(|r| r.n_pairs).sum(),
        fit_seconds: avg(&|r| r.fit_seconds),
        predict_seconds: avg(&|r| r.predict_seconds),
    }
}

/// Runs (or resumes) the study and writes `table2.csv`, `table3.csv` and `cells/` under `cfg.out`.
pub fn run_study(cfg: &RunConfig) -> Result<StudyOutcome> {
    cfg.validate()?;
    let entries = study_entries(cfg)?;
    let models = cfg.model_kinds()?;
    let hash = config_hash(cfg);
    let cells_dir = cfg.out.join("cells");

    let mut cells = vec![];
    for (e, entry) in entries.iter().enumerate() {
        let reps = cfg.replications.unwrap_or(entry.config.replications);
        for &model in &models {
            for rep in 0..reps {
                cells.push((e, model, rep));
            }
        }
    }

    let workers = cfg.workers.unwrap_or(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    let results: Vec<(CellResult, bool)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(e, model, rep)| {
                let entry = &entries[e];
                let dir = cells_dir.join(cell_key(&hash, entry, model, rep));
                let file = dir.join("result.csv");
                if file.exists() {
                    if let Ok(r) = read_cell(&file, cfg.level) {
                        return Ok((r, true));
                    }
                }
                let r = run_cell(cfg, entry, model, rep)?;
                write_cell(&dir, &r)?;
                Ok((r, false))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut grouped: HashMap<(usize, ModelKind), Vec<&CellResult>> = HashMap::new();
    for ((e, model, _), (r, _)) in cells.iter().zip(&results) {
        grouped.entry((*e, *model)).or_default().push(r);
    }
    let mut rows = vec![];
    for (e, entry) in entries.iter().enumerate() {
        for &model in &models {
            let Some(rs) = grouped.get(&(e, model)) else { continue };
            let train: Vec<&MetricsReport> = rs.iter().map(|r| &r.train).collect();
            let test: Vec<&MetricsReport> = rs.iter().map(|r| &r.test).collect();
            let minutes = rs.iter().map(|r| r.fit_seconds + r.predict_seconds).sum::<f64>() / rs.len() as f64 / 60.0;
            rows.push(StudyRow {
                model,
                scenario: entry.scenario.clone(),
                resolution: entry.resolution.clone(),
                family: entry.family.clone(),
                train: mean_report("train", &train),
                test: mean_report("test", &test),
                minutes,
                replications: rs.len(),
            });
        }
    }

    let table2 = cfg.out.join("table2.csv");
    let table3 = cfg.out.join("table3.csv");
    write_table2(&table2, &rows)?;
    write_table3(&table3, &rows)?;
    Ok(StudyOutcome {
        rows,
        cells: cells.len(),
        reused: results.iter().filter(|(_, reused)| *reused).count(),
        config_hash: hash,
        written: vec![table2, table3],
    })
}

pub fn write_table2(path: &Path, rows: &[StudyRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TABLE2_HEADER)?;
    for r in rows {
        for m in [&r.train, &r.test] {
            w.write_record([
                r.model.as_str().to_string(),
                r.scenario.clone(),
                r.resolution.clone(),
                m.label.clone(),
                m.mse.to_string(),
                m.rmse.to_string(),
                m.interval_score.to_string(),
                "physical".to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_table3(path: &Path, rows: &[StudyRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TABLE3_HEADER)?;
    for r in rows {
        w.write_record([
            r.model.as_str().to_string(),
            r.scenario.clone(),
            r.resolution.clone(),
            r.minutes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
