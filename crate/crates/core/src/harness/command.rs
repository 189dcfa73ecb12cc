//! Command dispatch shared by the CLI and the tests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::GridPair;
use crate::inference::{posterior_summary, ModelData, ModelSpec};
use crate::metrics::MetricsReport;
use crate::predict::{add_coarse_field, back_transform, evaluate_at_stations, predict_response, PredictOptions, Scale, Station, TargetSet};
use crate::simulate::{simulate_scenario, SpaceTimeField};

use super::bench::run_bench;
use super::config::RunConfig;
use super::io::{
    ingest_csv, ingest_gridded, read_fit, read_prediction_csv, write_field_csv, write_fit, write_grid_csv, write_map_csv,
    write_parameter_csv, write_prediction_csv, Dataset, GriddedData,
};
use super::study::{config_hash, data_seed, fit_with, run_study, scenario_for_model, study_entries, Fitted};

pub const METRICS_HEADER: [&str; 10] = [
    "label",
    "scale",
    "n_pairs",
    "mse",
    "rmse",
    "is95",
    "coverage",
    "dropped_missing",
    "outside_extent",
    "unmatched_time",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Predict,
    Evaluate,
    Study,
    Bench,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Predict => "predict",
            Command::Evaluate => "evaluate",
            Command::Study => "study",
            Command::Bench => "bench",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "simulate" => Command::Simulate,
            "fit" => Command::Fit,
            "predict" => Command::Predict,
            "evaluate" => Command::Evaluate,
            "study" => Command::Study,
            "bench" => Command::Bench,
            other => return Err(Error::Config(format!("unknown command '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// Artifacts written, manifest last.
    pub written: Vec<PathBuf>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
}

/// Tracks files so a failed command can remove what it wrote.
struct Artifacts {
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn claim(&mut self, path: PathBuf) -> PathBuf {
        self.files.push(path.clone());
        path
    }

    fn remove_all(&self) {
        for f in self.files.iter().rev() {
            let _ = std::fs::remove_file(f);
        }
    }
}

/// Runs a command, writing artifacts and a manifest under `cfg.out`.
///
/// On failure every file the command created is removed; completed study
/// cells stay so that a rerun resumes.
pub fn run_command(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    let clock = Instant::now();
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    let mut artifacts = Artifacts { files: vec![] };
    let result = dispatch(command, cfg, &mut artifacts).and_then(|summary| {
        let manifest = artifacts.claim(cfg.out.join("manifest.txt"));
        write_manifest(&manifest, command, cfg, clock.elapsed().as_secs_f64(), &artifacts.files, &summary)?;
        Ok(summary)
    });
    match result {
        Ok(summary) => Ok(Outcome {
            written: artifacts.files,
            summary,
        }),
        Err(e) => {
            artifacts.remove_all();
            Err(e)
        }
    }
}

fn write_manifest(path: &Path, command: Command, cfg: &RunConfig, seconds: f64, files: &[PathBuf], summary: &[String]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!("command = {}\n", command.as_str()));
    text.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("config_hash = {}\n", config_hash(cfg)));
    text.push_str(&format!("seed = {}\n", cfg.seed()?));
    text.push_str(&format!("level = {}\n", cfg.level));
    text.push_str(&format!("wall_clock_seconds = {seconds}\n"));
    for f in files.iter().filter(|f| f.as_path() != path) {
        text.push_str(&format!("artifact = {}\n", f.display()));
    }
    for s in summary {
        text.push_str(&format!("# {s}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn dispatch(command: Command, cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<Vec<String>> {
    match command {
        Command::Simulate => simulate(cfg, artifacts),
        Command::Fit => fit(cfg, artifacts),
        Command::Predict => predict(cfg, artifacts),
        Command::Evaluate => evaluate(cfg, artifacts),
        Command::Study => {
            artifacts.claim(cfg.out.join("table2.csv"));
            artifacts.claim(cfg.out.join("table3.csv"));
            let outcome = run_study(cfg)?;
            let mut lines = vec![format!("cells = {} (reused {})", outcome.cells, outcome.reused)];
            for r in &outcome.rows {
                lines.push(format!(
                    "{} {} {}: test mse {} is95 {}, {} min",
                    r.model.as_str(),
                    r.scenario,
                    r.resolution,
                    r.test.mse,
                    r.test.interval_score,
                    r.minutes
                ));
            }
            Ok(lines)
        }
        Command::Bench => {
            let path = artifacts.claim(cfg.out.join("bench.csv"));
            let rows = run_bench(cfg, &path)?;
            Ok(rows
                .iter()
                .map(|r| format!("n={} {}: {} s", r.n, r.backend.label(), r.median_seconds))
                .collect())
        }
    }
}

fn simulate(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<Vec<String>> {
    let master = cfg.seed()?;
    let model = cfg.model_kinds()?[0];
    let mut lines = vec![];
    for entry in study_entries(cfg)? {
        let scenario = scenario_for_model(&entry.config, model);
        for rep in 0..cfg.replications.unwrap_or(1) {
            let sim = simulate_scenario(&scenario, data_seed(master, &entry.family, rep))?;
            let dir = cfg.out.join(&scenario.name).join(format!("rep_{rep:03}"));
            std::fs::create_dir_all(&dir)?;
            write_grid_csv(&artifacts.claim(dir.join("grid_coarse.csv")), &sim.pair.coarse)?;
            write_grid_csv(&artifacts.claim(dir.join("grid_fine.csv")), &sim.pair.fine)?;
            write_map_csv(&artifacts.claim(dir.join("map.csv")), &sim.pair.map)?;
            write_field_csv(&artifacts.claim(dir.join("coarse.csv")), &sim.pair.coarse, &sim.c_coarse, &sim.covariates)?;
            write_field_csv(&artifacts.claim(dir.join("fine.csv")), &sim.pair.fine, &sim.c_fine, &[])?;
            write_field_csv(&artifacts.claim(dir.join("response.csv")), &sim.pair.fine, &sim.response, &[])?;
            lines.push(format!("{} replication {rep}: {}", scenario.name, dir.display()));
        }
    }
    Ok(lines)
}

/// Coarse and fine files with the response `C_fine - C_coarse(s(w))` over training periods.
struct FileData {
    pair: GridPair,
    coarse: GriddedData,
    train: ModelData,
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    path.as_ref().ok_or_else(|| Error::Config(format!("`{key}` input is required")))
}

fn load_files(cfg: &RunConfig) -> Result<FileData> {
    let (coarse, _) = ingest_gridded(required(&cfg.coarse, "coarse")?, None)?;
    let (fine, _) = ingest_gridded(required(&cfg.fine, "fine")?, cfg.train_end)?;
    let pair = GridPair::from_domains(coarse.domain.clone(), fine.domain.clone());
    let train_pos: Vec<usize> = fine
        .field
        .times()
        .iter()
        .enumerate()
        .filter(|(_, &t)| cfg.train_end.is_none_or(|end| t <= end))
        .map(|(k, _)| k)
        .collect();
    if train_pos.is_empty() {
        return Err(Error::Config("no training periods at or before train_end".into()));
    }
    let train_times: Vec<i64> = train_pos.iter().map(|&k| fine.field.times()[k]).collect();
    let coarse_pos = positions(&coarse.field, &train_times)?;
    let n = fine.domain.len();
    let mut values = Vec::with_capacity(train_pos.len() * n);
    for (&kf, &kc) in train_pos.iter().zip(&coarse_pos) {
        for w in 0..n {
            values.push(fine.field.get(kf, w) - coarse.field.get(kc, pair.map.fine_to_coarse[w]));
        }
    }
    let response = SpaceTimeField::new(train_times, n, values)?;
    let covariates: Vec<SpaceTimeField> = coarse.covariates.iter().map(|x| x.select_times(&coarse_pos)).collect();
    let train = ModelData::from_pair(&pair, response, &covariates)?;
    Ok(FileData { pair, coarse, train })
}

fn positions(field: &SpaceTimeField, times: &[i64]) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            field
                .position(t)
                .ok_or_else(|| Error::Dimension(format!("coarse file has no period {t}")))
        })
        .collect()
}

fn file_model(cfg: &RunConfig, data: &FileData) -> Result<ModelSpec> {
    let spec = ModelSpec::named(cfg.model_kinds()?[0], data.coarse.covariates.len());
    spec.validate()?;
    Ok(spec)
}

fn fit(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<Vec<String>> {
    let data = load_files(cfg)?;
    let spec = file_model(cfg, &data)?;
    let train = data.train.leading_covariates(spec.q)?;
    let fitted = fit_with(cfg.method, &spec, &train, cfg.backend()?, cfg, cfg.seed()?)?;
    let (result, rows) = match &fitted {
        Fitted::Ml(f) => (
            f.clone(),
            f.estimates.named_values().into_iter().map(|(n, v)| (n, v, None)).collect::<Vec<_>>(),
        ),
        Fitted::Mcmc(d) => (
            d.to_fit_result(&train)?,
            posterior_summary(d, cfg.level)?
                .into_iter()
                .map(|s| (s.name, s.mean, Some((s.lower, s.upper))))
                .collect(),
        ),
    };
    write_fit(&artifacts.claim(cfg.out.join("fit.toml")), &result)?;
    write_parameter_csv(&artifacts.claim(cfg.out.join("parameters.csv")), &rows)?;
    let mut lines = vec![format!(
        "{} {} fit: loglik {} in {} s",
        result.model.kind.as_str(),
        result.method.as_str(),
        result.loglik,
        result.elapsed_seconds
    )];
    lines.extend(rows.iter().map(|(n, v, _)| format!("{n} = {v}")));
    Ok(lines)
}

fn predict(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<Vec<String>> {
    let data = load_files(cfg)?;
    let spec = file_model(cfg, &data)?;
    let train = data.train.leading_covariates(spec.q)?;
    let fitted = match &cfg.fit {
        Some(path) => {
            let f = read_fit(path)?;
            if f.model != spec {
                return Err(Error::Config(format!(
                    "fit file is for model {}, config selects {}",
                    f.model.kind.as_str(),
                    spec.kind.as_str()
                )));
            }
            Fitted::Ml(f)
        }
        None => fit_with(cfg.method, &spec, &train, cfg.backend()?, cfg, cfg.seed()?)?,
    };
    let last = *train.times().last().expect("nonempty training data");
    let target_times: Vec<i64> = data.coarse.field.times().iter().copied().filter(|&t| t > last).collect();
    if target_times.is_empty() {
        return Err(Error::Config(format!("the coarse file has no periods after {last} to predict")));
    }
    let pos = positions(&data.coarse.field, &target_times)?;
    let covariates = data
        .coarse
        .covariates
        .iter()
        .take(spec.q)
        .map(|x| x.select_times(&pos).on_fine(&data.pair.map))
        .collect();
    let targets = TargetSet::all_locations(data.pair.fine.len(), target_times.clone(), covariates);
    let options = PredictOptions {
        level: cfg.level,
        mean_uncertainty: cfg.mean_uncertainty,
        posterior_draws: cfg.posterior_draws,
    };
    let pred = predict_response(fitted.predictor(), &train, &targets, &options)?;
    let mut pred = add_coarse_field(&pred, &data.coarse.field, &data.pair.map)?;
    if Scale::parse(&cfg.scale)? == Scale::Physical {
        pred = back_transform(&pred)?;
    }
    write_prediction_csv(&artifacts.claim(cfg.out.join("prediction.csv")), &pred)?;
    Ok(vec![format!(
        "predicted {} locations x {} periods ({}..={}) on the {} scale",
        data.pair.fine.len(),
        target_times.len(),
        target_times[0],
        target_times[target_times.len() - 1],
        pred.scale.as_str()
    )])
}

fn to_stations(dataset: Dataset) -> Vec<Station> {
    match dataset {
        Dataset::Stations(s) => s,
        Dataset::Gridded(g) => {
            let mut out = Vec::with_capacity(g.field.values().len());
            for (k, &t) in g.field.times().iter().enumerate() {
                for (w, &p) in g.domain.locations().iter().enumerate() {
                    let v = g.field.get(k, w);
                    out.push(Station {
                        time: t,
                        point: p,
                        observed: v.is_finite().then_some(v),
                    });
                }
            }
            out
        }
    }
}

fn evaluate(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<Vec<String>> {
    let (domain, pred) = read_prediction_csv(required(&cfg.prediction, "prediction")?)?;
    let (truth_path, label) = match (&cfg.stations, &cfg.truth) {
        (Some(p), _) => (p, "stations"),
        (None, Some(p)) => (p, "grid"),
        (None, None) => return Err(Error::Config("evaluate needs `stations` or `truth`".into())),
    };
    // Missing truth values are counted, not fatal.
    let (dataset, _) = ingest_csv(truth_path, Some(i64::MIN))?;
    let mut stations = to_stations(dataset);
    let truth_scale = Scale::parse(&cfg.truth_scale)?;
    for s in &mut stations {
        s.observed = s.observed.map(|v| match (truth_scale, pred.scale) {
            (Scale::Model, Scale::Physical) => v.exp(),
            (Scale::Physical, Scale::Model) => v.ln(),
            _ => v,
        });
    }
    let eval = evaluate_at_stations(&pred, &domain, &stations)?;
    if eval.pairs.is_empty() {
        return Err(Error::Dimension("no station matched a predicted period".into()));
    }
    let col = |f: fn(&crate::predict::StationPair) -> f64| eval.pairs.iter().map(f).collect::<Vec<f64>>();
    let report = MetricsReport::score(
        label,
        &col(|p| p.observed),
        &col(|p| p.mean),
        &col(|p| p.lower),
        &col(|p| p.upper),
        cfg.level,
    )?;
    let path = artifacts.claim(cfg.out.join("metrics.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(METRICS_HEADER)?;
    w.write_record([
        report.label.clone(),
        pred.scale.as_str().to_string(),
        report.n_pairs.to_string(),
        report.mse.to_string(),
        report.rmse.to_string(),
        report.interval_score.to_string(),
        report.coverage.to_string(),
        eval.dropped_missing.to_string(),
        eval.outside_extent.to_string(),
        eval.unmatched_time.to_string(),
    ])?;
    w.flush()?;
    let mut lines = vec![format!(
        "{} pairs: mse {} is {} coverage {}",
        report.n_pairs, report.mse, report.interval_score, report.coverage
    )];
    if eval.dropped_missing + eval.outside_extent + eval.unmatched_time > 0 {
        lines.push(format!(
            "warning: {} stations without observations, {} outside the grid, {} at unpredicted periods",
            eval.dropped_missing, eval.outside_extent, eval.unmatched_time
        ));
    }
    Ok(lines)
}
