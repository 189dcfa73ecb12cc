//! CSV reading and writing for fields, grids, predictions and fits.
//!
//! Gridded data use `time,x,y,value[,covariate_1..covariate_q]` with a header.
//! Time is an integer period or an ISO date (`YYYY-MM` or `YYYY-MM-DD`), which
//! maps to the monthly index `12 * year + month - 1`.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{CoarseFineMap, SpatialDomain};
use crate::inference::FitResult;
use crate::predict::{PredictionResult, Scale, Station};
use crate::simulate::SpaceTimeField;

pub const FIELD_HEADER: [&str; 4] = ["time", "x", "y", "value"];
pub const GRID_HEADER: [&str; 3] = ["index", "x", "y"];
pub const MAP_HEADER: [&str; 2] = ["fine_index", "coarse_index"];
pub const PREDICTION_HEADER: [&str; 7] = ["time", "x", "y", "mean", "lower", "upper", "scale"];

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_grid_csv(path: &Path, domain: &SpatialDomain) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(GRID_HEADER)?;
    for (i, p) in domain.locations().iter().enumerate() {
        w.write_record([i.to_string(), p[0].to_string(), p[1].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_map_csv(path: &Path, map: &CoarseFineMap) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(MAP_HEADER)?;
    for (f, c) in map.fine_to_coarse.iter().enumerate() {
        w.write_record([f.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a field (and optional covariates on the same domain) in the gridded schema.
pub fn write_field_csv(path: &Path, domain: &SpatialDomain, field: &SpaceTimeField, covariates: &[SpaceTimeField]) -> Result<()> {
    if field.n_locations() != domain.len() {
        return Err(Error::Dimension("field does not match its domain".into()));
    }
    let mut w = create(path)?;
    let mut header: Vec<String> = FIELD_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend((1..=covariates.len()).map(|j| format!("covariate_{j}")));
    w.write_record(&header)?;
    for (k, &t) in field.times().iter().enumerate() {
        for (i, p) in domain.locations().iter().enumerate() {
            let mut row = vec![t.to_string(), p[0].to_string(), p[1].to_string(), field.get(k, i).to_string()];
            row.extend(covariates.iter().map(|x| x.get(k, i).to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_prediction_csv(path: &Path, pred: &PredictionResult) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(PREDICTION_HEADER)?;
    for i in 0..pred.len() {
        w.write_record([
            pred.times[i].to_string(),
            pred.coords[i][0].to_string(),
            pred.coords[i][1].to_string(),
            pred.mean[i].to_string(),
            pred.lower[i].to_string(),
            pred.upper[i].to_string(),
            pred.scale.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses an integer period or an ISO date into a period index.
pub fn parse_time(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(t) = s.parse::<i64>() {
        return Some(t);
    }
    let date = s.split(['T', ' ']).next()?;
    let mut parts = date.split('-');
    let year: i64 = parts.next()?.parse().ok()?;
    let month: i64 = parts.next()?.parse().ok()?;
    if let Some(day) = parts.next() {
        let day: u32 = day.parse().ok()?;
        if !(1..=31).contains(&day) {
            return None;
        }
    }
    if parts.next().is_some() || !(1..=12).contains(&month) {
        return None;
    }
    Some(12 * year + month - 1)
}

fn parse_value(s: &str) -> Option<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Some(None);
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GriddedData {
    pub domain: SpatialDomain,
    /// Missing test-period values are NaN.
    pub field: SpaceTimeField,
    pub covariates: Vec<SpaceTimeField>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Gridded(GriddedData),
    /// Coordinates that do not form a complete regular lattice.
    Stations(Vec<Station>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub path: PathBuf,
    pub rows: usize,
    pub times: usize,
    /// `[nx, ny]` of the inferred lattice.
    pub shape: Option<[usize; 2]>,
    pub covariates: usize,
    /// Missing values after the training period (kept as NaN).
    pub missing_test_values: usize,
}

struct Row {
    line: u64,
    time: i64,
    x: f64,
    y: f64,
    value: Option<f64>,
    covariates: Vec<f64>,
}

fn regular_axis(v: &[f64]) -> bool {
    if v.len() < 3 {
        return true;
    }
    let h = (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64;
    v.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-6 * h)
}

fn read_rows(path: &Path) -> Result<(Vec<Row>, usize)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 4 || names[..4] != FIELD_HEADER {
        return Err(parse_err(path, 1, format!("header must start with time,x,y,value, found {}", names.join(","))));
    }
    let q = names.len() - 4;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != q + 4 {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", q + 4, record.len())));
        }
        let time = parse_time(&record[0]).ok_or_else(|| parse_err(path, line, format!("bad time '{}'", &record[0])))?;
        let coord = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line, format!("bad coordinate '{}'", &record[i])))
        };
        let (x, y) = (coord(1)?, coord(2)?);
        let value = parse_value(&record[3]).ok_or_else(|| parse_err(path, line, format!("bad value '{}'", &record[3])))?;
        let mut covariates = Vec::with_capacity(q);
        for j in 0..q {
            match parse_value(&record[4 + j]) {
                Some(Some(v)) => covariates.push(v),
                _ => return Err(parse_err(path, line, format!("bad or missing covariate '{}'", &record[4 + j]))),
            }
        }
        rows.push(Row {
            line,
            time,
            x,
            y,
            value,
            covariates,
        });
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    Ok((rows, q))
}

/// Loads a gridded CSV. Complete regular lattices become fields; anything else
/// is returned as a station list. Values after `train_end` may be missing on a
/// lattice; earlier ones may not (all are training when `train_end` is absent).
pub fn ingest_csv(path: &Path, train_end: Option<i64>) -> Result<(Dataset, IngestReport)> {
    let (rows, q) = read_rows(path)?;
    let mut seen: HashMap<(i64, u64, u64), u64> = HashMap::with_capacity(rows.len());
    for r in &rows {
        if let Some(first) = seen.insert((r.time, r.x.to_bits(), r.y.to_bits()), r.line) {
            return Err(parse_err(
                path,
                r.line,
                format!("duplicate row for time {} at ({}, {}), first seen on line {first}", r.time, r.x, r.y),
            ));
        }
    }
    let times: Vec<i64> = rows.iter().map(|r| r.time).collect::<BTreeSet<_>>().into_iter().collect();
    let sorted_axis = |f: &dyn Fn(&Row) -> f64| -> Vec<f64> {
        let mut v: Vec<f64> = rows.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let xs = sorted_axis(&|r| r.x);
    let ys = sorted_axis(&|r| r.y);
    let points: BTreeSet<(u64, u64)> = rows.iter().map(|r| (r.x.to_bits(), r.y.to_bits())).collect();
    let mut report = IngestReport {
        path: path.to_path_buf(),
        rows: rows.len(),
        times: times.len(),
        shape: None,
        covariates: q,
        missing_test_values: 0,
    };

    let lattice = points.len() == xs.len() * ys.len() && regular_axis(&xs) && regular_axis(&ys);
    if !lattice {
        let stations = rows
            .iter()
            .map(|r| Station {
                time: r.time,
                point: [r.x, r.y],
                observed: r.value,
            })
            .collect();
        return Ok((Dataset::Stations(stations), report));
    }

    let domain = SpatialDomain::from_axes(&xs, &ys)?;
    let nx = xs.len();
    let n = domain.len();
    let x_index: HashMap<u64, usize> = xs.iter().enumerate().map(|(i, v)| (v.to_bits(), i)).collect();
    let y_index: HashMap<u64, usize> = ys.iter().enumerate().map(|(i, v)| (v.to_bits(), i)).collect();
    let t_index: HashMap<i64, usize> = times.iter().enumerate().map(|(k, &t)| (t, k)).collect();
    let mut values = vec![f64::NAN; times.len() * n];
    let mut filled = vec![false; times.len() * n];
    let mut covs = vec![vec![f64::NAN; times.len() * n]; q];
    let is_training = |t: i64| train_end.is_none_or(|end| t <= end);
    for r in &rows {
        let cell = t_index[&r.time] * n + y_index[&r.y.to_bits()] * nx + x_index[&r.x.to_bits()];
        filled[cell] = true;
        match r.value {
            Some(v) => values[cell] = v,
            None if is_training(r.time) => {
                return Err(parse_err(path, r.line, format!("missing training value at time {}", r.time)));
            }
            None => report.missing_test_values += 1,
        }
        for (j, v) in r.covariates.iter().enumerate() {
            covs[j][cell] = *v;
        }
    }
    if let Some(cell) = filled.iter().position(|f| !f) {
        let absent = filled.iter().filter(|f| !**f).count();
        let t = times[cell / n];
        let p = domain.location(cell % n);
        if is_training(t) || q > 0 {
            return Err(Error::Domain(format!(
                "{}: ragged lattice, {absent} rows missing (first: time {t} at ({}, {}))",
                path.display(),
                p[0],
                p[1]
            )));
        }
        report.missing_test_values += absent;
    }
    report.shape = Some(domain.shape());
    let field = SpaceTimeField::new(times.clone(), n, values)?;
    let covariates = covs
        .into_iter()
        .map(|v| SpaceTimeField::new(times.clone(), n, v))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        Dataset::Gridded(GriddedData {
            domain,
            field,
            covariates,
        }),
        report,
    ))
}

/// Like `ingest_csv` but requires a lattice.
pub fn ingest_gridded(path: &Path, train_end: Option<i64>) -> Result<(GriddedData, IngestReport)> {
    match ingest_csv(path, train_end)? {
        (Dataset::Gridded(g), r) => Ok((g, r)),
        (Dataset::Stations(_), _) => Err(Error::Config(format!(
            "{}: coordinates do not form a complete regular lattice",
            path.display()
        ))),
    }
}

/// Reads a prediction CSV back, with the lattice its coordinates span.
pub fn read_prediction_csv(path: &Path) -> Result<(SpatialDomain, PredictionResult)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != PREDICTION_HEADER {
        return Err(parse_err(path, 1, format!("expected header {}", PREDICTION_HEADER.join(","))));
    }
    let mut raw = vec![];
    let mut scale = None;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|_| parse_err(path, line, format!("bad number '{}'", &record[i])))
        };
        let t = parse_time(&record[0]).ok_or_else(|| parse_err(path, line, "bad time"))?;
        let s = Scale::parse(&record[6]).map_err(|e| parse_err(path, line, e.to_string()))?;
        if *scale.get_or_insert(s) != s {
            return Err(parse_err(path, line, "mixed scales"));
        }
        raw.push((t, [num(1)?, num(2)?], num(3)?, num(4)?, num(5)?));
    }
    if raw.is_empty() {
        return Err(parse_err(path, 1, "no prediction rows"));
    }
    let axis = |k: usize| {
        let mut v: Vec<f64> = raw.iter().map(|r| r.1[k]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (xs, ys) = (axis(0), axis(1));
    let domain = SpatialDomain::from_axes(&xs, &ys)?;
    let x_index: HashMap<u64, usize> = xs.iter().enumerate().map(|(i, v)| (v.to_bits(), i)).collect();
    let y_index: HashMap<u64, usize> = ys.iter().enumerate().map(|(i, v)| (v.to_bits(), i)).collect();
    let mut pred = PredictionResult {
        times: vec![],
        locations: vec![],
        coords: vec![],
        mean: vec![],
        lower: vec![],
        upper: vec![],
        variance: vec![],
        level: f64::NAN,
        scale: scale.unwrap_or(Scale::Model),
    };
    for (t, p, m, l, u) in raw {
        pred.times.push(t);
        pred.locations.push(y_index[&p[1].to_bits()] * xs.len() + x_index[&p[0].to_bits()]);
        pred.coords.push(p);
        pred.mean.push(m);
        pred.lower.push(l);
        pred.upper.push(u);
        pred.variance.push(f64::NAN);
    }
    Ok((domain, pred))
}

pub fn write_fit(path: &Path, fit: &FitResult) -> Result<()> {
    let text = toml::to_string(fit).map_err(|e| Error::Config(format!("cannot serialize fit: {e}")))?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_fit(path: &Path) -> Result<FitResult> {
    let text = std::fs::read_to_string(path)?;
    let fit: FitResult = toml::from_str(&text).map_err(|e| parse_err(path, 0, e.to_string()))?;
    fit.estimates.validate_for(&fit.model)?;
    Ok(fit)
}

/// `name,estimate,lower,upper` rows.
pub fn write_parameter_csv(path: &Path, rows: &[(String, f64, Option<(f64, f64)>)]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["name", "estimate", "lower", "upper"])?;
    for (name, est, interval) in rows {
        let (l, u) = interval.map_or((String::new(), String::new()), |(l, u)| (l.to_string(), u.to_string()));
        w.write_record([name.clone(), est.to_string(), l, u])?;
    }
    w.flush()?;
    Ok(())
}
