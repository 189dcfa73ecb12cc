//! Run configuration: a TOML file with CLI overrides applied on top.
//!
//! ```toml
//! seed = 42
//! out = "runs/sim2"
//! presets = ["sim2-res1"]
//! models = ["m1", "m2"]
//! backend = "tapered"
//! taper_range = 3.0
//! replications = 5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariance::TaperSpec;
use crate::error::{Error, Result};
use crate::inference::{Backend, ChainConfig, ModelKind, OptimizerConfig, PriorSpec};
use crate::predict::Scale;
use crate::simulate::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ml,
    Mcmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; required so that every run is reproducible.
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Preset families or scenarios (`sim2-res1`, `simA-res2-exp`).
    #[serde(default)]
    pub presets: Vec<String>,
    /// Explicit scenario used instead of presets by `simulate`, `study` and `bench`.
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default = "default_models")]
    pub models: Vec<String>,
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default)]
    pub taper_range: Option<f64>,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Overrides the preset replication counts.
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Last training period for file-based fits; later periods are test data.
    #[serde(default)]
    pub train_end: Option<i64>,
    /// Prior calibration; defaults scale the range median to the domain.
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub mean_uncertainty: bool,
    /// Scale of `predict` output: `physical` (exp back-transform) or `model`.
    #[serde(default = "default_scale")]
    pub scale: String,
    /// Scale of the values in `truth`/`stations` files.
    #[serde(default = "default_truth_scale")]
    pub truth_scale: String,
    #[serde(default = "default_posterior_draws")]
    pub posterior_draws: usize,
    /// Inputs for `fit`, `predict` and `evaluate`.
    #[serde(default)]
    pub coarse: Option<PathBuf>,
    #[serde(default)]
    pub fine: Option<PathBuf>,
    #[serde(default)]
    pub fit: Option<PathBuf>,
    #[serde(default)]
    pub prediction: Option<PathBuf>,
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub stations: Option<PathBuf>,
    /// `bench`: fine grid sides and taper ranges in units of the fine spacing.
    #[serde(default = "default_bench_sides")]
    pub bench_sides: Vec<usize>,
    #[serde(default = "default_bench_tapers")]
    pub bench_tapers: Vec<f64>,
    #[serde(default = "default_bench_trials")]
    pub bench_trials: usize,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_models() -> Vec<String> {
    vec!["m1".into()]
}
fn default_backend() -> String {
    "exact".into()
}
fn default_method() -> Method {
    Method::Ml
}
fn default_level() -> f64 {
    0.95
}
fn default_scale() -> String {
    "physical".into()
}
fn default_truth_scale() -> String {
    "model".into()
}
fn default_posterior_draws() -> usize {
    500
}
fn default_bench_sides() -> Vec<usize> {
    vec![20, 30, 40]
}
fn default_bench_tapers() -> Vec<f64> {
    vec![1.5, 2.5, 4.0]
}
fn default_bench_trials() -> usize {
    3
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, path)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (set `seed` or pass --seed)".into()))
    }

    pub fn model_kinds(&self) -> Result<Vec<ModelKind>> {
        if self.models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        self.models.iter().map(|m| ModelKind::parse(m)).collect()
    }

    pub fn backend(&self) -> Result<Backend> {
        match self.backend.as_str() {
            "exact" => Ok(Backend::Exact),
            "tapered" => {
                let range = self
                    .taper_range
                    .ok_or_else(|| Error::Config("tapered backend needs taper_range".into()))?;
                let spec = TaperSpec::wendland1(range);
                spec.validate()?;
                Ok(Backend::Tapered(spec))
            }
            other => Err(Error::Config(format!("unknown backend '{other}' (expected exact or tapered)"))),
        }
    }

    /// Checks the invariants every command relies on.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.backend()?;
        self.model_kinds()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.replications == Some(0) {
            return Err(Error::Config("replications must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        Scale::parse(&self.scale)?;
        Scale::parse(&self.truth_scale)?;
        if let Some(p) = &self.prior {
            p.validate()?;
        }
        if let Some(s) = &self.scenario {
            s.validate()?;
        }
        for path in [&self.coarse, &self.fine, &self.fit, &self.prediction, &self.truth, &self.stations]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                return Err(Error::Config(format!("input {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    /// The prior for a domain of the given diameter.
    pub fn prior_for(&self, diameter: f64) -> PriorSpec {
        self.prior.unwrap_or(PriorSpec {
            range_median: 0.5 * diameter,
            ..PriorSpec::default()
        })
    }

    /// Stable text used to key resumable study cells.
    pub fn canonical(&self) -> String {
        let mut copy = self.clone();
        // Output location and parallelism do not change study results.
        copy.out = PathBuf::new();
        copy.workers = None;
        toml::to_string(&copy).expect("config serializes")
    }
}
