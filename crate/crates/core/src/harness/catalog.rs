//! Named simulation presets.
//!
//! `sim2-*` are the three-variance-level studies on `[0, 20]^2`, `simA-*` the
//! single-slope studies on `[0, 1]^2`. Kernel sd is the square root of the
//! published variance parameter, and published ranges are practical ranges,
//! converted with `phi / sqrt(8 nu)` (exponential: `phi / 2`).

use crate::covariance::{KernelParams, TemporalStructure};
use crate::error::{Error, Result};
use crate::grid::{Extent, GridSpec};
use crate::simulate::{GlobalParams, RegionalParams, ScenarioConfig};

/// A preset family expanded into its variance/kernel scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    /// Family name, e.g. `sim2-res1`.
    pub family: String,
    /// Resolution label, e.g. `res1`.
    pub resolution: String,
    /// Scenario label, e.g. `s2` or `matern`.
    pub scenario: String,
    pub config: ScenarioConfig,
}

const SIM2_RESOLUTIONS: [(&str, usize, usize); 4] = [("res1", 20, 10), ("res2", 40, 20), ("res3", 60, 10), ("res3b", 60, 30)];
const SIM2_VARIANCES: [(&str, f64); 3] = [("s1", 0.003), ("s2", 0.0003), ("s3", 0.00003)];
const SIMA_RESOLUTIONS: [(&str, usize, usize); 3] = [("res1", 25, 10), ("res2", 40, 20), ("res3", 55, 25)];
const SIMA_KERNELS: [&str; 2] = ["matern", "exp"];

/// Every accepted family name.
pub fn preset_families() -> Vec<String> {
    let mut out: Vec<String> = SIM2_RESOLUTIONS.iter().map(|(r, ..)| format!("sim2-{r}")).collect();
    out.extend(SIMA_RESOLUTIONS.iter().map(|(r, ..)| format!("simA-{r}")));
    out
}

/// Every accepted scenario name (family plus scenario suffix).
pub fn preset_names() -> Vec<String> {
    let mut out = vec![];
    for (r, ..) in SIM2_RESOLUTIONS {
        out.extend(SIM2_VARIANCES.iter().map(|(s, _)| format!("sim2-{r}-{s}")));
    }
    for (r, ..) in SIMA_RESOLUTIONS {
        out.extend(SIMA_KERNELS.iter().map(|k| format!("simA-{r}-{k}")));
    }
    out
}

fn unknown(name: &str) -> Error {
    Error::Config(format!(
        "unknown preset '{name}'; families: {}; scenarios: {}",
        preset_families().join(", "),
        preset_names().join(", ")
    ))
}

fn sim2(resolution: &str, fine: usize, coarse: usize, scenario: &str, variance: f64) -> CatalogEntry {
    let nu = 1.0;
    CatalogEntry {
        family: format!("sim2-{resolution}"),
        resolution: resolution.into(),
        scenario: scenario.into(),
        config: ScenarioConfig {
            name: format!("sim2-{resolution}-{scenario}"),
            grid: GridSpec::new(Extent::square(0.0, 20.0), fine, coarse),
            global: GlobalParams {
                alpha: 5.707,
                beta: vec![],
                zeta_sq: 0.001,
            },
            regional: RegionalParams {
                beta0: 5.706,
                beta1: vec![],
                theta0: KernelParams::matern(5.0 / (8.0f64 * nu).sqrt(), variance.sqrt(), nu),
                theta1: None,
                tau_sq: 1.0 / 700_000.0,
                temporal: TemporalStructure::Iid,
            },
            periods: 12,
            train_fraction: 5.0 / 6.0,
            replications: 30,
            seed: 0,
        },
    }
}

fn sim_a(resolution: &str, fine: usize, coarse: usize, kernel: &str) -> CatalogEntry {
    let sd = 0.001f64.sqrt();
    let theta0 = if kernel == "exp" {
        KernelParams::exponential(0.1 / 2.0, sd)
    } else {
        KernelParams::matern(0.1 / (8.0f64 * 0.8).sqrt(), sd, 0.8)
    };
    CatalogEntry {
        family: format!("simA-{resolution}"),
        resolution: resolution.into(),
        scenario: kernel.into(),
        config: ScenarioConfig {
            name: format!("simA-{resolution}-{kernel}"),
            grid: GridSpec::new(Extent::square(0.0, 1.0), fine, coarse),
            global: GlobalParams {
                alpha: 5.6,
                beta: vec![0.015],
                zeta_sq: 2.0,
            },
            regional: RegionalParams {
                beta0: -0.05,
                beta1: vec![-0.005],
                theta0,
                theta1: None,
                tau_sq: 1.0,
                temporal: TemporalStructure::Iid,
            },
            periods: 12,
            train_fraction: 5.0 / 6.0,
            replications: 10,
            seed: 0,
        },
    }
}

/// Expand a family (`sim2-res1`) or a single scenario (`sim2-res1-s2`) into entries.
pub fn catalog_entries(name: &str) -> Result<Vec<CatalogEntry>> {
    let (study, rest) = name.split_once('-').ok_or_else(|| unknown(name))?;
    let (res, suffix) = match rest.split_once('-') {
        Some((r, s)) => (r, Some(s)),
        None => (rest, None),
    };
    let entries: Vec<CatalogEntry> = match study {
        "sim2" => {
            let &(r, fine, coarse) = SIM2_RESOLUTIONS.iter().find(|(r, ..)| *r == res).ok_or_else(|| unknown(name))?;
            SIM2_VARIANCES.iter().map(|&(s, v)| sim2(r, fine, coarse, s, v)).collect()
        }
        "simA" => {
            let &(r, fine, coarse) = SIMA_RESOLUTIONS.iter().find(|(r, ..)| *r == res).ok_or_else(|| unknown(name))?;
            SIMA_KERNELS.iter().map(|k| sim_a(r, fine, coarse, k)).collect()
        }
        _ => return Err(unknown(name)),
    };
    match suffix {
        None => Ok(entries),
        Some(s) => {
            let hit: Vec<CatalogEntry> = entries.into_iter().filter(|e| e.scenario == s).collect();
            if hit.is_empty() {
                Err(unknown(name))
            } else {
                Ok(hit)
            }
        }
    }
}

/// A single scenario by name; a bare family name selects its first scenario.
pub fn scenario_catalog(name: &str) -> Result<ScenarioConfig> {
    Ok(catalog_entries(name)?.remove(0).config)
}
