//! Shared fixtures for the benchmarks.

use vcdown::harness::scenario_catalog;
use vcdown::{simulate_scenario, GridSpec, ModelData, ModelSpec, ParamVector, Result};

/// One period of `sim2-res1-s1` data on a `side x side` fine grid, with the true M1 parameters.
pub fn fixture(side: usize, periods: usize, seed: u64) -> Result<(ModelSpec, ParamVector, ModelData)> {
    let mut scenario = scenario_catalog("sim2-res1-s1")?;
    scenario.grid = GridSpec::new(scenario.grid.extent, side, scenario.grid.coarse_side.min(side));
    scenario.periods = periods.max(2);
    let sim = simulate_scenario(&scenario, seed)?;
    let keep: Vec<usize> = (0..periods).collect();
    let data = ModelData::from_pair(&sim.pair, sim.response.select_times(&keep), &[])?;
    let params = ParamVector {
        beta0: scenario.regional.beta0 - scenario.global.alpha,
        beta1: vec![],
        theta0: Some(scenario.regional.theta0),
        theta1: None,
        tau_sq: scenario.regional.tau_sq,
        rho_ar: None,
    };
    Ok((ModelSpec::m1(), params, data))
}
