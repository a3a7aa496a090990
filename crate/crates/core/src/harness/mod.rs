//! Scenario loading, experiment execution, metrics and report emission.

mod metrics;
mod report;
mod scenario;
mod world;

use rayon::prelude::*;

pub use metrics::{
    completion_by_n, hist_percentile, load_from_hist, normalized_load, FlowRow, LoadStats,
    MetricsReport, Summary,
};
pub use report::{emit, to_csv_string, to_json_string, write_csv, Format, CSV_COLUMNS};
pub use scenario::{MqttConfig, RunConfig, Scenario, BASE_PORT};
pub use world::{FlowAccount, RunResult, ScriptedFlow, World};

use crate::error::{Result, SimError};
use crate::workload::Protocol;

/// One replication with the scenario's own seed.
pub fn run_once(scenario: &Scenario) -> Result<RunResult> {
    World::new(scenario)?.run()
}

/// All replications, seeds `seed, seed + 1, ...`, run in parallel.
pub fn run_experiment(scenario: &Scenario) -> Result<Vec<MetricsReport>> {
    scenario.validate()?;
    (0..scenario.replications as u64)
        .into_par_iter()
        .map(|i| {
            let mut sc = scenario.clone();
            sc.seed = scenario.seed.wrapping_add(i);
            run_once(&sc).map(|r| r.report)
        })
        .collect()
}

/// Runs `scenario` once per NSTART value; every point and replication in parallel.
pub fn sweep(scenario: &Scenario, nstarts: &[usize]) -> Result<Vec<MetricsReport>> {
    if scenario.protocol != Protocol::Coap {
        return Err(SimError::config("protocol", "an NSTART sweep needs protocol = \"coap\""));
    }
    let points: Vec<Scenario> = nstarts
        .iter()
        .map(|&n| {
            let mut sc = scenario.clone();
            sc.coap.nstart = n;
            sc.name = format!("{}-nstart-{n}", scenario.name);
            sc.validate().map(|_| sc)
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<Scenario> = points
        .iter()
        .flat_map(|p| {
            (0..p.replications as u64).map(move |i| {
                let mut sc = p.clone();
                sc.seed = p.seed.wrapping_add(i);
                sc
            })
        })
        .collect();
    jobs.par_iter().map(|sc| run_once(sc).map(|r| r.report)).collect()
}
