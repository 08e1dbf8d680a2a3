//! Simulation mechanisms, the exact enumeration oracle and the Monte Carlo
//! harness.

mod dgm;
mod oracle;
mod scenario;

pub use dgm::{
    dgm_marginals, draw_dataset, draw_sampled, exhaustive_dataset, DgmSpec, Generator, LinearTerm,
    Link, Marginals, Node, DGM_PRESETS,
};
pub use oracle::{oracle_truth, OracleTruth};
pub use scenario::{
    run_scenario, scenario_presets, summarize_runs, write_records_csv, BootstrapSettings,
    EstimatorSummary, Misspecification, RepRecord, SampleBasis, ScenarioRun, ScenarioSpec,
    SimulationReport, SCHEMA_VERSION,
};
