//! Simulation scenarios, replication engine, real-data workflow and output
//! emission (long-format CSV, SVG charts, run manifest).

mod output;
mod real_data;
mod run;
mod scenario;

pub use output::{config_hash, emit_outputs, sweep_svg, write_replications_csv, write_results_csv, Manifest};
pub use real_data::{encode_labels, load_labelled, run_real_data, standardize, RealDataConfig, RealDataOutcome};
pub use run::{
    mean_se, run_procedures, run_replication, run_scenario, Cell, DataSource, ProcedureRecord, ProcedureRun,
    ReplicationRecord, SweepResult, SweepSummary,
};
pub use scenario::{
    builtin_scenario, builtin_scenarios, separated_truth, Procedure, ScenarioConfig, Sweep, SweepParameter, SweepPoint,
    Truth, ALPHA_SWEEP,
};
