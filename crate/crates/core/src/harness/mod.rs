//! Scenario loading, Monte Carlo orchestration, experiment presets and
//! result export.

mod config;
mod pipeline;
mod run;
mod studies;

pub use config::{ingest_ap_csv, load_scenario, parse_scenario, ScenarioInputs, SiteTable};
pub use pipeline::{
    allocate, build_realization, draw_incumbents, evaluate_arms, scheme_rewards, Allocator, Arm, ArmMetrics,
    Realization,
};
pub use run::{
    aggregate, case_study_base, deflection_scenario, deflection_snr_grid, monte_carlo, run, sha256_hex,
    small_sensing_scenario, write_rows, AggregateRow, ExperimentPreset, FileDigest, PresetName, RealizationRow,
    RunManifest, RunOptions, Sweep, SweepVariable, DEFLECTION_NOISE_POWER, DEFLECTION_STEPS,
};
pub use studies::{
    case_study, case_study_arms, case_study_scenario, scenario_deflection, scheduler_gap_study, CaseStudyRun,
    GapRow, GapStudyOptions, OperationMode, RankDeflection, CASE_STUDY_BANDS,
};
