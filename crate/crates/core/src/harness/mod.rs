//! Experiment orchestration: configuration, synthetic data, the experiments
//! themselves and their tabular output.

mod config;
mod experiments;
pub mod output;
mod runner;
mod truth;

pub use config::{
    ArmConfig, ExperimentConfig, FilterKind, ModelConfig, PriorConfig, RunConfig, SweepConfig,
    TvConfig,
};
pub use experiments::{
    nmse_arms, run_dimension_sweep, run_nmse_experiment, run_simulation, run_tv_decay_experiment,
    NmseResult, SweepResult, SweepRow, TrialResult, TvDecayResult,
};
pub use runner::{run_filter, FilterRunner, FilterSpec, FilterTrace, StepOutput, TrialSetup};
pub use truth::{
    generate_ground_truth, generate_observation_matrix, ground_truth_from, GroundTruth,
};
