//! Randomized response survey primitives: devices that pick the statement a
//! respondent sees, estimators for the sensitive proportion, append-only
//! yes/no storage and a Monte Carlo harness that checks the estimators.

pub mod device;
pub mod estimators;
pub mod simulator;
pub mod store;

pub use device::{
    make_generic, make_unrelated, make_warner, validate_device, DeviceError, DeviceKind,
    DeviceSpec, OutcomeDraw, Probability, RandomSource, Statement, StatementRole, ValidatedDevice,
};
pub use estimators::{
    estimate_from_store, lambda_hat, simmons_known_estimate, simmons_two_sample_estimate,
    wald_interval, warner_estimate, Counts, Design, Estimate, EstimateError, Model,
};
pub use simulator::{
    run_replications, run_survey_sim, simulate_respondent, AssignmentMode, SimError,
    SimulationConfig, SimulationReport,
};
pub use store::{Answer, ResponseRecord, ResponseStore, StoreError, StoreSchema};
