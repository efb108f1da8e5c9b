//! Deterministic discrete-event simulation of a two-zone web deployment
//! with a standby zone held in one of four disaster-recovery postures.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autoscaler;
pub mod balancer;
pub mod dbcluster;
pub mod drctl;
pub mod engine;
pub mod faults;
pub mod metrics;
pub mod replay;
pub mod scenario;
pub mod sim;
pub mod storage;
pub mod sweep;
pub mod topology;

pub use drctl::{DrMode, DrParams, RecoveryRecord};
pub use engine::{SimTime, TraceRecord};
pub use metrics::{AvailabilitySummary, RunReport};
pub use scenario::{load_scenario, parse_scenario, Diagnostic, ScenarioConfig, ScenarioError};
pub use sim::{run_scenario, RunOptions, RunOutput, SimError};
pub use sweep::{sweep_modes, SweepResult};
pub use topology::ZoneId;
