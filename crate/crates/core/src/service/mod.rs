//! HTTP service, persistence, batch simulation and condition analysis.

pub mod http;
pub mod report;
pub mod simulation;
pub mod stats;
pub mod store;

pub use http::{router, ApiError, ApiSession, Service};
pub use report::{analyze, compare, Analysis, ArmSummary, ConditionComparison};
pub use simulation::{
    default_pool, efficacy_trial, run_simulation, run_simulation_sessions, simulate_session, EfficacyTrial,
    SimulatedSession, SimulationError, SimulationSpec,
};
pub use stats::{mann_whitney_u, median, MannWhitney};
pub use store::{read_log, write_log, EventStore, StoreError};
