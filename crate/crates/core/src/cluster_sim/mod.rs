//! Deterministic simulated AI cluster with fault injection and the
//! supply-side check suite exposed to the agent as tools.

mod checks;
mod cluster;
mod fault;
pub mod script;
mod topology;

pub use checks::{
    list_checks, CheckDescriptor, CheckResult, CheckScope, DeviceReading, Dimension, CAPABILITIES,
    TELEMETRY_TOOL, tool_names,
};
pub use cluster::{
    Cluster, ClusterConfig, DeviceState, GpuState, IterationRecord, JobLog, JobOutcome, JobSpec,
    ServerState, TelemetrySample, TimeWindow,
};
pub use fault::{load_fault_schedule, FaultId, FaultKind, FaultSpec};
pub use topology::{ClusterTopology, GpuSpec, ServerSpec};

use crate::perf_model::PerfError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid topology at {field}: {reason}")]
    InvalidTopology { field: String, reason: String },
    #[error("{what} {id} not found")]
    NotFound { what: &'static str, id: String },
    #[error("unknown capability {name}; registry: {}", registry.join(", "))]
    UnknownCapability { name: String, registry: Vec<String> },
    #[error("invalid fault: {0}")]
    InvalidFault(String),
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("invalid telemetry window: {0}")]
    InvalidWindow(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed document: {0}")]
    Parse(String),
    #[error(transparent)]
    Perf(#[from] PerfError),
}
