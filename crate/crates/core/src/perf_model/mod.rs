//! Resource-composition performance model.
//!
//! A task is described by how much of each equivalent resource it needs
//! ([`TaskDemand`]) and a device by how fast it supplies each one
//! ([`ResourceProfile`]). Compute and memory traffic cannot overlap; I/O
//! overlaps with both. Composite workloads are expressed as proportions of
//! resource-distinct subtasks ([`WorkloadMix`]).

mod calibrate;
mod estimate;
mod predict;
mod resource;

pub use calibrate::calibrate_mix_for_ratio;
pub use estimate::{detect_slowdown, estimate_rate, RateEstimate, Verdict, DEFAULT_SLOWDOWN_THRESHOLD};
pub use predict::{
    predict_mix, predict_multi, predict_single, ridge_point, roofline_curve, roofline_table,
    MixEntry, PerfPrediction, WorkloadMix,
};
pub use resource::{Overlap, ParallelismRule, ResourceKind, ResourceProfile, TaskDemand};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerfError {
    #[error("invalid supply rate {field} = {value}: must be positive and finite")]
    InvalidProfile { field: &'static str, value: f64 },
    #[error("invalid demand {field} = {value}: must be non-negative and finite")]
    InvalidDemand { field: &'static str, value: f64 },
    #[error("demand is zero for every resource")]
    ZeroDemand,
    #[error("single-resource prediction needs exactly one positive demand entry, found {positive:?}")]
    NotSingleResource { positive: Vec<ResourceKind> },
    #[error("workload mix is empty")]
    EmptyMix,
    #[error("mix proportion #{index} = {value} outside [0, 1]")]
    InvalidProportion { index: usize, value: f64 },
    #[error("mix proportions sum to {sum}, expected 1")]
    ProportionSum { sum: f64 },
    #[error("intensity grid is empty")]
    EmptyGrid,
    #[error("intensity #{index} = {value} must be positive")]
    NonPositiveIntensity { index: usize, value: f64 },
    #[error("insufficient samples: need {required}, have {available}")]
    InsufficientData { required: usize, available: usize },
    #[error("target ratio {target} unreachable; attainable range [{min}, {max}]")]
    NoSolution { target: f64, min: f64, max: f64 },
    #[error("{0}")]
    InvalidArgument(String),
}
