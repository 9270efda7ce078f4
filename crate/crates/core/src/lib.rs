//! Cluster-diagnosis agent toolkit.

pub mod agent;
pub mod benchmark;
pub mod cluster_sim;
pub mod dot_engine;
pub mod knowledge_base;
pub mod perf_model;
mod scalar;

pub use scalar::Scalar;

/// Double-precision instantiations of the performance-model types.
pub type ResourceProfile = perf_model::ResourceProfile<f64>;
pub type TaskDemand = perf_model::TaskDemand<f64>;
pub type WorkloadMix = perf_model::WorkloadMix<f64>;
pub type MixEntry = perf_model::MixEntry<f64>;
pub type PerfPrediction = perf_model::PerfPrediction<f64>;
pub type RateEstimate = perf_model::RateEstimate<f64>;
