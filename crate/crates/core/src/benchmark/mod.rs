//! Three-metric evaluation of a backend: field extraction (A), diagnostic
//! program generation graded against simulated clusters (B) and fault
//! attribution as multiple choice (C).

mod backends;
mod items;
mod report;
mod scoring;

pub use backends::{EmptyBackend, OracleBackend};
pub use items::{
    load_items, parse_items, BenchmarkItem, Choice, ClusterFixture, Expected, ExpectedA, ExpectedB,
    ExpectedC, HiddenCase, Metric,
};
pub use report::{
    compare_reports, run_benchmark, Comparison, ComparisonRow, ItemResult, MetricScore, RetrievalAudit,
    RunConfig, ScoreReport, CHEATING_FLAG,
};
pub use scoring::{
    extract_program, parse_label, parse_metric_a, render_prompt, score_item, score_metric_a,
    score_metric_b, score_metric_c, ItemScore, CASE_LIMITS,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("item file line {line}: {message}")]
    InvalidItem { line: usize, message: String },
    #[error("{0}")]
    Misuse(String),
}

pub fn bundled_items_text() -> &'static str {
    include_str!("../../data/bench/minibench.jsonl")
}

/// The 30-item synthetic mini-benchmark, ten items per metric.
pub fn bundled_items() -> Vec<BenchmarkItem> {
    parse_items(bundled_items_text()).expect("bundled items are valid")
}

/// A scripted backend fixture that answers the bundled items with a fixed
/// mix of right and wrong answers.
pub fn competent_fixture() -> &'static str {
    include_str!("../../data/bench/competent_backend.json")
}
