use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::items::{BenchmarkItem, Metric};
use super::scoring::score_item;
use super::BenchError;
use crate::agent::Backend;
use crate::knowledge_base::{KnowledgeBase, RecordId, Split, Visibility};

pub const CHEATING_FLAG: &str = "cheating-inconsistent";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub visibility: Visibility,
    pub rag: bool,
    /// Records retrieved per item when `rag` is on.
    pub k: usize,
    /// Fixed report timestamp; the current time when `None`.
    pub timestamp: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            visibility: Visibility::FairEval,
            rag: false,
            k: 3,
            timestamp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub metric: Metric,
    pub passed: bool,
    pub diagnostic: Option<String>,
    pub detail: String,
    pub response: String,
    /// Records retrieved into this item's prompt.
    pub retrieved: Vec<RecordId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: Metric,
    pub passed: usize,
    pub total: usize,
    pub score: f64,
}

/// Every retrieval issued during a run and which split each hit came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RetrievalAudit {
    pub queries: usize,
    pub hits: usize,
    pub retained_hits: usize,
    pub heldout_hits: usize,
    pub unsplit_hits: usize,
    pub records: Vec<RecordId>,
}

impl RetrievalAudit {
    /// No hit reached a record on the retained side.
    pub fn is_fair(&self) -> bool {
        self.retained_hits == 0 && self.unsplit_hits == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub backend: String,
    pub visibility: Visibility,
    pub rag: bool,
    pub timestamp: String,
    /// False when the backend became unreachable mid-run.
    pub complete: bool,
    pub abort_reason: Option<String>,
    pub metrics: Vec<MetricScore>,
    pub items: Vec<ItemResult>,
    pub retrieval: RetrievalAudit,
}

fn aggregate(items: &[ItemResult]) -> Vec<MetricScore> {
    Metric::ALL
        .into_iter()
        .filter_map(|metric| {
            let rows: Vec<&ItemResult> = items.iter().filter(|r| r.metric == metric).collect();
            if rows.is_empty() {
                return None;
            }
            let passed = rows.iter().filter(|r| r.passed).count();
            Some(MetricScore {
                metric,
                passed,
                total: rows.len(),
                score: passed as f64 / rows.len() as f64,
            })
        })
        .collect()
}

impl ScoreReport {
    pub fn score(&self, metric: Metric) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == metric).map(|m| m.score)
    }

    /// Whether the metric rows agree with the per-item rows.
    pub fn is_consistent(&self) -> bool {
        aggregate(&self.items) == self.metrics
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "backend {}  visibility {}  rag {}  {}\n",
            self.backend,
            self.visibility.name(),
            if self.rag { "on" } else { "off" },
            if self.complete { "complete" } else { "INCOMPLETE" }
        );
        let _ = writeln!(out, "{:<8} {:>6} {:>6} {:>7}", "metric", "passed", "total", "score");
        for m in &self.metrics {
            let _ = writeln!(out, "{:<8} {:>6} {:>6} {:>7.4}", m.metric.to_string(), m.passed, m.total, m.score);
        }
        if self.rag {
            let _ = writeln!(
                out,
                "retrieval: {} queries, {} hits, {} from retained records",
                self.retrieval.queries, self.retrieval.hits, self.retrieval.retained_hits
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| BenchError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| BenchError::Misuse(format!("not a score report: {e}")))
    }
}

fn now_stamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("unix:{secs}")
}

/// Scores every item in order. A transport failure stops the run and the
/// partial report is returned marked incomplete.
pub fn run_benchmark(
    items: &[BenchmarkItem],
    backend: &dyn Backend,
    kb: Option<&KnowledgeBase>,
    config: &RunConfig,
) -> Result<ScoreReport, BenchError> {
    let kb = match (config.rag, kb) {
        (false, _) => None,
        (true, None) => return Err(BenchError::Misuse("retrieval is on but no knowledge base was given".into())),
        (true, Some(kb)) => {
            kb.index(config.visibility).map_err(|e| BenchError::Misuse(e.to_string()))?;
            if config.k == 0 {
                return Err(BenchError::Misuse("k must be at least 1".into()));
            }
            Some(kb)
        }
    };
    let mut report = ScoreReport {
        backend: backend.name(),
        visibility: config.visibility,
        rag: config.rag,
        timestamp: config.timestamp.clone().unwrap_or_else(now_stamp),
        complete: true,
        abort_reason: None,
        metrics: Vec::new(),
        items: Vec::new(),
        retrieval: RetrievalAudit::default(),
    };
    let mut touched = BTreeSet::new();
    for item in items {
        let mut knowledge = Vec::new();
        let mut retrieved = Vec::new();
        if let Some(kb) = kb {
            let hits = kb
                .retrieve(config.visibility, &item.prompt, config.k)
                .map_err(|e| BenchError::Misuse(e.to_string()))?;
            report.retrieval.queries += 1;
            for hit in hits {
                report.retrieval.hits += 1;
                match kb.corpus().split_of(hit.id) {
                    Some(Split::Retained80) => report.retrieval.retained_hits += 1,
                    Some(Split::Heldout20) => report.retrieval.heldout_hits += 1,
                    None => report.retrieval.unsplit_hits += 1,
                }
                touched.insert(hit.id);
                retrieved.push(hit.id);
                if let Some(r) = kb.corpus().get(hit.id) {
                    knowledge.push(format!("{}: {} (tool {})", r.problemkey, r.result, r.function));
                }
            }
        }
        match score_item(item, backend, &knowledge) {
            Ok((score, response)) => report.items.push(ItemResult {
                id: item.id.clone(),
                metric: item.metric,
                passed: score.passed,
                diagnostic: score.diagnostic,
                detail: score.detail,
                response,
                retrieved,
            }),
            Err(e) => {
                report.complete = false;
                report.abort_reason = Some(format!("item {}: {e}", item.id));
                break;
            }
        }
    }
    report.retrieval.records = touched.into_iter().collect();
    report.metrics = aggregate(&report.items);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub backend: String,
    pub visibility: Visibility,
    pub rag: bool,
    pub scores: [Option<f64>; 3],
    pub complete: bool,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub mixed_visibility: bool,
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<20} {:<10} {:<4} {:>7} {:>7} {:>7}  {}\n",
            "backend", "visibility", "rag", "A", "B", "C", "flag"
        );
        for row in &self.rows {
            let cell = |s: Option<f64>| s.map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{:<20} {:<10} {:<4} {:>7} {:>7} {:>7}  {}",
                row.backend,
                row.visibility.name(),
                if row.rag { "on" } else { "off" },
                cell(row.scores[0]),
                cell(row.scores[1]),
                cell(row.scores[2]),
                row.flag.as_deref().unwrap_or("")
            );
        }
        out
    }
}

/// Aligns reports side by side. When fair and full-visibility runs are
/// mixed, every full-visibility row is flagged.
pub fn compare_reports(reports: &[ScoreReport]) -> Result<Comparison, BenchError> {
    if reports.len() < 2 {
        return Err(BenchError::Misuse(format!(
            "comparison needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    let visibilities: BTreeSet<&str> = reports.iter().map(|r| r.visibility.name()).collect();
    let mixed = visibilities.len() > 1;
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            backend: r.backend.clone(),
            visibility: r.visibility,
            rag: r.rag,
            scores: Metric::ALL.map(|m| r.score(m)),
            complete: r.complete,
            flag: (mixed && r.visibility == Visibility::Full).then(|| CHEATING_FLAG.to_string()),
        })
        .collect();
    Ok(Comparison {
        rows,
        mixed_visibility: mixed,
    })
}
