use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scoring::run_case;
use super::BenchError;
use crate::cluster_sim::{Cluster, ClusterConfig, ClusterTopology, FaultSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    A,
    B,
    C,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::A, Metric::B, Metric::C];
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedA {
    pub ip: String,
    pub port: String,
    #[serde(rename = "continue")]
    pub proceed: bool,
}

/// A fresh single-server cluster for one hidden case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterFixture {
    pub gpus: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    /// Simulated seconds to let pass before the program runs.
    #[serde(default)]
    pub advance_s: f64,
}

impl ClusterFixture {
    pub fn build(&self) -> Result<Cluster, String> {
        let config = ClusterConfig::with_seed(self.seed).noiseless();
        let mut cluster = Cluster::new(ClusterTopology::single_server(self.gpus), config).map_err(|e| e.to_string())?;
        for fault in &self.faults {
            cluster.inject_fault(fault.clone()).map_err(|e| e.to_string())?;
        }
        cluster.advance(self.advance_s);
        Ok(cluster)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenCase {
    pub fixture: ClusterFixture,
    #[serde(default)]
    pub input: String,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedB {
    pub signature: String,
    pub canonical: String,
    pub cases: Vec<HiddenCase>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedC {
    pub choices: Vec<Choice>,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Expected {
    A(ExpectedA),
    B(ExpectedB),
    C(ExpectedC),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub metric: Metric,
    pub prompt: String,
    pub expected: Expected,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawItem {
    id: String,
    metric: Metric,
    prompt: String,
    expected: serde_json::Value,
}

impl BenchmarkItem {
    fn from_raw(raw: RawItem) -> Result<Self, String> {
        let expected = match raw.metric {
            Metric::A => Expected::A(serde_json::from_value(raw.expected).map_err(|e| e.to_string())?),
            Metric::B => Expected::B(serde_json::from_value(raw.expected).map_err(|e| e.to_string())?),
            Metric::C => Expected::C(serde_json::from_value(raw.expected).map_err(|e| e.to_string())?),
        };
        let item = Self {
            id: raw.id,
            metric: raw.metric,
            prompt: raw.prompt,
            expected,
        };
        item.validate()?;
        Ok(item)
    }

    /// Payload checks, including running a metric-B item's canonical
    /// program against its own hidden cases.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        match &self.expected {
            Expected::A(a) => {
                if a.ip.trim().is_empty() || a.port.parse::<u16>().is_err() {
                    return Err("metric A needs an ip and a numeric port".into());
                }
            }
            Expected::B(b) => {
                if b.cases.len() < 2 {
                    return Err(format!("metric B needs at least 2 hidden cases, has {}", b.cases.len()));
                }
                for (i, case) in b.cases.iter().enumerate() {
                    run_case(&b.canonical, case)
                        .map_err(|e| format!("canonical program fails case {i}: {e}"))?;
                }
            }
            Expected::C(c) => {
                if !(2..=6).contains(&c.choices.len()) {
                    return Err(format!("metric C needs 2 to 6 choices, has {}", c.choices.len()));
                }
                let labels: BTreeSet<&str> = c.choices.iter().map(|x| x.label.as_str()).collect();
                if labels.len() != c.choices.len() {
                    return Err("choice labels must be distinct".into());
                }
                if let Some(bad) = c.choices.iter().find(|x| x.label.len() != 1 || !x.label.chars().all(|ch| ch.is_ascii_uppercase())) {
                    return Err(format!("choice label {:?} must be one capital letter", bad.label));
                }
                if !labels.contains(c.answer.as_str()) {
                    return Err(format!("answer {} is not a choice label", c.answer));
                }
            }
        }
        Ok(())
    }
}

/// Parses line-delimited items; blank lines are skipped and any invalid
/// item rejects the file.
pub fn parse_items(text: &str) -> Result<Vec<BenchmarkItem>, BenchError> {
    let mut items = Vec::new();
    let mut ids = BTreeSet::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| BenchError::InvalidItem { line: index + 1, message };
        let raw: RawItem = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let item = BenchmarkItem::from_raw(raw).map_err(bad)?;
        if !ids.insert(item.id.clone()) {
            return Err(bad(format!("duplicate id {}", item.id)));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_items(path: &Path) -> Result<Vec<BenchmarkItem>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_items(&text)
}
