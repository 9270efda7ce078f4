use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::KbError;
use crate::cluster_sim::tool_names;

pub const DEFAULT_EVAL_FRACTION: f64 = 0.2;

pub type RecordId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisRecord {
    pub id: RecordId,
    pub problemkey: String,
    pub rawtext: String,
    /// Check or tool correlated with the problem; empty when none applies.
    pub function: String,
    pub result: String,
}

/// A record before it has been given an id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDraft {
    pub problemkey: String,
    pub rawtext: String,
    #[serde(default)]
    pub function: String,
    pub result: String,
}

impl RecordDraft {
    pub fn validate(&self) -> Result<(), String> {
        for (name, value) in [
            ("problemkey", &self.problemkey),
            ("rawtext", &self.rawtext),
            ("result", &self.result),
        ] {
            if value.trim().is_empty() {
                return Err(format!("empty field: {name}"));
            }
        }
        if !self.function.is_empty() && !tool_names().contains(&self.function.as_str()) {
            return Err(format!("unknown function: {}", self.function));
        }
        Ok(())
    }

    fn with_id(self, id: RecordId) -> DiagnosisRecord {
        DiagnosisRecord {
            id,
            problemkey: self.problemkey,
            rawtext: self.rawtext,
            function: self.function,
            result: self.result,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    /// The 80% side: seeds benchmark questions, hidden in fair evaluation.
    Retained80,
    /// The 20% side: the only records visible in fair evaluation.
    Heldout20,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Retained80 => "retained80",
            Split::Heldout20 => "heldout20",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    records: Vec<DiagnosisRecord>,
    assignments: Vec<Option<Split>>,
}

impl Corpus {
    pub fn from_drafts(drafts: Vec<RecordDraft>) -> Result<Self, KbError> {
        let mut records = Vec::with_capacity(drafts.len());
        for (i, draft) in drafts.into_iter().enumerate() {
            draft
                .validate()
                .map_err(|reason| KbError::InvalidRecord(format!("record {i}: {reason}")))?;
            records.push(draft.with_id(i as RecordId));
        }
        let assignments = vec![None; records.len()];
        Ok(Self { records, assignments })
    }

    pub fn records(&self) -> &[DiagnosisRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: RecordId) -> Option<&DiagnosisRecord> {
        self.records.get(id as usize)
    }

    pub fn split_of(&self, id: RecordId) -> Option<Split> {
        self.assignments.get(id as usize).copied().flatten()
    }

    /// True once every record carries a split assignment.
    pub fn is_split(&self) -> bool {
        !self.assignments.is_empty() && self.assignments.iter().all(Option::is_some)
    }

    pub fn ids_in(&self, split: Split) -> Vec<RecordId> {
        self.records
            .iter()
            .filter(|r| self.split_of(r.id) == Some(split))
            .map(|r| r.id)
            .collect()
    }

    /// Appends with the next id; the record lands on the retained side.
    pub(crate) fn push(&mut self, draft: RecordDraft) -> Result<RecordId, KbError> {
        draft.validate().map_err(KbError::InvalidRecord)?;
        let id = self.records.len() as RecordId;
        self.records.push(draft.with_id(id));
        self.assignments.push(Some(Split::Retained80));
        Ok(id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number in the input.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub corpus: Corpus,
    pub rejections: Vec<Rejection>,
}

pub fn ingest(path: &Path) -> Result<IngestReport, KbError> {
    let text = std::fs::read_to_string(path).map_err(|e| KbError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ingest_str(&text)
}

/// Ingests line-delimited JSON records. Every line ends up either in the
/// corpus or in the rejection list.
pub fn ingest_str(text: &str) -> Result<IngestReport, KbError> {
    let mut drafts = Vec::new();
    let mut rejections = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match parse_line(line) {
            Ok(draft) => drafts.push(draft),
            Err(reason) => rejections.push(Rejection { line: i + 1, reason }),
        }
    }
    if drafts.is_empty() {
        return Err(KbError::EmptyCorpus {
            rejected: rejections.len(),
        });
    }
    let corpus = Corpus::from_drafts(drafts)?;
    Ok(IngestReport { corpus, rejections })
}

fn parse_line(line: &str) -> Result<RecordDraft, String> {
    if line.trim().is_empty() {
        return Err("empty line".into());
    }
    let value: Value = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
    let Value::Object(map) = value else {
        return Err("malformed record: expected an object".into());
    };
    let field = |name: &str| -> Result<String, String> {
        match map.get(name) {
            None | Some(Value::Null) => Err(format!("missing field: {name}")),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(format!("field {name} must be a string")),
        }
    };
    let draft = RecordDraft {
        problemkey: field("problemkey")?,
        rawtext: field("rawtext")?,
        function: field("function")?,
        result: field("result")?,
    };
    draft.validate()?;
    Ok(draft)
}

/// Assigns `round(n * eval_fraction)` records (at least one, and at least
/// one left over when n > 1) to the held-out side, pseudo-randomly by seed.
pub fn split_corpus(corpus: &Corpus, eval_fraction: f64, seed: u64) -> Result<Corpus, KbError> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(KbError::Misuse(format!(
            "eval fraction must lie in (0, 1), got {eval_fraction}"
        )));
    }
    let n = corpus.len();
    if n == 0 {
        return Err(KbError::Misuse("cannot split an empty corpus".into()));
    }
    let upper = if n > 1 { n - 1 } else { 1 };
    let held = ((n as f64 * eval_fraction).round() as usize).clamp(1, upper);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![Some(Split::Retained80); n];
    for &i in &order[..held] {
        assignments[i] = Some(Split::Heldout20);
    }
    Ok(Corpus {
        records: corpus.records.clone(),
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(key: &str, function: &str) -> String {
        serde_json::json!({
            "problemkey": key, "rawtext": "text", "function": function, "result": "cause"
        })
        .to_string()
    }

    #[test]
    fn rejects_with_reasons_and_line_numbers() {
        let text = [
            line("a", "gpu-freq"),
            r#"{"problemkey": "b", "rawtext": "t", "function": ""}"#.to_string(),
            line("c", "no-such-tool"),
            String::new(),
            "not json".to_string(),
            line("d", ""),
        ]
        .join("\n");
        let report = ingest_str(&text).unwrap();
        assert_eq!(report.corpus.len(), 2);
        assert_eq!(report.corpus.records()[1].problemkey, "d");
        assert_eq!(report.corpus.records()[1].id, 1);
        let reasons: Vec<_> = report.rejections.iter().map(|r| (r.line, r.reason.as_str())).collect();
        assert_eq!(reasons[0], (2, "missing field: result"));
        assert_eq!(reasons[1], (3, "unknown function: no-such-tool"));
        assert_eq!(reasons[2], (4, "empty line"));
        assert_eq!(reasons[3].0, 5);
    }

    #[test]
    fn zero_valid_records_is_an_error() {
        assert_eq!(
            ingest_str("\n{}").unwrap_err(),
            KbError::EmptyCorpus { rejected: 2 }
        );
    }

    #[test]
    fn split_sizes() {
        let drafts = |n: usize| {
            (0..n)
                .map(|i| RecordDraft {
                    problemkey: format!("k{i}"),
                    rawtext: "t".into(),
                    function: String::new(),
                    result: "r".into(),
                })
                .collect::<Vec<_>>()
        };
        for (n, held) in [(1, 1), (2, 1), (3, 1), (10, 2), (250, 50)] {
            let corpus = Corpus::from_drafts(drafts(n)).unwrap();
            let split = split_corpus(&corpus, 0.2, 7).unwrap();
            assert_eq!(split.ids_in(Split::Heldout20).len(), held, "n = {n}");
            assert!(split.is_split());
        }
        let corpus = Corpus::from_drafts(drafts(10)).unwrap();
        assert!(split_corpus(&corpus, 1.0, 0).is_err());
        assert!(split_corpus(&corpus, 0.0, 0).is_err());
        assert_eq!(split_corpus(&corpus, 0.2, 3), split_corpus(&corpus, 0.2, 3));
    }
}
