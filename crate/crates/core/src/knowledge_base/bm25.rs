use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, DiagnosisRecord, KbError, RecordId, Split};

pub const INDEX_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "clusterdiag-bm25";

/// Which records an index may expose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    /// Only the held-out side of a split corpus.
    FairEval,
    /// Every record, including operational appends.
    Full,
}

impl Visibility {
    pub fn name(self) -> &'static str {
        match self {
            Visibility::FairEval => "fair_eval",
            Visibility::Full => "full",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.to_ascii_lowercase().replace('-', "_").as_str() {
            "fair_eval" | "faireval" | "fair" => Some(Visibility::FairEval),
            "full" => Some(Visibility::Full),
            _ => None,
        }
    }

    fn admits(self, split: Option<Split>) -> bool {
        match self {
            Visibility::Full => true,
            Visibility::FairEval => split == Some(Split::Heldout20),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub id: RecordId,
    pub score: f64,
    /// Distinct query terms found in the record, in query order.
    pub matched_terms: Vec<String>,
    pub split: Option<Split>,
}

/// Case-folds and splits on anything that is not alphanumeric. Digit runs
/// survive as their own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn document_tokens(record: &DiagnosisRecord) -> Vec<String> {
    let mut tokens = tokenize(&record.problemkey);
    tokens.extend(tokenize(&record.rawtext));
    tokens.extend(tokenize(&record.result));
    tokens
}

#[derive(Debug, Clone, PartialEq)]
struct DocEntry {
    len: u32,
    split: Option<Split>,
}

/// Immutable inverted index. Appends build a new generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    visibility: Visibility,
    generation: u64,
    params: Bm25Params,
    docs: BTreeMap<RecordId, DocEntry>,
    /// term -> (record id, term frequency), ascending by id
    postings: BTreeMap<String, Vec<(RecordId, u32)>>,
    total_len: u64,
}

impl Bm25Index {
    pub fn build(corpus: &Corpus, visibility: Visibility) -> Result<Self, KbError> {
        Self::build_with(corpus, visibility, Bm25Params::default())
    }

    pub fn build_with(
        corpus: &Corpus,
        visibility: Visibility,
        params: Bm25Params,
    ) -> Result<Self, KbError> {
        if visibility == Visibility::FairEval && !corpus.is_split() {
            return Err(KbError::Misuse(
                "a fair-eval index needs a split corpus".into(),
            ));
        }
        let mut index = Self {
            visibility,
            generation: 0,
            params,
            docs: BTreeMap::new(),
            postings: BTreeMap::new(),
            total_len: 0,
        };
        for record in corpus.records() {
            let split = corpus.split_of(record.id);
            if visibility.admits(split) {
                index.insert(record, split);
            }
        }
        Ok(index)
    }

    fn insert(&mut self, record: &DiagnosisRecord, split: Option<Split>) {
        let tokens = document_tokens(record);
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for t in &tokens {
            *counts.entry(t.clone()).or_default() += 1;
        }
        for (term, tf) in counts {
            let list = self.postings.entry(term).or_default();
            match list.binary_search_by_key(&record.id, |&(id, _)| id) {
                Ok(pos) => list[pos].1 = tf,
                Err(pos) => list.insert(pos, (record.id, tf)),
            }
        }
        self.total_len += tokens.len() as u64;
        self.docs.insert(
            record.id,
            DocEntry {
                len: tokens.len() as u32,
                split,
            },
        );
    }

    /// A new generation with `record` added, if this index's visibility
    /// admits it.
    pub fn with_record(&self, record: &DiagnosisRecord, split: Option<Split>) -> Self {
        let mut next = self.clone();
        next.generation += 1;
        if self.visibility.admits(split) && !self.docs.contains_key(&record.id) {
            next.insert(record, split);
        }
        next
    }

    pub fn visibility(&self) -> Visibility {
        self.visibility
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Number of indexed records.
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn contains(&self, id: RecordId) -> bool {
        self.docs.contains_key(&id)
    }

    pub fn record_ids(&self) -> impl Iterator<Item = RecordId> + '_ {
        self.docs.keys().copied()
    }

    pub fn contains_term(&self, term: &str) -> bool {
        self.postings.contains_key(&term.to_lowercase())
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn average_length(&self) -> f64 {
        if self.docs.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.docs.len() as f64
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.document_frequency(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top `k` records by BM25 score, ties by ascending id. A query with no
    /// indexed terms yields no hits.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalHit>, KbError> {
        if k == 0 {
            return Err(KbError::Misuse("k must be at least 1".into()));
        }
        let mut terms: Vec<String> = Vec::new();
        for t in tokenize(query) {
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
        let avgdl = self.average_length();
        let Bm25Params { k1, b } = self.params;
        let mut acc: BTreeMap<RecordId, (f64, Vec<String>)> = BTreeMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(id, tf) in list {
                let dl = self.docs[&id].len as f64;
                let tf = tf as f64;
                let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
                let score = idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
                let entry = acc.entry(id).or_insert((0.0, Vec::new()));
                entry.0 += score;
                entry.1.push(term.clone());
            }
        }
        let mut hits: Vec<RetrievalHit> = acc
            .into_iter()
            .map(|(id, (score, matched_terms))| RetrievalHit {
                id,
                score,
                matched_terms,
                split: self.docs[&id].split,
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        hits.truncate(k);
        Ok(hits)
    }

    /// Single-file text layout:
    ///
    /// ```text
    /// clusterdiag-bm25 1
    /// visibility full
    /// generation 0
    /// params 1.2 0.75
    /// docs <n>
    /// <id> <length> <retained80|heldout20|none>    (n lines)
    /// terms <m>
    /// <term> <id>:<tf> <id>:<tf> ...               (m lines)
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {INDEX_FORMAT_VERSION}");
        let _ = writeln!(out, "visibility {}", self.visibility.name());
        let _ = writeln!(out, "generation {}", self.generation);
        let _ = writeln!(out, "params {} {}", self.params.k1, self.params.b);
        let _ = writeln!(out, "docs {}", self.docs.len());
        for (id, doc) in &self.docs {
            let split = doc.split.map_or("none".to_string(), |s| s.to_string());
            let _ = writeln!(out, "{id} {} {split}", doc.len);
        }
        let _ = writeln!(out, "terms {}", self.postings.len());
        for (term, list) in &self.postings {
            out.push_str(term);
            for (id, tf) in list {
                let _ = write!(out, " {id}:{tf}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, KbError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |expect: &str| {
            lines.next().ok_or_else(|| KbError::IndexFormat {
                line: 0,
                message: format!("unexpected end of file, expected {expect}"),
            })
        };
        let bad = |line: usize, message: String| KbError::IndexFormat { line, message };

        let (n, header) = next("header")?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad(n, "not a clusterdiag index".into()))?;
        if version != INDEX_FORMAT_VERSION.to_string() {
            return Err(bad(n, format!("unsupported version {version}")));
        }
        let keyed = |(n, line): (usize, &str), key: &str| -> Result<String, KbError> {
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(n, format!("expected `{key}`")))
        };
        let num = |n: usize, s: &str| -> Result<u64, KbError> {
            s.parse().map_err(|_| bad(n, format!("bad number {s:?}")))
        };
        let float = |n: usize, s: &str| -> Result<f64, KbError> {
            s.parse().map_err(|_| bad(n, format!("bad number {s:?}")))
        };

        let line = next("visibility")?;
        let vis_text = keyed(line, "visibility")?;
        let visibility = Visibility::parse(&vis_text)
            .ok_or_else(|| bad(line.0, format!("unknown visibility {vis_text:?}")))?;
        let line = next("generation")?;
        let generation = num(line.0, &keyed(line, "generation")?)?;
        let line = next("params")?;
        let params_text = keyed(line, "params")?;
        let parts: Vec<&str> = params_text.split(' ').collect();
        if parts.len() != 2 {
            return Err(bad(line.0, "expected `params <k1> <b>`".into()));
        }
        let params = Bm25Params {
            k1: float(line.0, parts[0])?,
            b: float(line.0, parts[1])?,
        };

        let line = next("docs")?;
        let doc_count = num(line.0, &keyed(line, "docs")?)?;
        let mut docs = BTreeMap::new();
        let mut total_len = 0u64;
        for _ in 0..doc_count {
            let (n, l) = next("doc entry")?;
            let parts: Vec<&str> = l.split(' ').collect();
            if parts.len() != 3 {
                return Err(bad(n, "expected `<id> <length> <split>`".into()));
            }
            let split = match parts[2] {
                "retained80" => Some(Split::Retained80),
                "heldout20" => Some(Split::Heldout20),
                "none" => None,
                other => return Err(bad(n, format!("unknown split {other:?}"))),
            };
            let len = num(n, parts[1])? as u32;
            total_len += len as u64;
            docs.insert(num(n, parts[0])? as RecordId, DocEntry { len, split });
        }

        let line = next("terms")?;
        let term_count = num(line.0, &keyed(line, "terms")?)?;
        let mut postings = BTreeMap::new();
        for _ in 0..term_count {
            let (n, l) = next("posting list")?;
            let mut parts = l.split(' ');
            let term = parts.next().unwrap_or_default().to_string();
            let mut list = Vec::new();
            for p in parts {
                let (id, tf) = p
                    .split_once(':')
                    .ok_or_else(|| bad(n, format!("bad posting {p:?}")))?;
                let id = num(n, id)? as RecordId;
                if !docs.contains_key(&id) {
                    return Err(bad(n, format!("posting for unknown record {id}")));
                }
                list.push((id, num(n, tf)? as u32));
            }
            postings.insert(term, list);
        }
        Ok(Self {
            visibility,
            generation,
            params,
            docs,
            postings,
            total_len,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        std::fs::write(path, self.to_text()).map_err(|e| KbError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let text = std::fs::read_to_string(path).map_err(|e| KbError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge_base::{split_corpus, RecordDraft};

    fn corpus() -> Corpus {
        let rows = [
            ("nccl timeout", "allreduce hung in nccl after errno 104", "link degraded"),
            ("gpu throttle", "clock stuck at 200 MHz", "power cap"),
            ("disk full", "checkpoint write failed", "storage exhausted"),
        ];
        Corpus::from_drafts(
            rows.iter()
                .map(|(k, t, r)| RecordDraft {
                    problemkey: k.to_string(),
                    rawtext: t.to_string(),
                    function: String::new(),
                    result: r.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tokenizer_keeps_digit_runs() {
        assert_eq!(tokenize("ERRNO 104: gpu-3!"), ["errno", "104", "gpu", "3"]);
        assert!(tokenize(" -- ").is_empty());
    }

    #[test]
    fn visibility_rules() {
        let c = corpus();
        assert!(Bm25Index::build(&c, Visibility::FairEval).is_err());
        let full = Bm25Index::build(&c, Visibility::Full).unwrap();
        assert_eq!(full.len(), 3);
        assert!(full.contains_term("nccl"));
        assert!(!full.contains_term("infiniband"));
        let split = split_corpus(&c, 0.2, 1).unwrap();
        let fair = Bm25Index::build(&split, Visibility::FairEval).unwrap();
        assert_eq!(fair.len(), 1);
    }

    #[test]
    fn retrieval_order_and_edge_cases() {
        let full = Bm25Index::build(&corpus(), Visibility::Full).unwrap();
        let hits = full.retrieve("nccl timeout", 5).unwrap();
        assert_eq!(hits[0].id, 0);
        assert_eq!(hits[0].matched_terms, ["nccl", "timeout"]);
        assert!(full.retrieve("zzz", 3).unwrap().is_empty());
        assert!(full.retrieve("!!", 3).unwrap().is_empty());
        assert!(full.retrieve("nccl", 0).is_err());
    }

    #[test]
    fn text_layout_round_trips() {
        let full = Bm25Index::build(&corpus(), Visibility::Full).unwrap();
        let text = full.to_text();
        assert!(text.starts_with("clusterdiag-bm25 1\n"));
        let back = Bm25Index::from_text(&text).unwrap();
        assert_eq!(back, full);
        assert_eq!(back.to_text(), text);
        let err = Bm25Index::from_text(&text.replace("clusterdiag-bm25 1", "clusterdiag-bm25 9"))
            .unwrap_err();
        assert!(matches!(err, KbError::IndexFormat { line: 1, .. }));
    }
}
