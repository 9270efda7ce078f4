//! Four-field diagnosis records, the held-out split and BM25 retrieval.

mod bm25;
mod corpus;
mod store;

pub use bm25::{tokenize, Bm25Index, Bm25Params, RetrievalHit, Visibility, INDEX_FORMAT_VERSION};
pub use corpus::{
    ingest, ingest_str, split_corpus, Corpus, DiagnosisRecord, IngestReport, RecordDraft,
    RecordId, Rejection, Split, DEFAULT_EVAL_FRACTION,
};
pub use store::{AppendOutcome, KnowledgeBase};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KbError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("no valid records ({rejected} rejected)")]
    EmptyCorpus { rejected: usize },
    #[error("misuse: {0}")]
    Misuse(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("malformed index file at line {line}: {message}")]
    IndexFormat { line: usize, message: String },
}

/// Bundled synthetic corpus.
pub fn bundled_corpus_text() -> &'static str {
    include_str!("../../data/corpus.jsonl")
}

/// Ingests the bundled corpus; it has no rejected lines.
pub fn bundled_corpus() -> Corpus {
    ingest_str(bundled_corpus_text())
        .expect("bundled corpus is valid")
        .corpus
}
