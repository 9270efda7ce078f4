use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Bm25Index, Corpus, KbError, RecordDraft, RecordId, RetrievalHit, Split, Visibility};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppendOutcome {
    pub id: RecordId,
    /// Another record already has the same (problemkey, result) pair.
    pub duplicate: bool,
    pub generation: u64,
}

/// A corpus with its indexes. Readers clone an `Arc` to pin a generation;
/// appends go through `&mut self`, so there is a single writer.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    corpus: Corpus,
    full: Arc<Bm25Index>,
    fair: Option<Arc<Bm25Index>>,
    flagged: Vec<RecordId>,
}

impl KnowledgeBase {
    pub fn new(corpus: Corpus) -> Self {
        let full = Bm25Index::build(&corpus, Visibility::Full).expect("full index needs no split");
        let fair = corpus
            .is_split()
            .then(|| Arc::new(Bm25Index::build(&corpus, Visibility::FairEval).expect("split corpus")));
        Self {
            corpus,
            full: Arc::new(full),
            fair,
            flagged: Vec::new(),
        }
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn index(&self, visibility: Visibility) -> Result<Arc<Bm25Index>, KbError> {
        match visibility {
            Visibility::Full => Ok(Arc::clone(&self.full)),
            Visibility::FairEval => self.fair.clone().ok_or_else(|| {
                KbError::Misuse("a fair-eval index needs a split corpus".into())
            }),
        }
    }

    pub fn retrieve(
        &self,
        visibility: Visibility,
        query: &str,
        k: usize,
    ) -> Result<Vec<RetrievalHit>, KbError> {
        self.index(visibility)?.retrieve(query, k)
    }

    /// Records flagged as duplicates on append.
    pub fn flagged(&self) -> &[RecordId] {
        &self.flagged
    }

    /// Appends a record produced by a live session. It joins the retained
    /// side and the full index only; the fair-eval index is untouched.
    pub fn append_operational_record(&mut self, draft: RecordDraft) -> Result<AppendOutcome, KbError> {
        let duplicate = self
            .corpus
            .records()
            .iter()
            .any(|r| r.problemkey == draft.problemkey && r.result == draft.result);
        let id = self.corpus.push(draft)?;
        let record = self.corpus.get(id).expect("just pushed");
        self.full = Arc::new(self.full.with_record(record, Some(Split::Retained80)));
        if duplicate {
            self.flagged.push(id);
        }
        Ok(AppendOutcome {
            id,
            duplicate,
            generation: self.full.generation(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge_base::{bundled_corpus, split_corpus};

    fn draft(key: &str, result: &str) -> RecordDraft {
        RecordDraft {
            problemkey: key.into(),
            rawtext: "observed during a live session".into(),
            function: "gpu-freq".into(),
            result: result.into(),
        }
    }

    #[test]
    fn append_reaches_full_index_only() {
        let corpus = split_corpus(&bundled_corpus(), 0.2, 11).unwrap();
        let mut kb = KnowledgeBase::new(corpus);
        let pinned = kb.index(Visibility::Full).unwrap();
        let fair_before = kb.index(Visibility::FairEval).unwrap();
        let out = kb
            .append_operational_record(draft("zeta quasar fault", "quasar misconfigured"))
            .unwrap();
        assert!(!out.duplicate);
        assert_eq!(kb.corpus().split_of(out.id), Some(Split::Retained80));
        let hits = kb.retrieve(Visibility::Full, "zeta quasar fault", 3).unwrap();
        assert_eq!(hits[0].id, out.id);
        assert!(kb.retrieve(Visibility::FairEval, "zeta quasar", 3).unwrap().is_empty());
        assert_eq!(*kb.index(Visibility::FairEval).unwrap(), *fair_before);
        // the pinned generation does not see the append
        assert!(!pinned.contains(out.id));
        assert_eq!(out.generation, pinned.generation() + 1);

        let again = kb
            .append_operational_record(draft("zeta quasar fault", "quasar misconfigured"))
            .unwrap();
        assert!(again.duplicate);
        assert_eq!(kb.flagged(), &[again.id]);
    }
}
