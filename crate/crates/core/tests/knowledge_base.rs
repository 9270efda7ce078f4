use std::collections::BTreeMap;

use clusterdiag_core::knowledge_base::{
    bundled_corpus, ingest, ingest_str, split_corpus, tokenize, Bm25Index, Corpus, KnowledgeBase,
    RecordDraft, Split, Visibility,
};
use proptest::prelude::*;

#[path = "support/bm25_oracle.rs"]
mod bm25_oracle;
use bm25_oracle::{draft, five_records, oracle_scores, token_lists, HAND_TABLE};

#[test]
fn bm25_matches_hand_computed_table() {
    let index = Bm25Index::build(&five_records(), Visibility::Full).unwrap();
    let table = HAND_TABLE;
    for (query, expected) in table {
        let hits = index.retrieve(query, 10).unwrap();
        assert_eq!(hits.len(), expected.len(), "{query}");
        for (hit, (id, score)) in hits.iter().zip(expected.iter()) {
            assert_eq!(hit.id, *id, "{query}");
            assert!((hit.score - score).abs() < 1e-9, "{query}: {} vs {score}", hit.score);
        }
    }
}

#[test]
fn bm25_matches_brute_force_on_bundled_corpus() {
    let corpus = bundled_corpus();
    let docs = token_lists(&corpus);
    let index = Bm25Index::build(&corpus, Visibility::Full).unwrap();
    for query in ["nccl timeout errno 104", "gpu frequency throttle", "no space left", "xid 48 ecc"] {
        let expected = oracle_scores(&docs, query);
        let hits = index.retrieve(query, 1000).unwrap();
        assert_eq!(hits.len(), expected.len());
        for hit in hits {
            assert!((hit.score - expected[&hit.id]).abs() < 1e-9);
        }
    }
}

#[test]
fn bundled_corpus_shape() {
    let corpus = bundled_corpus();
    assert_eq!(corpus.len(), 40);
    let index = Bm25Index::build(&corpus, Visibility::Full).unwrap();
    assert!(index.contains_term("nccl"));
    for record in corpus.records() {
        let hits = index.retrieve(&record.problemkey, 1).unwrap();
        assert_eq!(hits[0].id, record.id, "problemkey {:?}", record.problemkey);
    }
    let hits = index.retrieve("gpu frequency throttle", 5).unwrap();
    assert_eq!(corpus.get(hits[0].id).unwrap().problemkey, "gpu frequency throttle");
}

#[test]
fn ingest_reads_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    std::fs::write(
        &path,
        concat!(
            r#"{"problemkey":"a","rawtext":"t","function":"gpu-freq","result":"r"}"#, "\n",
            r#"{"problemkey":"b","rawtext":"t","function":"","result":"r"}"#, "\n",
            r#"{"problemkey":"c","rawtext":"t","function":"telemetry","result":"r"}"#, "\n",
        ),
    )
    .unwrap();
    let report = ingest(&path).unwrap();
    assert_eq!(report.corpus.len(), 3);
    assert!(report.rejections.is_empty());
    assert!(ingest(&dir.path().join("missing.jsonl")).is_err());
}

#[test]
fn fair_eval_never_reaches_retained_records() {
    for seed in 0..20 {
        let corpus = split_corpus(&bundled_corpus(), 0.2, seed).unwrap();
        let mut kb = KnowledgeBase::new(corpus.clone());
        kb.append_operational_record(draft("late arrival", "from a session", "cause"))
            .unwrap();
        let fair = kb.index(Visibility::FairEval).unwrap();
        assert_eq!(fair.len(), corpus.ids_in(Split::Heldout20).len());
        assert_eq!(fair.len(), 8);
        for id in fair.record_ids() {
            assert_eq!(kb.corpus().split_of(id), Some(Split::Heldout20));
        }
        // every record's own problemkey, queried against the fair index,
        // surfaces only held-out records
        for record in kb.corpus().records() {
            for hit in fair.retrieve(&record.problemkey, 100).unwrap() {
                assert_eq!(hit.split, Some(Split::Heldout20));
            }
        }
    }
}

#[test]
fn persisted_index_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = split_corpus(&bundled_corpus(), 0.2, 5).unwrap();
    let a = Bm25Index::build(&corpus, Visibility::FairEval).unwrap();
    let b = Bm25Index::build(&corpus, Visibility::FairEval).unwrap();
    a.save(&dir.path().join("a.idx")).unwrap();
    b.save(&dir.path().join("b.idx")).unwrap();
    let bytes_a = std::fs::read(dir.path().join("a.idx")).unwrap();
    assert_eq!(bytes_a, std::fs::read(dir.path().join("b.idx")).unwrap());
    let loaded = Bm25Index::load(&dir.path().join("a.idx")).unwrap();
    assert_eq!(
        loaded.retrieve("ecc error", 5).unwrap(),
        a.retrieve("ecc error", 5).unwrap()
    );
}

const WORDS: &[&str] = &["gpu", "link", "ecc", "disk", "leak", "nccl", "104", "clock", "slow", "hang"];

fn words(min: usize, max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), min..max).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn retrieval_is_deterministic_and_ordered(
        docs in prop::collection::vec((words(1, 4), words(1, 12), words(1, 3)), 1..12),
        query in words(1, 5),
        k in 1usize..8,
    ) {
        let corpus = Corpus::from_drafts(
            docs.iter().map(|(p, t, r)| draft(p, t, r)).collect()
        ).unwrap();
        let index = Bm25Index::build(&corpus, Visibility::Full).unwrap();
        let hits = index.retrieve(&query, k).unwrap();
        prop_assert_eq!(&hits, &index.retrieve(&query, k).unwrap());
        prop_assert!(hits.len() <= k);
        for pair in hits.windows(2) {
            prop_assert!(
                pair[0].score > pair[1].score
                    || (pair[0].score == pair[1].score && pair[0].id < pair[1].id)
            );
        }
        let oracle = oracle_scores(&token_lists(&corpus), &query);
        for hit in &hits {
            prop_assert!(hit.score >= 0.0);
            prop_assert!((hit.score - oracle[&hit.id]).abs() < 1e-9);
        }
    }

    /// A record sharing no term with the query and no longer than the average
    /// document raises a score by at most the IDF growth of the query terms.
    #[test]
    fn unrelated_record_bounded_by_idf_shift(
        docs in prop::collection::vec((words(1, 4), words(1, 12), words(1, 3)), 1..12),
        query in words(1, 4),
        filler_len in 1usize..6,
    ) {
        let drafts: Vec<RecordDraft> = docs.iter().map(|(p, t, r)| draft(p, t, r)).collect();
        let before = Bm25Index::build(&Corpus::from_drafts(drafts.clone()).unwrap(), Visibility::Full).unwrap();
        let filler_len = filler_len.min(before.average_length().floor().max(3.0) as usize).max(3);
        prop_assume!(filler_len as f64 <= before.average_length());
        let filler: Vec<&str> = ["unrelated"; 16][..filler_len - 2].to_vec();
        let mut more = drafts;
        more.push(draft("zzz", &filler.join(" "), "qqq"));
        let after = Bm25Index::build(&Corpus::from_drafts(more).unwrap(), Visibility::Full).unwrap();

        let terms: Vec<String> = tokenize(&query);
        let max_ratio = terms
            .iter()
            .filter(|t| before.document_frequency(t) > 0)
            .map(|t| after.idf(t) / before.idf(t))
            .fold(1.0_f64, f64::max);
        let old: BTreeMap<u32, f64> =
            before.retrieve(&query, 100).unwrap().into_iter().map(|h| (h.id, h.score)).collect();
        for hit in after.retrieve(&query, 100).unwrap() {
            let prior = old[&hit.id];
            prop_assert!(hit.score <= prior * max_ratio + 1e-9);
        }
    }

    #[test]
    fn every_line_lands_in_exactly_one_place(
        lines in prop::collection::vec(
            prop_oneof![
                words(1, 3).prop_map(|w| serde_json::json!({
                    "problemkey": w, "rawtext": "t", "function": "", "result": "r"
                }).to_string()),
                Just(r#"{"problemkey":"k","rawtext":"t","function":"bogus","result":"r"}"#.to_string()),
                Just(r#"{"problemkey":"k","rawtext":"t"}"#.to_string()),
                Just(String::new()),
                Just("[1, 2]".to_string()),
            ],
            1..30,
        )
    ) {
        let text = lines.join("\n");
        match ingest_str(&text) {
            Ok(report) => {
                prop_assert_eq!(report.corpus.len() + report.rejections.len(), text.lines().count());
                let mut seen: Vec<usize> = report.rejections.iter().map(|r| r.line).collect();
                seen.dedup();
                prop_assert_eq!(seen.len(), report.rejections.len());
            }
            Err(_) => {
                let valid = lines.iter().filter(|l| l.starts_with("{\"function\":\"\"")).count();
                prop_assert_eq!(valid, 0);
            }
        }
    }
}

#[test]
fn unique_problemkeys_rank_first() {
    let corpus = bundled_corpus();
    let index = Bm25Index::build(&corpus, Visibility::Full).unwrap();
    let mut checked = 0;
    for record in corpus.records() {
        let key = tokenize(&record.problemkey);
        if corpus.records().iter().filter(|r| tokenize(&r.problemkey) == key).count() > 1 {
            continue;
        }
        let hits = index.retrieve(&record.problemkey, 1).unwrap();
        assert_eq!(hits[0].id, record.id, "{:?}", record.problemkey);
        checked += 1;
    }
    assert!(checked >= corpus.len() / 2, "only {checked} unique keys");
}
