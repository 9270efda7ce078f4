use std::collections::BTreeMap;

use clusterdiag_core::knowledge_base::{tokenize, Corpus, RecordDraft};

pub fn draft(problemkey: &str, rawtext: &str, result: &str) -> RecordDraft {
    RecordDraft {
        problemkey: problemkey.into(),
        rawtext: rawtext.into(),
        function: String::new(),
        result: result.into(),
    }
}

/// Five records whose token streams are:
/// 0: alpha alpha beta gamma
/// 1: beta beta beta delta
/// 2: gamma alpha gamma gamma x
/// 3: delta epsilon y
/// 4: omega omega omega omega z
pub fn five_records() -> Corpus {
    Corpus::from_drafts(vec![
        draft("Alpha", "alpha, BETA", "gamma"),
        draft("beta", "beta/beta", "delta"),
        draft("gamma", "alpha gamma-gamma", "x"),
        draft("delta", "epsilon", "y"),
        draft("omega", "omega omega; omega", "z"),
    ])
    .unwrap()
}

/// Brute-force BM25 straight from the token lists.
pub fn oracle_scores(docs: &[Vec<String>], query: &str) -> BTreeMap<u32, f64> {
    let (k1, b) = (1.2, 0.75);
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut terms: Vec<String> = Vec::new();
    for t in tokenize(query) {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let mut out = BTreeMap::new();
    for (id, doc) in docs.iter().enumerate() {
        let mut score = 0.0;
        let mut matched = false;
        for term in &terms {
            let tf = doc.iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avgdl));
        }
        if matched {
            out.insert(id as u32, score);
        }
    }
    out
}

pub fn token_lists(corpus: &Corpus) -> Vec<Vec<String>> {
    corpus
        .records()
        .iter()
        .map(|r| {
            let mut t = tokenize(&r.problemkey);
            t.extend(tokenize(&r.rawtext));
            t.extend(tokenize(&r.result));
            t
        })
        .collect()
}

/// Scores for [`five_records`], worked by hand from the token streams.
pub const HAND_TABLE: &[(&str, &[(u32, f64)])] = &[
    ("alpha", &[(0, 1.2201102764932181), (2, 0.8121818406777145)]),
    (
        "beta gamma",
        &[(0, 1.7857243119536503), (1, 1.3899194386855733), (2, 1.321786132867653)],
    ),
    (
        "delta omega",
        &[(4, 2.2711631022602465), (3, 0.9913395996507396), (1, 0.8928621559768252)],
    ),
    ("epsilon", &[(3, 1.5697744971504644)]),
    (
        "alpha beta gamma delta",
        &[
            (0, 3.0058345884468687),
            (1, 2.2827815946623984),
            (2, 2.1339679735453676),
            (3, 0.9913395996507396),
        ],
    ),
];
