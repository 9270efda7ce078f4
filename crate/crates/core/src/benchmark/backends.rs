use std::collections::BTreeMap;

use super::items::{BenchmarkItem, Expected};
use crate::agent::{Backend, BackendError, CompletionRequest};

/// Always answers with an empty string.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptyBackend;

impl Backend for EmptyBackend {
    fn name(&self) -> String {
        "empty".into()
    }

    fn complete(&self, _: &CompletionRequest) -> Result<String, BackendError> {
        Ok(String::new())
    }
}

/// Answers every item from its own expected payload.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    answers: BTreeMap<String, String>,
}

impl OracleBackend {
    pub fn new(items: &[BenchmarkItem]) -> Self {
        let answers = items
            .iter()
            .map(|item| {
                let answer = match &item.expected {
                    Expected::A(a) => format!(
                        "IP: {}\nPORT: {}\nCONTINUE: {}",
                        a.ip,
                        a.port,
                        if a.proceed { "yes" } else { "no" }
                    ),
                    Expected::B(b) => format!("```\n{}\n```", b.canonical),
                    Expected::C(c) => c.answer.clone(),
                };
                (item.id.clone(), answer)
            })
            .collect();
        Self { answers }
    }
}

impl Backend for OracleBackend {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let prompt = request.last_user();
        let id = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Item: "))
            .map(str::trim)
            .unwrap_or_default();
        self.answers.get(id).cloned().ok_or_else(|| BackendError::Unmatched {
            excerpt: prompt.chars().take(80).collect(),
        })
    }
}
