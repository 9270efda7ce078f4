//! Strict parsers for backend responses.

use crate::dot_engine::NodeId;

use super::InvocationKind;

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let trimmed = line.trim_start();
    let head = trimmed.get(..key.len())?;
    if head.eq_ignore_ascii_case(key) {
        trimmed[key.len()..].strip_prefix(':').map(str::trim)
    } else {
        None
    }
}

/// Keywords from the first `KEYWORDS:` line, split on commas or
/// semicolons, without duplicates.
pub fn parse_keywords(response: &str) -> Result<Vec<String>, String> {
    let line = response
        .lines()
        .find_map(|l| field(l, "KEYWORDS"))
        .ok_or("response has no KEYWORDS: line")?;
    let mut out: Vec<String> = Vec::new();
    for k in line.split([',', ';']).map(str::trim).filter(|k| !k.is_empty()) {
        if !out.iter().any(|o| o.eq_ignore_ascii_case(k)) {
            out.push(k.to_string());
        }
    }
    if out.is_empty() {
        return Err("KEYWORDS: line is empty".into());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanItem {
    Critique { target: NodeId, text: String },
    /// Answers the most recent critique.
    Refine { text: String },
    /// Verifies a node, or the newest proposition/refinement when `None`.
    Accept { target: Option<NodeId> },
    Invoke(InvocationKind),
    NoTool { reason: String },
}

/// Bracket directives in `text` with their byte offsets, plus syntax
/// errors. Scripts get the intent "unspecified".
fn bracket_directives(text: &str) -> (Vec<(usize, InvocationKind)>, Vec<String>) {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    let mut offset = 0;
    while offset < text.len() {
        let rest = &text[offset..];
        let start = match (rest.find("[tool:"), rest.find("[script:")) {
            (None, None) => break,
            (Some(t), Some(s)) => t.min(s),
            (Some(t), None) => t,
            (None, Some(s)) => s,
        };
        let is_script = rest[start..].starts_with("[script:");
        let body_start = start + if is_script { "[script:".len() } else { "[tool:".len() };
        let Some(len) = rest[body_start..].find(']') else {
            errors.push(format!("unterminated directive at offset {}", offset + start));
            break;
        };
        let body = rest[body_start..body_start + len].trim();
        if is_script {
            let source = body
                .split(['\n', ';'])
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join("\n");
            if source.is_empty() {
                errors.push("empty [script:] directive".into());
            } else {
                out.push((
                    offset + start,
                    InvocationKind::GeneratedScript {
                        source,
                        intent: "unspecified".into(),
                    },
                ));
            }
        } else {
            let mut words = body.split_whitespace().map(str::to_string);
            match words.next() {
                Some(name) => out.push((
                    offset + start,
                    InvocationKind::Tool {
                        name,
                        args: words.collect(),
                    },
                )),
                None => errors.push("empty [tool:] directive".into()),
            }
        }
        offset += body_start + len + 1;
    }
    (out, errors)
}

/// Parses a planning response. Line commands (`CRITIQUE <id>: ...`,
/// `REFINE: ...`, `ACCEPT [<id>]`, `NO-TOOL: ...`) and bracket directives
/// come back in textual order. An `INTENT: ...` line names the intent of
/// the next script directive.
pub fn parse_plan(response: &str) -> (Vec<PlanItem>, Vec<String>) {
    let mut items: Vec<(usize, PlanItem)> = Vec::new();
    let mut intents: Vec<(usize, String)> = Vec::new();
    let mut errors = Vec::new();
    let mut offset = 0;
    for line in response.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let trimmed = line.trim();
        if trimmed.len() >= 8 && trimmed[..8].eq_ignore_ascii_case("CRITIQUE") {
            let parsed = trimmed[8..].split_once(':').and_then(|(id, text)| {
                let target = id.trim().parse::<NodeId>().ok()?;
                let text = text.trim();
                (!text.is_empty()).then(|| PlanItem::Critique {
                    target,
                    text: text.to_string(),
                })
            });
            match parsed {
                Some(item) => items.push((at, item)),
                None => errors.push(format!("bad critique line {trimmed:?}")),
            }
        } else if let Some(text) = field(trimmed, "REFINE") {
            if text.is_empty() {
                errors.push("empty REFINE line".into());
            } else {
                items.push((at, PlanItem::Refine { text: text.to_string() }));
            }
        } else if trimmed.len() >= 6
            && trimmed[..6].eq_ignore_ascii_case("ACCEPT")
            && trimmed[6..].chars().next().is_none_or(char::is_whitespace)
        {
            let arg = trimmed[6..].trim();
            if arg.is_empty() {
                items.push((at, PlanItem::Accept { target: None }));
            } else {
                match arg.parse::<NodeId>() {
                    Ok(id) => items.push((at, PlanItem::Accept { target: Some(id) })),
                    Err(_) => errors.push(format!("bad accept line {trimmed:?}")),
                }
            }
        } else if let Some(text) = field(trimmed, "INTENT") {
            intents.push((at, text.to_string()));
        } else if let Some(reason) = field(trimmed, "NO-TOOL") {
            if reason.is_empty() {
                errors.push("NO-TOOL needs a justification".into());
            } else {
                items.push((at, PlanItem::NoTool { reason: reason.to_string() }));
            }
        }
    }
    let (found, errs) = bracket_directives(response);
    errors.extend(errs);
    let mut intents = intents.into_iter().peekable();
    let mut pending: Option<String> = None;
    for (at, mut kind) in found {
        while let Some((_, text)) = intents.next_if(|(o, _)| *o < at) {
            pending = Some(text);
        }
        if let InvocationKind::GeneratedScript { intent, .. } = &mut kind {
            if let Some(text) = pending.take() {
                *intent = text;
            }
        }
        items.push((at, PlanItem::Invoke(kind)));
    }
    items.sort_by_key(|(o, _)| *o);
    (items.into_iter().map(|(_, i)| i).collect(), errors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictDraft {
    pub cause: String,
    pub devices: Vec<String>,
    pub confidence: f64,
    /// `tool:<n>` and `node:<n>` references.
    pub evidence: Vec<String>,
    pub remediation: Option<String>,
}

pub fn parse_verdict(response: &str) -> Result<VerdictDraft, String> {
    let get = |key: &str| response.lines().find_map(|l| field(l, key));
    let cause = get("CAUSE").filter(|c| !c.is_empty()).ok_or("response has no CAUSE: line")?;
    let devices: Vec<String> = get("DEVICES")
        .ok_or("response has no DEVICES: line")?
        .split([',', ' '])
        .map(str::trim)
        .filter(|d| !d.is_empty())
        .map(str::to_string)
        .collect();
    if devices.is_empty() {
        return Err("DEVICES: line is empty".into());
    }
    let confidence = match get("CONFIDENCE") {
        None => 0.5,
        Some(text) => {
            let value: f64 = text
                .trim_end_matches('%')
                .parse()
                .map_err(|_| format!("bad confidence {text:?}"))?;
            let value = if text.ends_with('%') { value / 100.0 } else { value };
            if value.is_nan() {
                0.5
            } else {
                value.clamp(0.0, 1.0)
            }
        }
    };
    let evidence = get("EVIDENCE")
        .map(|e| {
            e.split([',', ' '])
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();
    let remediation = get("REMEDIATION").filter(|r| !r.is_empty()).map(str::to_string);
    Ok(VerdictDraft {
        cause: cause.to_string(),
        devices,
        confidence,
        evidence,
        remediation,
    })
}

/// The first `[script: ...]` directive in a remediation field.
pub fn remediation_script(text: &str) -> Option<String> {
    let (found, _) = bracket_directives(text);
    found.into_iter().find_map(|(_, k)| match k {
        InvocationKind::GeneratedScript { source, .. } => Some(source),
        InvocationKind::Tool { .. } => None,
    })
}
