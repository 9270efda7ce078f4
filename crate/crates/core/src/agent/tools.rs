use std::collections::BTreeSet;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ApprovalId, ApprovalRegistry, ApprovalStatus};
use crate::cluster_sim::script::{compile, ScriptLimits};
use crate::cluster_sim::{tool_names, CheckScope, Cluster, Dimension, TimeWindow, CAPABILITIES, TELEMETRY_TOOL};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Whitelist {
    pub tools: BTreeSet<String>,
}

impl Default for Whitelist {
    /// Every registry tool.
    fn default() -> Self {
        Self {
            tools: tool_names().into_iter().map(str::to_string).collect(),
        }
    }
}

impl Whitelist {
    pub fn of(tools: &[&str]) -> Self {
        Self {
            tools: tools.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn allows(&self, tool: &str) -> bool {
        self.tools.contains(tool)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InvocationKind {
    Tool { name: String, args: Vec<String> },
    GeneratedScript { source: String, intent: String },
}

impl InvocationKind {
    /// One-line rendering, e.g. `gpu-freq --all`.
    pub fn render(&self) -> String {
        match self {
            InvocationKind::Tool { name, args } if args.is_empty() => name.clone(),
            InvocationKind::Tool { name, args } => format!("{name} {}", args.join(" ")),
            InvocationKind::GeneratedScript { source, .. } => {
                format!("script: {}", source.lines().collect::<Vec<_>>().join("; "))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WhitelistStatus {
    Whitelisted,
    NeedsApproval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ExecutionResult {
    Succeeded { output: String, failing_devices: Vec<String> },
    Failed { error: String },
    Skipped { reason: String },
}

impl ExecutionResult {
    pub fn executed(&self) -> bool {
        !matches!(self, ExecutionResult::Skipped { .. })
    }

    pub fn summary(&self) -> String {
        match self {
            ExecutionResult::Succeeded { output, .. } => output.clone(),
            ExecutionResult::Failed { error } => format!("error: {error}"),
            ExecutionResult::Skipped { reason } => format!("skipped: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    /// Index within the session.
    pub index: usize,
    pub kind: InvocationKind,
    pub status: WhitelistStatus,
    pub approval: Option<ApprovalId>,
    pub result: Option<ExecutionResult>,
}

impl ToolInvocation {
    pub fn classify(index: usize, kind: InvocationKind, whitelist: &Whitelist) -> Self {
        let status = match &kind {
            InvocationKind::Tool { name, .. } if whitelist.allows(name) => WhitelistStatus::Whitelisted,
            _ => WhitelistStatus::NeedsApproval,
        };
        Self {
            index,
            kind,
            status,
            approval: None,
            result: None,
        }
    }

    /// Canonical identity of a diagnostic test case, or `None` for
    /// telemetry reads and scripts.
    pub fn test_case_key(&self) -> Option<String> {
        match &self.kind {
            InvocationKind::Tool { name, .. } if name == TELEMETRY_TOOL => None,
            InvocationKind::Tool { name, args } => {
                let parsed = CheckArgs::parse(args).ok()?;
                let scope = match parsed.scope {
                    CheckScope::All => "all".to_string(),
                    CheckScope::Device(d) => d,
                };
                Some(format!("{name}/{}/{scope}", parsed.dimension))
            }
            InvocationKind::GeneratedScript { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("safety violation in {session_id}: {message}")]
pub struct SafetyViolation {
    pub session_id: String,
    pub invocation: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOutcome {
    Executed,
    Skipped,
    SafetyViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub sequence: u64,
    pub session_id: String,
    pub invocation: usize,
    pub rendered: String,
    pub script: bool,
    pub approval: Option<ApprovalId>,
    /// Approval status observed at the moment of the decision to execute.
    pub approval_status: Option<ApprovalStatus>,
    pub outcome: AuditOutcome,
}

/// Append-only record of every execution decision.
#[derive(Debug, Default)]
pub struct ExecutionAudit {
    entries: Mutex<Vec<AuditEntry>>,
}

impl ExecutionAudit {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, mut entry: AuditEntry) -> AuditEntry {
        let mut entries = self.entries.lock().expect("audit log");
        entry.sequence = entries.len() as u64 + 1;
        entries.push(entry.clone());
        entry
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.entries.lock().expect("audit log").clone()
    }

    pub fn for_session(&self, session_id: &str) -> Vec<AuditEntry> {
        self.entries()
            .into_iter()
            .filter(|e| e.session_id == session_id)
            .collect()
    }

    /// Every executed script must carry an approval that the registry
    /// records as Approved.
    pub fn verify_scripts_approved(&self, approvals: &ApprovalRegistry) -> Result<usize, String> {
        let mut checked = 0;
        for e in self.entries() {
            if !(e.script && e.outcome == AuditOutcome::Executed) {
                continue;
            }
            let approved = e.approval_status == Some(ApprovalStatus::Approved)
                && e.approval
                    .and_then(|id| approvals.get(id))
                    .is_some_and(|r| r.status == ApprovalStatus::Approved);
            if !approved {
                return Err(format!(
                    "audit entry {} executed a script without approval",
                    e.sequence
                ));
            }
            checked += 1;
        }
        Ok(checked)
    }
}

/// Parsed arguments of a check tool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckArgs {
    pub scope: CheckScope,
    pub dimension: Dimension,
}

impl CheckArgs {
    /// `--all` | `--device <id>`, optionally `--dimension <d>` (default
    /// performance).
    pub fn parse(args: &[String]) -> Result<Self, String> {
        let mut scope = None;
        let mut dimension = Dimension::Performance;
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            match arg.as_str() {
                "--all" => scope = Some(CheckScope::All),
                "--device" => {
                    let id = it.next().ok_or("--device needs an id")?;
                    scope = Some(CheckScope::Device(id.clone()));
                }
                "--dimension" => {
                    let d = it.next().ok_or("--dimension needs a value")?;
                    dimension = Dimension::parse(d).ok_or_else(|| format!("unknown dimension {d}"))?;
                }
                other => return Err(format!("unknown argument {other}")),
            }
        }
        Ok(Self {
            scope: scope.unwrap_or(CheckScope::All),
            dimension,
        })
    }
}

/// `--window <seconds>` (default 60), `--device <id>`, `--metric <name>`.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryArgs {
    pub window_s: f64,
    pub device: Option<String>,
    pub metric: Option<String>,
}

impl TelemetryArgs {
    pub fn parse(args: &[String]) -> Result<Self, String> {
        let mut out = Self {
            window_s: 60.0,
            device: None,
            metric: None,
        };
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let mut value = || it.next().cloned().ok_or(format!("{arg} needs a value"));
            match arg.as_str() {
                "--window" => {
                    let v = value()?;
                    out.window_s = v
                        .parse::<f64>()
                        .ok()
                        .filter(|w| *w > 0.0)
                        .ok_or(format!("bad window {v}"))?;
                }
                "--device" => out.device = Some(value()?),
                "--metric" => out.metric = Some(value()?),
                other => return Err(format!("unknown argument {other}")),
            }
        }
        Ok(out)
    }
}

/// Syntax check for a directive before it is planned.
pub fn validate_invocation(kind: &InvocationKind) -> Result<(), String> {
    match kind {
        InvocationKind::Tool { name, args } if name == TELEMETRY_TOOL => TelemetryArgs::parse(args).map(|_| ()),
        InvocationKind::Tool { name, args } if CAPABILITIES.contains(&name.as_str()) => {
            CheckArgs::parse(args).map(|_| ())
        }
        InvocationKind::Tool { name, .. } => Err(format!("unknown tool {name}")),
        InvocationKind::GeneratedScript { source, .. } => compile(source).map(|_| ()).map_err(|e| e.to_string()),
    }
}

const TELEMETRY_LINE_LIMIT: usize = 40;

fn run_tool(cluster: &mut Cluster, name: &str, args: &[String]) -> ExecutionResult {
    if name == TELEMETRY_TOOL {
        let parsed = match TelemetryArgs::parse(args) {
            Ok(p) => p,
            Err(error) => return ExecutionResult::Failed { error },
        };
        let end = cluster.now();
        let window = TimeWindow::new((end - parsed.window_s).max(0.0), end);
        return match cluster.sample_telemetry(window) {
            Ok(samples) => {
                let mut latest = std::collections::BTreeMap::new();
                for s in samples {
                    if parsed.device.as_ref().is_some_and(|d| *d != s.device)
                        || parsed.metric.as_ref().is_some_and(|m| *m != s.metric)
                    {
                        continue;
                    }
                    latest.insert((s.device.clone(), s.metric.clone()), s);
                }
                let lines: Vec<String> = latest
                    .values()
                    .take(TELEMETRY_LINE_LIMIT)
                    .map(|s| s.to_line())
                    .collect();
                ExecutionResult::Succeeded {
                    output: lines.join("\n"),
                    failing_devices: Vec::new(),
                }
            }
            Err(e) => ExecutionResult::Failed { error: e.to_string() },
        };
    }
    let parsed = match CheckArgs::parse(args) {
        Ok(p) => p,
        Err(error) => return ExecutionResult::Failed { error },
    };
    match cluster.run_check(name, parsed.dimension, &parsed.scope) {
        Ok(result) => {
            let status = if result.passed { "passed" } else { "FAILED" };
            let mut output = format!("{name} {} {status}", result.dimension);
            if !result.evidence.is_empty() {
                output.push_str(": ");
                output.push_str(&result.evidence);
            }
            ExecutionResult::Succeeded {
                output,
                failing_devices: result.failing_devices,
            }
        }
        Err(e) => ExecutionResult::Failed { error: e.to_string() },
    }
}

/// Executes one invocation after re-checking its authorization. A script or
/// non-whitelisted tool runs only with an Approved request; a Rejected one
/// is skipped; anything else is a safety violation.
pub fn execute_invocation(
    session_id: &str,
    invocation: &ToolInvocation,
    whitelist: &Whitelist,
    approvals: &ApprovalRegistry,
    audit: &ExecutionAudit,
    cluster: &mut Cluster,
    limits: ScriptLimits,
) -> Result<ExecutionResult, SafetyViolation> {
    let script = matches!(invocation.kind, InvocationKind::GeneratedScript { .. });
    let approval_status = invocation.approval.and_then(|id| approvals.get(id)).map(|r| r.status);
    let whitelisted = match &invocation.kind {
        InvocationKind::Tool { name, .. } => {
            invocation.status == WhitelistStatus::Whitelisted && whitelist.allows(name)
        }
        InvocationKind::GeneratedScript { .. } => false,
    };
    let entry = |outcome| AuditEntry {
        sequence: 0,
        session_id: session_id.to_string(),
        invocation: invocation.index,
        rendered: invocation.kind.render(),
        script,
        approval: invocation.approval,
        approval_status,
        outcome,
    };
    if !whitelisted && approval_status != Some(ApprovalStatus::Approved) {
        if approval_status == Some(ApprovalStatus::Rejected) {
            audit.record(entry(AuditOutcome::Skipped));
            let decider = invocation
                .approval
                .and_then(|id| approvals.get(id))
                .and_then(|r| r.decider)
                .unwrap_or_default();
            return Ok(ExecutionResult::Skipped {
                reason: format!("rejected by {decider}"),
            });
        }
        audit.record(entry(AuditOutcome::SafetyViolation));
        return Err(SafetyViolation {
            session_id: session_id.to_string(),
            invocation: invocation.index,
            message: format!(
                "{} is neither whitelisted nor approved",
                invocation.kind.render()
            ),
        });
    }
    audit.record(entry(AuditOutcome::Executed));
    Ok(match &invocation.kind {
        InvocationKind::Tool { name, args } => run_tool(cluster, name, args),
        InvocationKind::GeneratedScript { source, .. } => match compile(source) {
            Ok(program) => match program.run(cluster, "", limits) {
                Ok(out) => ExecutionResult::Succeeded {
                    output: out.text(),
                    failing_devices: Vec::new(),
                },
                Err(e) => ExecutionResult::Failed { error: e.to_string() },
            },
            Err(e) => ExecutionResult::Failed { error: e.to_string() },
        },
    })
}
