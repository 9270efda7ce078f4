//! The diagnosis agent: alert monitoring, the three-round self-play loop
//! over a pluggable language-model backend, and the safety gate.

mod approval;
mod backend;
mod drill;
mod monitor;
pub mod parse;
mod session;
mod store;
mod tools;

pub use approval::{ApprovalError, ApprovalId, ApprovalRegistry, ApprovalRequest, ApprovalStatus, Decision};
pub use backend::{
    Backend, BackendError, CompletionRequest, Fixture, FixtureEntry, RemoteBackend, RemoteConfig,
    ScriptedBackend, Turn, TurnRole,
};
pub use drill::{observe_drill, prepare_drill, run_drill, DrillConfig, DrillError, DrillReport};
pub use monitor::{Alert, AlertId, AlertSource, Monitor, MonitorConfig};
pub use session::{
    ApprovalPolicy, AttributionVerdict, Exchange, HitRecord, Orchestrator, Remediation,
    RemediationState, RoundRecord, SelfPlaySession, SessionConfig, SessionStatus, SessionSummary,
    SYSTEM_DIRECTIVE,
};
pub use store::{SessionStore, AUDIT_FILE, DOT_FILE, SESSION_FILE, TRANSCRIPT_FILE, VERDICT_FILE};
pub use tools::{
    execute_invocation, validate_invocation, AuditEntry, AuditOutcome, CheckArgs, ExecutionAudit,
    ExecutionResult, InvocationKind, SafetyViolation, TelemetryArgs, ToolInvocation, Whitelist,
    WhitelistStatus,
};

use serde::{Deserialize, Serialize};

/// Scripted responses that walk the throttling drill to a verdict.
pub fn drill_backend_fixture() -> &'static str {
    include_str!("../../data/fixtures/drill_backend.json")
}

/// State changes other components may observe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum AgentEvent {
    AlertRaised(Alert),
    SessionUpdated(SessionSummary),
    ApprovalRequested(ApprovalRequest),
    ApprovalDecided(ApprovalRequest),
    VerdictIssued {
        session_id: String,
        verdict: AttributionVerdict,
    },
}

pub trait EventSink: Send + Sync {
    fn emit(&self, event: AgentEvent);
}
