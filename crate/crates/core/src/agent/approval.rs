use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{AgentEvent, EventSink};

pub type ApprovalId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalStatus {
    Pending,
    Approved,
    Rejected,
}

impl ApprovalStatus {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "pending" => Some(Self::Pending),
            "approved" => Some(Self::Approved),
            "rejected" => Some(Self::Rejected),
            _ => None,
        }
    }
}

impl fmt::Display for ApprovalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pending => "pending",
            Self::Approved => "approved",
            Self::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApprovalRequest {
    pub id: ApprovalId,
    pub session_id: String,
    pub source: String,
    pub intent: String,
    pub status: ApprovalStatus,
    pub decider: Option<String>,
    /// Simulated time.
    pub requested_at_s: f64,
    pub decided_at_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApprovalError {
    #[error("approval request {0} not found")]
    NotFound(ApprovalId),
    #[error("approval request {id} already {status}")]
    Conflict { id: ApprovalId, status: ApprovalStatus },
}

#[derive(Default)]
struct State {
    next: ApprovalId,
    requests: BTreeMap<ApprovalId, ApprovalRequest>,
}

/// Pending approvals. Each request moves out of Pending exactly once.
#[derive(Default)]
pub struct ApprovalRegistry {
    state: Mutex<State>,
    changed: Condvar,
    sink: Option<Arc<dyn EventSink>>,
}

impl fmt::Debug for ApprovalRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ApprovalRegistry")
            .field("requests", &self.state.lock().map(|s| s.requests.len()).unwrap_or(0))
            .finish()
    }
}

impl ApprovalRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sink(sink: Arc<dyn EventSink>) -> Self {
        Self {
            sink: Some(sink),
            ..Self::default()
        }
    }

    fn emit(&self, event: AgentEvent) {
        if let Some(sink) = &self.sink {
            sink.emit(event);
        }
    }

    pub fn submit(
        &self,
        session_id: &str,
        source: &str,
        intent: &str,
        at_s: f64,
    ) -> ApprovalRequest {
        let request = {
            let mut state = self.state.lock().expect("approval state");
            state.next += 1;
            let request = ApprovalRequest {
                id: state.next,
                session_id: session_id.to_string(),
                source: source.to_string(),
                intent: intent.to_string(),
                status: ApprovalStatus::Pending,
                decider: None,
                requested_at_s: at_s,
                decided_at_s: None,
            };
            state.requests.insert(request.id, request.clone());
            request
        };
        self.emit(AgentEvent::ApprovalRequested(request.clone()));
        request
    }

    pub fn decide(
        &self,
        id: ApprovalId,
        decision: Decision,
        decider: &str,
        at_s: f64,
    ) -> Result<ApprovalRequest, ApprovalError> {
        let decided = {
            let mut state = self.state.lock().expect("approval state");
            let request = state.requests.get_mut(&id).ok_or(ApprovalError::NotFound(id))?;
            if request.status != ApprovalStatus::Pending {
                return Err(ApprovalError::Conflict {
                    id,
                    status: request.status,
                });
            }
            request.status = match decision {
                Decision::Approve => ApprovalStatus::Approved,
                Decision::Reject => ApprovalStatus::Rejected,
            };
            request.decider = Some(decider.to_string());
            request.decided_at_s = Some(at_s);
            request.clone()
        };
        self.changed.notify_all();
        self.emit(AgentEvent::ApprovalDecided(decided.clone()));
        Ok(decided)
    }

    /// Blocks until the request is decided. After `timeout` of wall-clock
    /// waiting it is rejected with decider `timeout`, stamped `timeout_at_s`.
    pub fn wait(
        &self,
        id: ApprovalId,
        timeout: Duration,
        timeout_at_s: f64,
    ) -> Result<ApprovalRequest, ApprovalError> {
        let deadline = Instant::now() + timeout;
        let mut state = self.state.lock().expect("approval state");
        loop {
            let request = state.requests.get(&id).ok_or(ApprovalError::NotFound(id))?;
            if request.status != ApprovalStatus::Pending {
                return Ok(request.clone());
            }
            let now = Instant::now();
            if now >= deadline {
                drop(state);
                return match self.decide(id, Decision::Reject, "timeout", timeout_at_s) {
                    Ok(r) => Ok(r),
                    // decided in the gap between unlock and decide
                    Err(ApprovalError::Conflict { .. }) => Ok(self.get(id).expect("exists")),
                    Err(e) => Err(e),
                };
            }
            state = self
                .changed
                .wait_timeout(state, deadline - now)
                .expect("approval state")
                .0;
        }
    }

    pub fn get(&self, id: ApprovalId) -> Option<ApprovalRequest> {
        self.state.lock().expect("approval state").requests.get(&id).cloned()
    }

    pub fn list(&self, status: Option<ApprovalStatus>) -> Vec<ApprovalRequest> {
        self.state
            .lock()
            .expect("approval state")
            .requests
            .values()
            .filter(|r| status.is_none_or(|s| r.status == s))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_transition() {
        let reg = ApprovalRegistry::new();
        let r = reg.submit("session-0001", "set_frequency gpu-3 1410", "restore clock", 10.0);
        assert_eq!(reg.list(Some(ApprovalStatus::Pending)).len(), 1);
        let d = reg.decide(r.id, Decision::Approve, "alice", 12.0).unwrap();
        assert_eq!(d.status, ApprovalStatus::Approved);
        assert_eq!(
            reg.decide(r.id, Decision::Reject, "bob", 13.0),
            Err(ApprovalError::Conflict {
                id: r.id,
                status: ApprovalStatus::Approved
            })
        );
        assert_eq!(reg.decide(99, Decision::Approve, "x", 0.0), Err(ApprovalError::NotFound(99)));
        assert!(reg.list(Some(ApprovalStatus::Pending)).is_empty());
    }

    #[test]
    fn wait_unblocks_on_decision_or_times_out() {
        let reg = Arc::new(ApprovalRegistry::new());
        let r = reg.submit("s", "wait 1", "pause", 0.0);
        let other = Arc::clone(&reg);
        let t = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            other.decide(r.id, Decision::Reject, "op", 5.0).unwrap();
        });
        let decided = reg.wait(r.id, Duration::from_secs(10), 1800.0).unwrap();
        t.join().unwrap();
        assert_eq!(decided.decider.as_deref(), Some("op"));

        let r = reg.submit("s", "wait 1", "pause", 0.0);
        let timed_out = reg.wait(r.id, Duration::from_millis(10), 1800.0).unwrap();
        assert_eq!(timed_out.status, ApprovalStatus::Rejected);
        assert_eq!(timed_out.decider.as_deref(), Some("timeout"));
        assert_eq!(timed_out.decided_at_s, Some(1800.0));
    }
}
