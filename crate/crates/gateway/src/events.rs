use std::sync::Mutex;

use clusterdiag_core::agent::{AgentEvent, EventSink};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;

/// Event kind for a monitor cycle's telemetry window.
pub const TELEMETRY_PAGE: &str = "TelemetryPage";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub seq: u64,
    pub kind: String,
    pub payload: Value,
}

/// Fan-out of state changes. Sequence numbers are assigned and sent under
/// one lock, so every subscriber sees a gapless run from the point it
/// subscribed until it falls behind.
pub struct EventHub {
    seq: Mutex<u64>,
    tx: broadcast::Sender<EventEnvelope>,
}

impl EventHub {
    pub fn new(capacity: usize) -> Self {
        let (tx, _) = broadcast::channel(capacity.max(1));
        Self {
            seq: Mutex::new(0),
            tx,
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<EventEnvelope> {
        self.tx.subscribe()
    }

    pub fn publish(&self, kind: &str, payload: Value) -> u64 {
        let mut seq = self.seq.lock().expect("event sequence");
        *seq += 1;
        let envelope = EventEnvelope {
            seq: *seq,
            kind: kind.to_string(),
            payload,
        };
        // no subscribers is not an error
        let _ = self.tx.send(envelope);
        *seq
    }

    pub fn publish_agent(&self, event: &AgentEvent) -> u64 {
        let value = serde_json::to_value(event).expect("agent events serialize");
        let kind = value["kind"].as_str().unwrap_or("Unknown").to_string();
        self.publish(&kind, value.get("payload").cloned().unwrap_or(Value::Null))
    }
}

impl EventSink for EventHub {
    fn emit(&self, event: AgentEvent) {
        self.publish_agent(&event);
    }
}
