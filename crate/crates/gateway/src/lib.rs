//! HTTP gateway over the diagnosis service: REST endpoints for telemetry,
//! alerts, sessions, approvals, fault injection and benchmark runs, plus a
//! server-sent event stream of state changes.

mod api;
pub mod config;
mod events;
mod service;

pub use api::router;
pub use config::{BackendConfig, ServiceConfig};
pub use events::{EventEnvelope, EventHub, TELEMETRY_PAGE};
pub use service::{build_backend, BenchRequest, BenchBackend, FaultAccepted, Service, SessionDetail};

use std::net::SocketAddr;
use std::sync::Arc;

use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("startup: {0}")]
    Startup(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Config(_) => "config",
            GatewayError::Startup(_) => "startup",
            GatewayError::NotFound(_) => "not_found",
            GatewayError::Conflict(_) => "conflict",
            GatewayError::BadRequest(_) => "bad_request",
            GatewayError::Internal(_) => "internal",
        }
    }
}

/// A gateway bound to a socket with its monitor loop running.
pub struct RunningGateway {
    pub addr: SocketAddr,
    pub service: Arc<Service>,
    shutdown: Option<oneshot::Sender<()>>,
    server: JoinHandle<()>,
    monitor: JoinHandle<()>,
}

impl RunningGateway {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    /// Stops accepting connections and waits for the server task.
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.monitor.abort();
        let _ = self.server.await;
    }

    /// Serves until the process receives Ctrl-C.
    pub async fn run_until_ctrl_c(self) {
        let _ = tokio::signal::ctrl_c().await;
        self.shutdown().await;
    }
}

/// Builds the service, binds the configured address (port 0 picks a free
/// one) and starts serving.
pub async fn start(config: ServiceConfig) -> Result<RunningGateway, GatewayError> {
    config.validate()?;
    let addr = config.addr()?;
    let service = Arc::new(Service::new(config)?);
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| GatewayError::Startup(format!("cannot bind {addr}: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| GatewayError::Startup(e.to_string()))?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(Arc::clone(&service));
    let server = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    let monitor = tokio::spawn(service::monitor_loop(Arc::clone(&service)));
    Ok(RunningGateway {
        addr,
        service,
        shutdown: Some(tx),
        server,
        monitor,
    })
}
