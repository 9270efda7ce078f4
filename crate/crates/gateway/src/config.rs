use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clusterdiag_core::agent::{MonitorConfig, RemoteConfig};
use clusterdiag_core::knowledge_base::Visibility;
use serde::{Deserialize, Serialize};

use crate::GatewayError;

pub const ENV_PORT: &str = "CLUSTERDIAG_PORT";
pub const ENV_BACKEND_ENDPOINT: &str = "CLUSTERDIAG_BACKEND_ENDPOINT";
pub const ENV_BACKEND_TOKEN: &str = "CLUSTERDIAG_BACKEND_TOKEN";
pub const ENV_BACKEND_MODEL: &str = "CLUSTERDIAG_BACKEND_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Fixture-driven responses; the bundled drill fixture when no path is given.
    Scripted { fixture: Option<PathBuf> },
    Remote(RemoteConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Scripted { fixture: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub backend: BackendConfig,
    /// Cluster topology document; the bundled 32-GPU cluster when unset.
    pub topology: Option<PathBuf>,
    /// Knowledge corpus (JSONL); the bundled corpus when unset.
    pub corpus: Option<PathBuf>,
    /// Holds `sessions/` and `reports/`.
    pub data_dir: PathBuf,
    /// Tools that run without approval; every registry tool when unset.
    pub whitelist: Option<Vec<String>>,
    /// Wall-clock seconds a session waits for an operator decision.
    pub approval_timeout_s: f64,
    pub seed: u64,
    pub split_seed: u64,
    pub eval_fraction: f64,
    pub visibility: Visibility,
    pub monitor_interval_ms: u64,
    /// Iterations of the background workload per server and cycle.
    pub workload_iterations: usize,
    /// Start a diagnosis session when the monitor raises an alert.
    pub auto_diagnose: bool,
    pub event_buffer: usize,
    pub monitor: MonitorConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            backend: BackendConfig::default(),
            topology: None,
            corpus: None,
            data_dir: PathBuf::from("clusterdiag-data"),
            whitelist: None,
            approval_timeout_s: 1800.0,
            seed: 0,
            split_seed: 0,
            eval_fraction: clusterdiag_core::knowledge_base::DEFAULT_EVAL_FRACTION,
            visibility: Visibility::Full,
            monitor_interval_ms: 1000,
            workload_iterations: 12,
            auto_diagnose: true,
            event_buffer: 1024,
            monitor: MonitorConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))
    }

    /// Applies `CLUSTERDIAG_*` overrides from `lookup` (normally the
    /// process environment). A backend endpoint switches to the remote
    /// backend.
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), GatewayError> {
        if let Some(port) = lookup(ENV_PORT) {
            self.port = port
                .parse()
                .map_err(|_| GatewayError::Config(format!("{ENV_PORT}={port:?} is not a port")))?;
        }
        if let Some(endpoint) = lookup(ENV_BACKEND_ENDPOINT) {
            let mut remote = match &self.backend {
                BackendConfig::Remote(r) => r.clone(),
                BackendConfig::Scripted { .. } => RemoteConfig {
                    endpoint: String::new(),
                    model: "default".into(),
                    token: None,
                    timeout_s: 60,
                },
            };
            remote.endpoint = endpoint;
            self.backend = BackendConfig::Remote(remote);
        }
        if let BackendConfig::Remote(remote) = &mut self.backend {
            if let Some(token) = lookup(ENV_BACKEND_TOKEN) {
                remote.token = Some(token);
            }
            if let Some(model) = lookup(ENV_BACKEND_MODEL) {
                remote.model = model;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let must_exist = |what: &str, path: &Option<PathBuf>| match path {
            Some(p) if !p.is_file() => Err(GatewayError::Config(format!("{what} {} does not exist", p.display()))),
            _ => Ok(()),
        };
        must_exist("topology", &self.topology)?;
        must_exist("corpus", &self.corpus)?;
        if let BackendConfig::Scripted { fixture } = &self.backend {
            must_exist("backend fixture", fixture)?;
        }
        if let BackendConfig::Remote(r) = &self.backend {
            if !(r.endpoint.starts_with("http://") || r.endpoint.starts_with("https://")) {
                return Err(GatewayError::Config(format!("backend endpoint {:?} is not an http url", r.endpoint)));
            }
        }
        if self.approval_timeout_s.is_nan() || self.approval_timeout_s <= 0.0 {
            return Err(GatewayError::Config("approval_timeout_s must be positive".into()));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(GatewayError::Config("eval_fraction must lie in (0, 1)".into()));
        }
        if self.monitor_interval_ms == 0 || self.workload_iterations == 0 || self.event_buffer == 0 {
            return Err(GatewayError::Config(
                "monitor_interval_ms, workload_iterations and event_buffer must be positive".into(),
            ));
        }
        self.addr()?;
        Ok(())
    }

    pub fn addr(&self) -> Result<SocketAddr, GatewayError> {
        format!("{}:{}", self.host, self.port)
            .parse()
            .map_err(|_| GatewayError::Config(format!("invalid listen address {}:{}", self.host, self.port)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_switch_to_remote() {
        let mut c = ServiceConfig::from_toml("port = 9000\nseed = 3\n").unwrap();
        assert_eq!(c.port, 9000);
        let env = |k: &str| match k {
            ENV_PORT => Some("9100".to_string()),
            ENV_BACKEND_ENDPOINT => Some("http://llm:8000/v1/chat/completions".to_string()),
            ENV_BACKEND_TOKEN => Some("t".to_string()),
            _ => None,
        };
        c.apply_overrides(env).unwrap();
        assert_eq!(c.port, 9100);
        match &c.backend {
            BackendConfig::Remote(r) => assert_eq!(r.token.as_deref(), Some("t")),
            other => panic!("{other:?}"),
        }
        c.validate().unwrap();
    }

    #[test]
    fn example_config_is_valid() {
        let c = ServiceConfig::from_toml(include_str!("../clusterdiag.example.toml")).unwrap();
        c.validate().unwrap();
        assert_eq!(c.backend, BackendConfig::Scripted { fixture: None });
        assert_eq!(c.whitelist.as_ref().map(Vec::len), Some(6));
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(ServiceConfig::from_toml("port = 70000").is_err());
        assert!(ServiceConfig::from_toml("colour = 1").is_err());
        let missing = ServiceConfig {
            corpus: Some("/no/such/corpus.jsonl".into()),
            ..ServiceConfig::default()
        };
        assert!(missing.validate().is_err());
        let mut c = ServiceConfig::default();
        assert!(c.apply_overrides(|k| (k == ENV_PORT).then(|| "http".to_string())).is_err());
    }
}
