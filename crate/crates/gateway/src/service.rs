use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use clusterdiag_core::agent::{
    drill_backend_fixture, AgentEvent, Alert, AlertSource, ApprovalError, ApprovalPolicy, ApprovalRegistry,
    ApprovalRequest, ApprovalStatus, Backend, Decision, DrillConfig, EventSink, Monitor, Orchestrator,
    RemoteBackend, ScriptedBackend, SelfPlaySession, SessionConfig, SessionStore, SessionSummary, Whitelist,
};
use clusterdiag_core::benchmark::{
    bundled_items, competent_fixture, load_items, run_benchmark, BenchError, BenchmarkItem, EmptyBackend,
    OracleBackend, RunConfig, ScoreReport,
};
use clusterdiag_core::cluster_sim::{
    tool_names, Cluster, ClusterConfig, ClusterTopology, FaultId, FaultSpec, JobSpec, SimError, TelemetrySample,
    TimeWindow,
};
use clusterdiag_core::knowledge_base::{bundled_corpus, ingest, split_corpus, KnowledgeBase, Visibility};
use clusterdiag_core::perf_model::{calibrate_mix_for_ratio, ResourceKind};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{BackendConfig, ServiceConfig};
use crate::events::{EventHub, TELEMETRY_PAGE};
use crate::GatewayError;

pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn Backend>, GatewayError> {
    match config {
        BackendConfig::Scripted { fixture: None } => ScriptedBackend::from_json(drill_backend_fixture())
            .map(|b| Arc::new(b) as Arc<dyn Backend>)
            .map_err(|e| GatewayError::Config(e.to_string())),
        BackendConfig::Scripted { fixture: Some(path) } => ScriptedBackend::load(path)
            .map(|b| Arc::new(b) as Arc<dyn Backend>)
            .map_err(|e| GatewayError::Config(format!("backend fixture {}: {e}", path.display()))),
        BackendConfig::Remote(remote) => Ok(Arc::new(RemoteBackend::new(remote.clone()))),
    }
}

/// Keeps the session index current before the event goes out, so a client
/// reacting to an event always finds the state it announces.
struct IndexingSink {
    hub: Arc<EventHub>,
    sessions: Arc<RwLock<BTreeMap<String, SessionSummary>>>,
}

impl EventSink for IndexingSink {
    fn emit(&self, event: AgentEvent) {
        if let AgentEvent::SessionUpdated(summary) = &event {
            self.sessions
                .write()
                .expect("session index")
                .insert(summary.id.clone(), summary.clone());
        }
        self.hub.publish_agent(&event);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultAccepted {
    pub id: FaultId,
    pub fault: FaultSpec,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionDetail {
    pub summary: SessionSummary,
    /// Present once the session has been persisted.
    pub session: Option<SelfPlaySession>,
    pub dot_xml: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchBackend {
    Oracle,
    Empty,
    /// The bundled fixture of a capable but imperfect model.
    Competent,
    /// The backend the service runs sessions with.
    Configured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRequest {
    pub backend: BenchBackend,
    #[serde(default = "fair_eval")]
    pub visibility: Visibility,
    #[serde(default)]
    pub rag: bool,
    #[serde(default)]
    pub k: Option<usize>,
    /// Item file on the server; the bundled items when unset.
    #[serde(default)]
    pub items: Option<PathBuf>,
}

fn fair_eval() -> Visibility {
    Visibility::FairEval
}

pub struct Service {
    config: ServiceConfig,
    cluster: Mutex<Cluster>,
    kb: RwLock<KnowledgeBase>,
    monitor: Mutex<Monitor>,
    alerts: RwLock<Vec<Alert>>,
    sessions: Arc<RwLock<BTreeMap<String, SessionSummary>>>,
    orchestrator: Orchestrator,
    backend: Arc<dyn Backend>,
    hub: Arc<EventHub>,
    workload: Vec<JobSpec>,
    diagnosing: AtomicBool,
    reports_dir: PathBuf,
    items: Vec<BenchmarkItem>,
}

fn io_err(what: &str, path: &std::path::Path, e: std::io::Error) -> GatewayError {
    GatewayError::Startup(format!("{what} {}: {e}", path.display()))
}

fn whitelist_from(names: &Option<Vec<String>>) -> Result<Whitelist, GatewayError> {
    let Some(names) = names else {
        return Ok(Whitelist::default());
    };
    let known = tool_names();
    let mut tools = BTreeSet::new();
    for name in names {
        if !known.contains(&name.as_str()) {
            return Err(GatewayError::Config(format!(
                "whitelist names unknown tool {name:?}; registry: {}",
                known.join(", ")
            )));
        }
        tools.insert(name.clone());
    }
    Ok(Whitelist { tools })
}

/// One job per server on a mix that runs at a third of nominal speed on a
/// GPU throttled like the drill fault, and at full speed otherwise.
fn background_workload(cluster: &Cluster, iterations: usize) -> Result<Vec<JobSpec>, GatewayError> {
    let drill = DrillConfig::default();
    let topology = cluster.topology();
    let (_, gpu) = topology
        .gpus()
        .next()
        .ok_or_else(|| GatewayError::Config("topology has no GPUs".into()))?;
    let base = topology.nominal_profile(&gpu.id).expect("gpu from topology");
    let internal = |e: clusterdiag_core::perf_model::PerfError| GatewayError::Internal(e.to_string());
    let degraded = base
        .scaled(ResourceKind::Compute, drill.throttle_mhz / gpu.nominal_mhz)
        .map_err(internal)?;
    let mix = calibrate_mix_for_ratio(&base, &degraded, drill.target_ratio, &cluster.config().rules).map_err(internal)?;
    Ok(topology
        .servers
        .iter()
        .filter(|s| !s.gpus.is_empty())
        .map(|s| JobSpec {
            id: format!("workload-{}", s.id),
            mix: mix.clone(),
            gpus: s.gpus.iter().map(|g| g.id.clone()).collect(),
            iterations,
        })
        .collect())
}

impl Service {
    pub fn new(config: ServiceConfig) -> Result<Self, GatewayError> {
        let topology = match &config.topology {
            Some(path) => ClusterTopology::load(path).map_err(|e| GatewayError::Config(e.to_string()))?,
            None => ClusterTopology::bundled(),
        };
        let cluster = Cluster::new(topology, ClusterConfig::with_seed(config.seed))
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let corpus = match &config.corpus {
            Some(path) => ingest(path).map_err(|e| GatewayError::Config(e.to_string()))?.corpus,
            None => bundled_corpus(),
        };
        let corpus = split_corpus(&corpus, config.eval_fraction, config.split_seed)
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let backend = build_backend(&config.backend)?;

        let sessions_dir = config.data_dir.join("sessions");
        let reports_dir = config.data_dir.join("reports");
        std::fs::create_dir_all(&reports_dir).map_err(|e| io_err("cannot create", &reports_dir, e))?;
        let store = SessionStore::open(&sessions_dir).map_err(|e| io_err("cannot open", &sessions_dir, e))?;
        let mut index = BTreeMap::new();
        for id in store.list().map_err(|e| io_err("cannot list", &sessions_dir, e))? {
            if let Ok(session) = store.load(&id) {
                index.insert(id, session.summary());
            }
        }

        let hub = Arc::new(EventHub::new(config.event_buffer));
        let sessions = Arc::new(RwLock::new(index));
        let sink: Arc<dyn EventSink> = Arc::new(IndexingSink {
            hub: Arc::clone(&hub),
            sessions: Arc::clone(&sessions),
        });
        let session_config = SessionConfig {
            whitelist: whitelist_from(&config.whitelist)?,
            visibility: config.visibility,
            approval: ApprovalPolicy::Interactive {
                wait_ms: (config.approval_timeout_s * 1000.0) as u64,
            },
            approval_timeout_sim_s: config.approval_timeout_s,
            ..SessionConfig::default()
        };
        let orchestrator = Orchestrator::new(Arc::clone(&backend), session_config)
            .with_approvals(Arc::new(ApprovalRegistry::with_sink(Arc::clone(&sink))))
            .with_store(store)
            .with_sink(sink);
        let workload = background_workload(&cluster, config.workload_iterations)?;
        Ok(Self {
            monitor: Mutex::new(Monitor::new(config.monitor)),
            cluster: Mutex::new(cluster),
            kb: RwLock::new(KnowledgeBase::new(corpus)),
            alerts: RwLock::new(Vec::new()),
            sessions,
            orchestrator,
            backend,
            hub,
            workload,
            diagnosing: AtomicBool::new(false),
            reports_dir,
            items: bundled_items(),
            config,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn hub(&self) -> &EventHub {
        &self.hub
    }

    pub fn now(&self) -> f64 {
        self.cluster.lock().expect("cluster").now()
    }

    pub fn is_diagnosing(&self) -> bool {
        self.diagnosing.load(Ordering::SeqCst)
    }

    /// The last `window_s` simulated seconds of telemetry, optionally for
    /// one device.
    pub fn telemetry(&self, window_s: f64, device: Option<&str>) -> Result<Vec<TelemetrySample>, GatewayError> {
        if !(window_s.is_finite() && window_s > 0.0) {
            return Err(GatewayError::BadRequest(format!("window must be a positive number of seconds, got {window_s}")));
        }
        let cluster = self.cluster.lock().expect("cluster");
        if let Some(d) = device {
            if !cluster.topology().contains(d) {
                return Err(GatewayError::NotFound(format!("device {d} not found")));
            }
        }
        let end = cluster.now();
        let start = (end - window_s).max(0.0);
        if start >= end {
            return Ok(Vec::new());
        }
        let samples = cluster
            .sample_telemetry(TimeWindow::new(start, end))
            .map_err(|e| GatewayError::Internal(e.to_string()))?;
        Ok(match device {
            Some(d) => samples.into_iter().filter(|s| s.device == d).collect(),
            None => samples,
        })
    }

    pub fn alerts(&self) -> Vec<Alert> {
        self.alerts.read().expect("alerts").clone()
    }

    pub fn sessions(&self) -> Vec<SessionSummary> {
        self.sessions.read().expect("session index").values().cloned().collect()
    }

    pub fn session(&self, id: &str) -> Result<SessionDetail, GatewayError> {
        let summary = self
            .sessions
            .read()
            .expect("session index")
            .get(id)
            .cloned()
            .ok_or_else(|| GatewayError::NotFound(format!("session {id} not found")))?;
        let session = self
            .orchestrator
            .store()
            .filter(|store| store.dir(id).join(clusterdiag_core::agent::SESSION_FILE).is_file())
            .and_then(|store| store.load(id).ok());
        let dot_xml = session.as_ref().map(SelfPlaySession::dot_xml);
        Ok(SessionDetail {
            summary,
            session,
            dot_xml,
        })
    }

    pub fn approvals(&self, status: Option<ApprovalStatus>) -> Vec<ApprovalRequest> {
        self.orchestrator.approvals().list(status)
    }

    pub fn decide(&self, id: u64, decision: Decision, decider: &str) -> Result<ApprovalRequest, GatewayError> {
        if decider.trim().is_empty() {
            return Err(GatewayError::BadRequest("decider must not be empty".into()));
        }
        let now = self.now();
        self.orchestrator
            .approvals()
            .decide(id, decision, decider, now)
            .map_err(|e| match e {
                ApprovalError::NotFound(_) => GatewayError::NotFound(e.to_string()),
                ApprovalError::Conflict { .. } => GatewayError::Conflict(e.to_string()),
            })
    }

    /// Injects a fault. Onsets in the simulated past are moved to now so
    /// recorded telemetry never changes.
    pub fn inject_fault(&self, mut fault: FaultSpec) -> Result<FaultAccepted, GatewayError> {
        let mut cluster = self.cluster.lock().expect("cluster");
        fault.onset_s = fault.onset_s.max(cluster.now());
        let id = cluster.inject_fault(fault.clone()).map_err(|e| match e {
            SimError::NotFound { .. } => GatewayError::NotFound(e.to_string()),
            other => GatewayError::BadRequest(other.to_string()),
        })?;
        Ok(FaultAccepted { id, fault })
    }

    /// One monitor cycle: the background workload on every server, then the
    /// job and power checks over the cycle's window. New alerts are
    /// published and, unless a session is already running, diagnosed.
    pub fn monitor_cycle(self: &Arc<Self>) -> Vec<Alert> {
        let (mut alerts, window, samples) = {
            let mut cluster = self.cluster.lock().expect("cluster");
            let mut monitor = self.monitor.lock().expect("monitor");
            let start = cluster.now();
            let mut alerts = Vec::new();
            for job in &self.workload {
                // a job fails when one of its GPUs is offline; the power scan still runs
                if let Ok(log) = cluster.run_job(job) {
                    alerts.extend(monitor.observe_job(&cluster, job, &log));
                }
            }
            if cluster.now() <= start {
                cluster.advance(1.0);
            }
            let window = TimeWindow::new(start, cluster.now());
            alerts.extend(monitor.scan_power(&cluster, window));
            let samples = cluster.sample_telemetry(window).map(|s| s.len()).unwrap_or(0);
            (alerts, window, samples)
        };
        alerts.sort_by_key(|a| (a.source != AlertSource::SlowdownVerdict, a.id));
        for alert in &alerts {
            self.alerts.write().expect("alerts").push(alert.clone());
            self.hub.publish_agent(&AgentEvent::AlertRaised(alert.clone()));
        }
        self.hub.publish(
            TELEMETRY_PAGE,
            json!({"start_s": window.start_s, "end_s": window.end_s, "samples": samples}),
        );
        if self.config.auto_diagnose && !alerts.is_empty() {
            self.diagnose(alerts.clone());
        }
        alerts
    }

    /// Starts a session on the first alert with the rest as related
    /// evidence. Returns false when a session is already running.
    pub fn diagnose(self: &Arc<Self>, mut alerts: Vec<Alert>) -> bool {
        if alerts.is_empty()
            || self
                .diagnosing
                .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
                .is_err()
        {
            return false;
        }
        let primary = alerts.remove(0);
        let service = Arc::clone(self);
        // sessions block on operator approval, so they get their own thread
        std::thread::spawn(move || {
            service
                .orchestrator
                .run_session(primary, alerts, &service.cluster, &service.kb);
            service.diagnosing.store(false, Ordering::SeqCst);
        });
        true
    }

    pub fn run_bench(&self, request: &BenchRequest) -> Result<ScoreReport, GatewayError> {
        let loaded;
        let items: &[BenchmarkItem] = match &request.items {
            Some(path) => {
                loaded = load_items(path).map_err(bench_err)?;
                &loaded
            }
            None => &self.items,
        };
        let oracle;
        let competent;
        let backend: &dyn Backend = match request.backend {
            BenchBackend::Oracle => {
                oracle = OracleBackend::new(items);
                &oracle
            }
            BenchBackend::Empty => &EmptyBackend,
            BenchBackend::Competent => {
                competent = ScriptedBackend::from_json(competent_fixture())
                    .map_err(|e| GatewayError::Internal(e.to_string()))?;
                &competent
            }
            BenchBackend::Configured => self.backend.as_ref(),
        };
        let mut run = RunConfig {
            visibility: request.visibility,
            rag: request.rag,
            ..RunConfig::default()
        };
        if let Some(k) = request.k {
            run.k = k;
        }
        let report = {
            let kb = self.kb.read().expect("knowledge base");
            run_benchmark(items, backend, Some(&kb), &run).map_err(bench_err)?
        };
        let n = std::fs::read_dir(&self.reports_dir).map(|d| d.count()).unwrap_or(0);
        let path = self.reports_dir.join(format!("report-{:04}.json", n + 1));
        report.save(&path).map_err(bench_err)?;
        Ok(report)
    }
}

fn bench_err(e: BenchError) -> GatewayError {
    match e {
        BenchError::Io { .. } => GatewayError::NotFound(e.to_string()),
        BenchError::InvalidItem { .. } | BenchError::Misuse(_) => GatewayError::BadRequest(e.to_string()),
    }
}

pub(crate) async fn monitor_loop(service: Arc<Service>) {
    let mut interval = tokio::time::interval(Duration::from_millis(service.config.monitor_interval_ms));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        interval.tick().await;
        let s = Arc::clone(&service);
        if tokio::task::spawn_blocking(move || s.monitor_cycle()).await.is_err() {
            break;
        }
    }
}
