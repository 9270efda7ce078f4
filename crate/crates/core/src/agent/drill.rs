use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{Alert, AlertSource, Monitor, Orchestrator, SelfPlaySession};
use crate::cluster_sim::{Cluster, FaultSpec, JobLog, JobSpec, SimError, TimeWindow};
use crate::knowledge_base::KnowledgeBase;
use crate::perf_model::{calibrate_mix_for_ratio, PerfError};

/// The canonical throttling drill: one GPU of a server pinned far below its
/// nominal clock while a job spans the whole server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrillConfig {
    pub server: String,
    pub throttled_gpu: String,
    pub throttle_mhz: f64,
    /// Job rate on the throttled GPU relative to a healthy one.
    pub target_ratio: f64,
    pub iterations: usize,
    pub job_id: String,
}

impl Default for DrillConfig {
    fn default() -> Self {
        Self {
            server: "node-0".into(),
            throttled_gpu: "gpu-3".into(),
            throttle_mhz: 200.0,
            target_ratio: 1.0 / 3.0,
            iterations: 40,
            job_id: "drill-train".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrillReport {
    pub fault: FaultSpec,
    pub job: JobSpec,
    pub predicted_rate: f64,
    pub measured_rate: Option<f64>,
    pub alerts: Vec<Alert>,
    pub session: Option<SelfPlaySession>,
}

#[derive(Debug, thiserror::Error)]
pub enum DrillError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error("the drill raised no alert")]
    NoAlert,
}

/// Injects the throttle and builds a job calibrated so the throttled GPU
/// runs at `target_ratio` of nominal speed.
pub fn prepare_drill(cluster: &mut Cluster, config: &DrillConfig) -> Result<(FaultSpec, JobSpec), DrillError> {
    let fault = FaultSpec::throttle(config.throttled_gpu.clone(), config.throttle_mhz).at(cluster.now());
    cluster.inject_fault(fault.clone())?;
    let base = cluster
        .topology()
        .nominal_profile(&config.throttled_gpu)
        .ok_or_else(|| SimError::NotFound {
            what: "gpu",
            id: config.throttled_gpu.clone(),
        })?;
    let degraded = cluster.gpu_profile_at(&config.throttled_gpu, cluster.now())?;
    let mix = calibrate_mix_for_ratio(&base, &degraded, config.target_ratio, &cluster.config().rules)?;
    let server = cluster.topology().server(&config.server).ok_or_else(|| SimError::NotFound {
        what: "server",
        id: config.server.clone(),
    })?;
    let job = JobSpec {
        id: config.job_id.clone(),
        mix,
        gpus: server.gpus.iter().map(|g| g.id.clone()).collect(),
        iterations: config.iterations,
    };
    Ok((fault, job))
}

/// Runs the job, lets the monitor look at telemetry and the job log, and
/// returns the alerts it raised (slowdown verdict first).
pub fn observe_drill(cluster: &mut Cluster, monitor: &mut Monitor, job: &JobSpec) -> Result<(JobLog, Vec<Alert>), DrillError> {
    let start = cluster.now();
    let log = cluster.run_job(job)?;
    let end = cluster.now().max(start + 1.0);
    let mut alerts = monitor.observe_job(cluster, job, &log);
    alerts.extend(monitor.scan_power(cluster, TimeWindow::new(start, end)));
    alerts.sort_by_key(|a| (a.source != AlertSource::SlowdownVerdict, a.id));
    Ok((log, alerts))
}

/// The full drill: fault, job, alerts, then one self-play session on the
/// first alert with the others attached as related evidence.
pub fn run_drill(
    orchestrator: &Orchestrator,
    cluster: &Mutex<Cluster>,
    kb: &RwLock<KnowledgeBase>,
    monitor: &mut Monitor,
    config: &DrillConfig,
) -> Result<DrillReport, DrillError> {
    let (fault, job, log, alerts, predicted_rate) = {
        let mut c = cluster.lock().expect("cluster");
        let (fault, job) = prepare_drill(&mut c, config)?;
        let predicted_rate = c.nominal_job_prediction(&job)?.rate;
        let (log, alerts) = observe_drill(&mut c, monitor, &job)?;
        (fault, job, log, alerts, predicted_rate)
    };
    let mut rest = alerts.clone();
    if rest.is_empty() {
        return Err(DrillError::NoAlert);
    }
    let primary = rest.remove(0);
    let session = orchestrator.run_session(primary, rest, cluster, kb);
    Ok(DrillReport {
        fault,
        job,
        predicted_rate,
        measured_rate: log.mean_rate(),
        alerts,
        session: Some(session),
    })
}
