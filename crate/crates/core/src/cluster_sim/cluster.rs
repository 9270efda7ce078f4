use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fault::{FaultId, FaultKind, FaultSpec};
use super::topology::ClusterTopology;
use super::SimError;
use crate::perf_model::{predict_mix, ParallelismRule};
use crate::{PerfPrediction, ResourceProfile, WorkloadMix};

/// Tunables of the simulator. Defaults are documented per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub seed: u64,
    /// Half-width of the uniform multiplicative noise on iteration times (0.01 = +-1%).
    pub noise: f64,
    /// Power draw of an idle GPU, watts.
    pub idle_power_w: f64,
    /// Power draw at full utilization and nominal clock, watts.
    pub peak_power_w: f64,
    /// Relative jitter applied to sampled power.
    pub power_jitter: f64,
    pub telemetry_interval_s: f64,
    /// A GPU drops off the bus once it accumulates this many ECC errors.
    pub ecc_offline_threshold: u64,
    pub rules: ParallelismRule,
    pub slowdown_threshold: f64,
    pub stability_runs: usize,
    pub stability_interval_s: f64,
    /// Free fraction of storage / host memory on a healthy server.
    pub baseline_free_fraction: f64,
    /// Below this free fraction, storage throughput degrades linearly.
    pub pressure_fraction: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            noise: 0.01,
            idle_power_w: 60.0,
            peak_power_w: 400.0,
            power_jitter: 0.005,
            telemetry_interval_s: 1.0,
            ecc_offline_threshold: 100,
            rules: ParallelismRule::default(),
            slowdown_threshold: crate::perf_model::DEFAULT_SLOWDOWN_THRESHOLD,
            stability_runs: 5,
            stability_interval_s: 60.0,
            baseline_free_fraction: 0.7,
            pressure_fraction: 0.1,
        }
    }
}

impl ClusterConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise = 0.0;
        self.power_jitter = 0.0;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpuState {
    pub frequency_mhz: f64,
    pub power_w: f64,
    pub utilization: f64,
    pub ecc_errors: u64,
    pub online: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServerState {
    pub link_bytes_per_s: f64,
    pub free_storage_bytes: f64,
    pub free_host_memory_bytes: f64,
}

/// Snapshot of every device at one simulated instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceState {
    pub time_s: f64,
    pub gpus: BTreeMap<String, GpuState>,
    pub servers: BTreeMap<String, ServerState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub id: String,
    /// Work done by every assigned GPU in one iteration.
    pub mix: WorkloadMix,
    pub gpus: Vec<String>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub start_s: f64,
    pub duration_s: f64,
    /// Iterations per second.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobOutcome {
    Completed,
    Failed { device: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobLog {
    pub job_id: String,
    pub gpus: Vec<String>,
    pub iterations: Vec<IterationRecord>,
    pub outcome: JobOutcome,
}

impl JobLog {
    pub fn rates(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.rate).collect()
    }

    pub fn mean_rate(&self) -> Option<f64> {
        if self.iterations.is_empty() {
            return None;
        }
        Some(self.rates().iter().sum::<f64>() / self.iterations.len() as f64)
    }

    pub fn end_s(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.start_s + r.duration_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub timestamp_s: f64,
    pub device: String,
    pub metric: String,
    pub value: f64,
}

impl TelemetrySample {
    /// One JSON object per line.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("telemetry sample serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeWindow {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }
}

#[derive(Debug, Clone)]
struct BusyInterval {
    start_s: f64,
    end_s: f64,
    gpus: BTreeSet<String>,
}

/// Deterministic simulated cluster.
///
/// Mutating calls take `&mut self`; wrap the handle in a mutex to share it
/// between a single writer and concurrent readers.
#[derive(Debug, Clone)]
pub struct Cluster {
    topology: ClusterTopology,
    config: ClusterConfig,
    now_s: f64,
    next_fault: u64,
    faults: BTreeMap<FaultId, FaultSpec>,
    clock_overrides: BTreeMap<String, f64>,
    busy: Vec<BusyInterval>,
    jobs: BTreeMap<String, JobSpec>,
    job_runs: BTreeMap<String, u64>,
}

impl Cluster {
    pub fn new(topology: ClusterTopology, config: ClusterConfig) -> Result<Self, SimError> {
        topology.validate()?;
        Ok(Self {
            topology,
            config,
            now_s: 0.0,
            next_fault: 1,
            faults: BTreeMap::new(),
            clock_overrides: BTreeMap::new(),
            busy: Vec::new(),
            jobs: BTreeMap::new(),
            job_runs: BTreeMap::new(),
        })
    }

    pub fn build(topology: ClusterTopology, seed: u64) -> Result<Self, SimError> {
        Self::new(topology, ClusterConfig::with_seed(seed))
    }

    pub fn topology(&self) -> &ClusterTopology {
        &self.topology
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn now(&self) -> f64 {
        self.now_s
    }

    pub fn advance(&mut self, seconds: f64) {
        if seconds > 0.0 {
            self.now_s += seconds;
        }
    }

    pub fn inject_fault(&mut self, fault: FaultSpec) -> Result<FaultId, SimError> {
        self.validate_fault(&fault)?;
        let id = FaultId(self.next_fault);
        self.next_fault += 1;
        self.faults.insert(id, fault);
        Ok(id)
    }

    pub fn clear_fault(&mut self, id: FaultId) -> Result<FaultSpec, SimError> {
        self.faults.remove(&id).ok_or_else(|| SimError::NotFound {
            what: "fault",
            id: id.to_string(),
        })
    }

    pub fn active_faults(&self) -> impl Iterator<Item = (FaultId, &FaultSpec)> {
        self.faults.iter().map(|(id, f)| (*id, f))
    }

    fn validate_fault(&self, fault: &FaultSpec) -> Result<(), SimError> {
        let invalid = |msg: String| Err(SimError::InvalidFault(msg));
        if !fault.onset_s.is_finite() || fault.onset_s < 0.0 {
            return invalid(format!("onset {} must be a non-negative time", fault.onset_s));
        }
        if fault.kind.targets_gpu() {
            let Some((_, gpu)) = self.topology.gpu(&fault.target) else {
                return Err(SimError::NotFound {
                    what: "gpu",
                    id: fault.target.clone(),
                });
            };
            match fault.kind {
                FaultKind::GpuFrequencyThrottle { target_mhz }
                    if !(target_mhz > 0.0 && target_mhz < gpu.nominal_mhz) =>
                {
                    invalid(format!(
                        "throttle target {target_mhz} MHz must lie below nominal {} MHz",
                        gpu.nominal_mhz
                    ))
                }
                FaultKind::EccBurst { count: 0 } => invalid("ecc burst count must be positive".into()),
                _ => Ok(()),
            }
        } else {
            if self.topology.server(&fault.target).is_none() {
                return Err(SimError::NotFound {
                    what: "server",
                    id: fault.target.clone(),
                });
            }
            match fault.kind {
                FaultKind::LinkDegrade { factor } if !(factor > 0.0 && factor < 1.0) => {
                    invalid(format!("degrade factor {factor} must lie in (0, 1)"))
                }
                FaultKind::MemoryLeak { bytes_per_s } | FaultKind::DiskFill { bytes_per_s }
                    if !(bytes_per_s.is_finite() && bytes_per_s > 0.0) =>
                {
                    invalid(format!("fill rate {bytes_per_s} must be positive"))
                }
                _ => Ok(()),
            }
        }
    }

    fn faults_on<'a>(&'a self, target: &'a str, time_s: f64) -> impl Iterator<Item = &'a FaultSpec> + 'a {
        self.faults
            .values()
            .filter(move |f| f.target == target && f.onset_s <= time_s)
    }

    pub fn gpu_frequency_at(&self, gpu_id: &str, time_s: f64) -> Option<f64> {
        let (_, gpu) = self.topology.gpu(gpu_id)?;
        let mut mhz = self
            .clock_overrides
            .get(gpu_id)
            .copied()
            .unwrap_or(gpu.nominal_mhz);
        for fault in self.faults_on(gpu_id, time_s) {
            if let FaultKind::GpuFrequencyThrottle { target_mhz } = fault.kind {
                mhz = mhz.min(target_mhz);
            }
        }
        Some(mhz)
    }

    fn ecc_errors_at(&self, gpu_id: &str, time_s: f64) -> u64 {
        self.faults_on(gpu_id, time_s)
            .map(|f| match f.kind {
                FaultKind::EccBurst { count } => count,
                _ => 0,
            })
            .sum()
    }

    pub fn gpu_online_at(&self, gpu_id: &str, time_s: f64) -> bool {
        self.ecc_errors_at(gpu_id, time_s) < self.config.ecc_offline_threshold
    }

    fn utilization_at(&self, gpu_id: &str, time_s: f64) -> f64 {
        let busy = self
            .busy
            .iter()
            .any(|b| b.start_s <= time_s && time_s < b.end_s && b.gpus.contains(gpu_id));
        if busy {
            1.0
        } else {
            0.0
        }
    }

    fn power_at(&self, gpu_id: &str, time_s: f64) -> f64 {
        let (_, gpu) = self.topology.gpu(gpu_id).expect("known gpu");
        if !self.gpu_online_at(gpu_id, time_s) {
            return 0.0;
        }
        let freq = self.gpu_frequency_at(gpu_id, time_s).unwrap_or(gpu.nominal_mhz);
        let util = self.utilization_at(gpu_id, time_s);
        self.config.idle_power_w
            + (self.config.peak_power_w - self.config.idle_power_w) * util * freq / gpu.nominal_mhz
    }

    fn server_state_at(&self, server_id: &str, time_s: f64) -> Option<ServerState> {
        let server = self.topology.server(server_id)?;
        let mut link = server.nic_bytes_per_s;
        let mut storage_used = 0.0;
        let mut memory_used = 0.0;
        for fault in self.faults_on(server_id, time_s) {
            let elapsed = time_s - fault.onset_s;
            match fault.kind {
                FaultKind::LinkDegrade { factor } => link *= factor,
                FaultKind::DiskFill { bytes_per_s } => storage_used += bytes_per_s * elapsed,
                FaultKind::MemoryLeak { bytes_per_s } => memory_used += bytes_per_s * elapsed,
                _ => {}
            }
        }
        let free_fraction = self.config.baseline_free_fraction;
        Some(ServerState {
            link_bytes_per_s: link,
            free_storage_bytes: (server.storage_capacity_bytes * free_fraction - storage_used).max(0.0),
            free_host_memory_bytes: (server.host_memory_bytes * free_fraction - memory_used).max(0.0),
        })
    }

    /// Storage throughput after host-memory and disk-space pressure.
    pub(crate) fn effective_storage_rate_at(&self, server_id: &str, time_s: f64) -> Option<f64> {
        let server = self.topology.server(server_id)?;
        let state = self.server_state_at(server_id, time_s)?;
        let floor = self.config.pressure_fraction;
        let disk = (state.free_storage_bytes / (server.storage_capacity_bytes * floor)).min(1.0);
        let memory = (state.free_host_memory_bytes / (server.host_memory_bytes * floor)).min(1.0);
        Some(server.storage_bytes_per_s * disk * memory)
    }

    pub fn device_state(&self) -> DeviceState {
        self.device_state_at(self.now_s)
    }

    pub fn device_state_at(&self, time_s: f64) -> DeviceState {
        let gpus = self
            .topology
            .gpus()
            .map(|(_, g)| {
                let id = g.id.as_str();
                (
                    g.id.clone(),
                    GpuState {
                        frequency_mhz: self.gpu_frequency_at(id, time_s).unwrap_or(g.nominal_mhz),
                        power_w: self.power_at(id, time_s),
                        utilization: self.utilization_at(id, time_s),
                        ecc_errors: self.ecc_errors_at(id, time_s),
                        online: self.gpu_online_at(id, time_s),
                    },
                )
            })
            .collect();
        let servers = self
            .topology
            .servers
            .iter()
            .map(|s| (s.id.clone(), self.server_state_at(&s.id, time_s).expect("known server")))
            .collect();
        DeviceState { time_s, gpus, servers }
    }

    /// Supply profile of a GPU at `time_s`: compute scales with the core
    /// clock, I/O with the server link.
    pub fn gpu_profile_at(&self, gpu_id: &str, time_s: f64) -> Result<ResourceProfile, SimError> {
        let (server, gpu) = self.topology.gpu(gpu_id).ok_or_else(|| SimError::NotFound {
            what: "gpu",
            id: gpu_id.to_string(),
        })?;
        let freq = self.gpu_frequency_at(gpu_id, time_s).unwrap_or(gpu.nominal_mhz);
        let link = self
            .server_state_at(&server.id, time_s)
            .map(|s| s.link_bytes_per_s)
            .unwrap_or(server.nic_bytes_per_s);
        Ok(ResourceProfile::new(
            gpu.peak_flops_per_s * freq / gpu.nominal_mhz,
            gpu.mem_bytes_per_s,
            link,
        )?)
    }

    fn validate_job(&self, job: &JobSpec) -> Result<(), SimError> {
        if job.id.is_empty() {
            return Err(SimError::InvalidJob("job id is empty".into()));
        }
        if job.gpus.is_empty() || job.iterations == 0 {
            return Err(SimError::InvalidJob(format!(
                "job {} needs at least one gpu and one iteration",
                job.id
            )));
        }
        let mut seen = BTreeSet::new();
        for gpu in &job.gpus {
            if self.topology.gpu(gpu).is_none() {
                return Err(SimError::NotFound {
                    what: "gpu",
                    id: gpu.clone(),
                });
            }
            if !seen.insert(gpu) {
                return Err(SimError::InvalidJob(format!("gpu {gpu} assigned twice")));
            }
        }
        Ok(())
    }

    /// Predicted iteration rate of `job` on an all-nominal cluster.
    pub fn nominal_job_prediction(&self, job: &JobSpec) -> Result<PerfPrediction, SimError> {
        self.validate_job(job)?;
        let mut slowest: Option<PerfPrediction> = None;
        for gpu in &job.gpus {
            let profile = self.topology.nominal_profile(gpu).expect("validated gpu");
            let prediction = predict_mix(&job.mix, &profile, &self.config.rules)?;
            if slowest.as_ref().is_none_or(|s| prediction.total_time > s.total_time) {
                slowest = Some(prediction);
            }
        }
        Ok(slowest.expect("job has gpus"))
    }

    /// Runs `job` data-parallel on its GPUs, advancing the clock.
    ///
    /// Each iteration lasts as long as the slowest GPU's predicted time,
    /// times seeded noise. A GPU that is offline at an iteration start ends
    /// the job with a failure record.
    pub fn run_job(&mut self, job: &JobSpec) -> Result<JobLog, SimError> {
        self.validate_job(job)?;
        self.jobs.insert(job.id.clone(), job.clone());
        let run = self.job_runs.entry(job.id.clone()).or_insert(0);
        let run_index = *run;
        *run += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.config.seed ^ fnv1a(job.id.as_bytes()) ^ run_index.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let gpus: BTreeSet<String> = job.gpus.iter().cloned().collect();
        let job_start = self.now_s;
        let mut iterations = Vec::with_capacity(job.iterations);
        let mut outcome = JobOutcome::Completed;
        for index in 0..job.iterations {
            let start = self.now_s;
            let mut slowest = 0.0_f64;
            let mut offline = None;
            for gpu in &job.gpus {
                if !self.gpu_online_at(gpu, start) {
                    offline = Some(gpu.clone());
                    break;
                }
                let profile = self.gpu_profile_at(gpu, start)?;
                let time = predict_mix(&job.mix, &profile, &self.config.rules)?.total_time;
                slowest = slowest.max(time);
            }
            if let Some(device) = offline {
                outcome = JobOutcome::Failed {
                    reason: format!("{device} is offline (ecc errors over threshold)"),
                    device,
                };
                break;
            }
            let jitter: f64 = if self.config.noise > 0.0 {
                rng.random_range(-self.config.noise..=self.config.noise)
            } else {
                0.0
            };
            let duration = slowest * (1.0 + jitter);
            self.now_s += duration;
            iterations.push(IterationRecord {
                index,
                start_s: start,
                duration_s: duration,
                rate: 1.0 / duration,
            });
        }
        if self.now_s > job_start {
            self.busy.push(BusyInterval {
                start_s: job_start,
                end_s: self.now_s,
                gpus,
            });
        }
        Ok(JobLog {
            job_id: job.id.clone(),
            gpus: job.gpus.clone(),
            iterations,
            outcome,
        })
    }

    pub fn job(&self, id: &str) -> Option<&JobSpec> {
        self.jobs.get(id)
    }

    /// Re-runs a previously submitted job.
    pub fn restart_job(&mut self, id: &str) -> Result<JobLog, SimError> {
        let job = self.jobs.get(id).cloned().ok_or_else(|| SimError::NotFound {
            what: "job",
            id: id.to_string(),
        })?;
        self.run_job(&job)
    }

    /// Sets the configured core clock of a GPU and lifts any throttle on it.
    pub fn set_frequency(&mut self, gpu_id: &str, mhz: f64) -> Result<(), SimError> {
        let (_, gpu) = self.topology.gpu(gpu_id).ok_or_else(|| SimError::NotFound {
            what: "gpu",
            id: gpu_id.to_string(),
        })?;
        if !(mhz > 0.0 && mhz <= gpu.nominal_mhz) {
            return Err(SimError::InvalidArgument(format!(
                "frequency {mhz} MHz outside (0, {}] for {gpu_id}",
                gpu.nominal_mhz
            )));
        }
        if mhz == gpu.nominal_mhz {
            self.clock_overrides.remove(gpu_id);
        } else {
            self.clock_overrides.insert(gpu_id.to_string(), mhz);
        }
        self.faults.retain(|_, f| {
            !(f.target == gpu_id && matches!(f.kind, FaultKind::GpuFrequencyThrottle { .. }))
        });
        Ok(())
    }

    /// Samples every device at each telemetry tick in `[start, end)`.
    pub fn sample_telemetry(&self, window: TimeWindow) -> Result<Vec<TelemetrySample>, SimError> {
        if !(window.start_s.is_finite() && window.end_s.is_finite()) || window.start_s < 0.0 {
            return Err(SimError::InvalidWindow(format!("{window:?}")));
        }
        if window.end_s > self.now_s + 1e-9 {
            return Err(SimError::InvalidWindow(format!(
                "window ends at {} s, simulated time is {} s",
                window.end_s, self.now_s
            )));
        }
        let interval = self.config.telemetry_interval_s;
        let mut samples = Vec::new();
        let mut tick = (window.start_s / interval).ceil() as u64;
        loop {
            let t = tick as f64 * interval;
            if t >= window.end_s {
                break;
            }
            self.sample_tick(t, tick, &mut samples);
            tick += 1;
        }
        Ok(samples)
    }

    fn sample_tick(&self, t: f64, tick: u64, out: &mut Vec<TelemetrySample>) {
        let mut push = |device: &str, metric: &str, value: f64| {
            out.push(TelemetrySample {
                timestamp_s: t,
                device: device.to_string(),
                metric: metric.to_string(),
                value,
            })
        };
        for (_, gpu) in self.topology.gpus() {
            let id = gpu.id.as_str();
            let freq = self.gpu_frequency_at(id, t).unwrap_or(gpu.nominal_mhz);
            let jitter = 1.0 + self.config.power_jitter * unit_noise(self.config.seed, id, tick);
            push(id, "gpu_frequency_mhz", freq);
            push(id, "gpu_power_w", self.power_at(id, t) * jitter);
            push(id, "gpu_utilization", self.utilization_at(id, t));
            push(id, "gpu_ecc_errors", self.ecc_errors_at(id, t) as f64);
        }
        for server in &self.topology.servers {
            let state = self.server_state_at(&server.id, t).expect("known server");
            push(&server.id, "link_bytes_per_s", state.link_bytes_per_s);
            push(&server.id, "free_storage_bytes", state.free_storage_bytes);
            push(&server.id, "free_host_memory_bytes", state.free_host_memory_bytes);
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Stateless noise in [-1, 1] keyed by device and tick, so one device's
/// samples never depend on another's.
fn unit_noise(seed: u64, key: &str, tick: u64) -> f64 {
    let mut x = seed ^ fnv1a(key.as_bytes()) ^ tick.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perf_model::{MixEntry, ResourceKind};
    use crate::TaskDemand;

    fn compute_job(id: &str, gpus: &[&str], iterations: usize) -> JobSpec {
        JobSpec {
            id: id.into(),
            mix: WorkloadMix::single(TaskDemand::only(ResourceKind::Compute, 312e12).unwrap()),
            gpus: gpus.iter().map(|s| s.to_string()).collect(),
            iterations,
        }
    }

    fn quiet() -> Cluster {
        Cluster::new(ClusterTopology::bundled(), ClusterConfig::with_seed(1).noiseless()).unwrap()
    }

    #[test]
    fn starts_at_nominal() {
        let c = Cluster::build(ClusterTopology::single_server(8), 3).unwrap();
        let state = c.device_state();
        assert_eq!(state.gpus.len(), 8);
        assert!(state.gpus.values().all(|g| g.frequency_mhz == 1410.0 && g.online));
    }

    #[test]
    fn throttle_and_clear() {
        let mut c = quiet();
        let before = c.device_state();
        let id = c.inject_fault(FaultSpec::throttle("gpu-3", 200.0)).unwrap();
        let state = c.device_state();
        assert_eq!(state.gpus["gpu-3"].frequency_mhz, 200.0);
        assert!(state.gpus.iter().filter(|(k, _)| *k != "gpu-3").all(|(_, g)| g.frequency_mhz == 1410.0));
        c.clear_fault(id).unwrap();
        assert_eq!(c.device_state(), before);
        assert!(matches!(c.clear_fault(id), Err(SimError::NotFound { .. })));
    }

    #[test]
    fn invalid_faults_are_rejected() {
        let mut c = quiet();
        assert!(matches!(
            c.inject_fault(FaultSpec::throttle("gpu-3", 2000.0)),
            Err(SimError::InvalidFault(_))
        ));
        assert!(matches!(
            c.inject_fault(FaultSpec::throttle("gpu-99", 200.0)),
            Err(SimError::NotFound { .. })
        ));
        let degrade = FaultSpec::new(FaultKind::LinkDegrade { factor: 1.5 }, "node-0");
        assert!(c.inject_fault(degrade).is_err());
        let wrong_target = FaultSpec::new(FaultKind::DiskFill { bytes_per_s: 1.0 }, "gpu-0");
        assert!(matches!(c.inject_fault(wrong_target), Err(SimError::NotFound { .. })));
    }

    #[test]
    fn noiseless_job_matches_prediction() {
        let mut c = quiet();
        let mix = WorkloadMix::new(vec![
            MixEntry { demand: TaskDemand::only(ResourceKind::Compute, 312e12).unwrap(), proportion: 0.3 },
            MixEntry { demand: TaskDemand::only(ResourceKind::MemoryBandwidth, 2.039e12).unwrap(), proportion: 0.7 },
        ])
        .unwrap();
        let job = JobSpec { id: "j".into(), mix, gpus: vec!["gpu-0".into(), "gpu-9".into()], iterations: 3 };
        let predicted = c.nominal_job_prediction(&job).unwrap();
        let log = c.run_job(&job).unwrap();
        assert_eq!(log.outcome, JobOutcome::Completed);
        for it in &log.iterations {
            assert_eq!(it.duration_s, predicted.total_time);
        }
        assert_eq!(c.now(), 3.0 * predicted.total_time);
    }

    #[test]
    fn throttle_proportionality_for_pure_compute() {
        let mut c = quiet();
        c.inject_fault(FaultSpec::throttle("gpu-3", 200.0)).unwrap();
        let log = c.run_job(&compute_job("j", &["gpu-2", "gpu-3"], 2)).unwrap();
        let ratio = log.iterations[0].rate / 1.0;
        assert!((ratio - 200.0 / 1410.0).abs() < 1e-12);
    }

    #[test]
    fn only_the_job_on_the_throttled_gpu_slows() {
        let mut c = quiet();
        c.inject_fault(FaultSpec::throttle("gpu-3", 200.0)).unwrap();
        let slow = c.run_job(&compute_job("a", &["gpu-3", "gpu-4"], 1)).unwrap();
        let fast = c.run_job(&compute_job("b", &["gpu-10", "gpu-11"], 1)).unwrap();
        assert!(slow.iterations[0].rate < 0.2);
        assert_eq!(fast.iterations[0].rate, 1.0);
    }

    #[test]
    fn offline_gpu_fails_job_without_error() {
        let mut c = quiet();
        c.inject_fault(FaultSpec::new(FaultKind::EccBurst { count: 500 }, "gpu-5")).unwrap();
        let log = c.run_job(&compute_job("j", &["gpu-4", "gpu-5"], 3)).unwrap();
        assert!(matches!(log.outcome, JobOutcome::Failed { ref device, .. } if device == "gpu-5"));
        assert!(log.iterations.is_empty());
    }

    #[test]
    fn noise_is_seeded() {
        let run = |seed| {
            let mut c = Cluster::build(ClusterTopology::bundled(), seed).unwrap();
            c.run_job(&compute_job("j", &["gpu-0"], 20)).unwrap()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
        let log = run(5);
        assert!(log.iterations.iter().all(|r| (r.duration_s - 1.0).abs() <= 0.01 + 1e-12));
    }

    #[test]
    fn telemetry_power_and_leak() {
        let mut c = Cluster::build(ClusterTopology::bundled(), 9).unwrap();
        c.inject_fault(FaultSpec::throttle("gpu-3", 200.0)).unwrap();
        c.inject_fault(FaultSpec::new(FaultKind::MemoryLeak { bytes_per_s: 1e9 }, "node-2")).unwrap();
        c.run_job(&compute_job("j", &["gpu-2", "gpu-3"], 3)).unwrap();
        let samples = c.sample_telemetry(TimeWindow::new(0.0, c.now())).unwrap();
        let value = |device: &str, metric: &str, t: f64| {
            samples
                .iter()
                .find(|s| s.device == device && s.metric == metric && s.timestamp_s == t)
                .unwrap()
                .value
        };
        assert!(value("gpu-3", "gpu_power_w", 1.0) < value("gpu-2", "gpu_power_w", 1.0));
        let leak: Vec<f64> = samples
            .iter()
            .filter(|s| s.device == "node-2" && s.metric == "free_host_memory_bytes")
            .map(|s| s.value)
            .collect();
        assert!(leak.len() > 2 && leak.windows(2).all(|w| w[1] < w[0]));
        assert!(c.sample_telemetry(TimeWindow::new(1.0, 1.0)).unwrap().is_empty());
        assert!(c.sample_telemetry(TimeWindow::new(0.0, c.now() + 10.0)).is_err());
    }

    #[test]
    fn set_frequency_lifts_throttle_and_rejects_overclock() {
        let mut c = quiet();
        c.inject_fault(FaultSpec::throttle("gpu-3", 200.0)).unwrap();
        assert!(c.set_frequency("gpu-3", 2000.0).is_err());
        c.set_frequency("gpu-3", 1410.0).unwrap();
        assert_eq!(c.device_state().gpus["gpu-3"].frequency_mhz, 1410.0);
        assert_eq!(c.active_faults().count(), 0);
    }
}
