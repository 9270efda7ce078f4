//! Supply-side diagnostic checks: every capability is probed for content
//! correctness, performance against its nominal rate, and stability of the
//! performance result over repeated runs.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Cluster, SimError};
use crate::perf_model::{detect_slowdown, predict_single, ResourceKind, Verdict};
use crate::{ResourceProfile, TaskDemand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Correctness,
    Performance,
    Stability,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [
        Dimension::Correctness,
        Dimension::Performance,
        Dimension::Stability,
    ];

    pub fn parse(text: &str) -> Option<Self> {
        match text.to_ascii_lowercase().as_str() {
            "correctness" => Some(Dimension::Correctness),
            "performance" => Some(Dimension::Performance),
            "stability" => Some(Dimension::Stability),
            _ => None,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Correctness => "correctness",
            Dimension::Performance => "performance",
            Dimension::Stability => "stability",
        })
    }
}

/// Capability names in registry order.
pub const CAPABILITIES: [&str; 5] = ["gpu-matmul", "gpu-membw", "rdma-rw", "storage-rw", "gpu-freq"];

/// Non-check tool that returns a telemetry excerpt.
pub const TELEMETRY_TOOL: &str = "telemetry";

/// Every tool the agent may call: the check capabilities plus telemetry.
pub fn tool_names() -> Vec<&'static str> {
    let mut names = CAPABILITIES.to_vec();
    names.push(TELEMETRY_TOOL);
    names
}

fn describe(capability: &str) -> (&'static str, &'static str) {
    match capability {
        "gpu-matmul" => ("dense matrix multiply on each GPU", "FLOP/s"),
        "gpu-membw" => ("HBM read/write bandwidth on each GPU", "B/s"),
        "rdma-rw" => ("RDMA read/write through each server NIC", "B/s"),
        "storage-rw" => ("local storage read/write on each server", "B/s"),
        "gpu-freq" => ("core clock of each GPU", "MHz"),
        _ => ("", ""),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckDescriptor {
    pub capability: String,
    pub dimension: Dimension,
    pub description: String,
    pub expected_bound: String,
}

/// The fixed check registry: 5 capabilities x 3 dimensions.
pub fn list_checks() -> Vec<CheckDescriptor> {
    let threshold = crate::perf_model::DEFAULT_SLOWDOWN_THRESHOLD;
    CAPABILITIES
        .iter()
        .flat_map(|cap| {
            let (what, unit) = describe(cap);
            Dimension::ALL.into_iter().map(move |dimension| {
                let (description, expected_bound) = match dimension {
                    Dimension::Correctness => (
                        format!("{what}: round-trip content matches"),
                        "zero mismatches".to_string(),
                    ),
                    Dimension::Performance => (
                        format!("{what}: measured rate against nominal"),
                        format!(">= {threshold} x nominal {unit}"),
                    ),
                    Dimension::Stability => (
                        format!("{what}: performance check repeated over time"),
                        format!("every run >= {threshold} x nominal {unit}"),
                    ),
                };
                CheckDescriptor {
                    capability: cap.to_string(),
                    dimension,
                    description,
                    expected_bound,
                }
            })
        })
        .collect()
}

/// Which devices a check covers.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckScope {
    #[default]
    All,
    Device(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceReading {
    pub device: String,
    pub passed: bool,
    pub measured: Option<f64>,
    pub expected: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub capability: String,
    pub dimension: Dimension,
    pub passed: bool,
    /// Worst device's measured value (performance and stability).
    pub measured: Option<f64>,
    pub expected: Option<f64>,
    pub ratio: Option<f64>,
    pub failing_devices: Vec<String>,
    pub evidence: String,
    pub readings: Vec<DeviceReading>,
}

enum Probe {
    Gpu,
    Server,
}

fn probe_kind(capability: &str) -> Probe {
    match capability {
        "rdma-rw" | "storage-rw" => Probe::Server,
        _ => Probe::Gpu,
    }
}

impl Cluster {
    pub fn run_check(
        &self,
        capability: &str,
        dimension: Dimension,
        scope: &CheckScope,
    ) -> Result<CheckResult, SimError> {
        if !CAPABILITIES.contains(&capability) {
            return Err(SimError::UnknownCapability {
                name: capability.to_string(),
                registry: CAPABILITIES.iter().map(|s| s.to_string()).collect(),
            });
        }
        let devices = self.check_devices(capability, scope)?;
        let now = self.now();
        let readings = match dimension {
            Dimension::Correctness => devices
                .iter()
                .map(|d| self.correctness_reading(capability, d, now))
                .collect::<Vec<_>>(),
            Dimension::Performance => devices
                .iter()
                .map(|d| self.performance_reading(capability, d, now))
                .collect::<Result<Vec<_>, _>>()?,
            Dimension::Stability => {
                let mut worst: Vec<DeviceReading> = Vec::new();
                for run in 0..self.config().stability_runs.max(1) {
                    let t = now + run as f64 * self.config().stability_interval_s;
                    for (i, d) in devices.iter().enumerate() {
                        let reading = self.performance_reading(capability, d, t)?;
                        if run == 0 {
                            worst.push(reading);
                        } else if worse(&reading, &worst[i]) {
                            worst[i] = reading;
                        }
                    }
                }
                worst
            }
        };
        Ok(summarize(capability, dimension, readings))
    }

    fn check_devices(&self, capability: &str, scope: &CheckScope) -> Result<Vec<String>, SimError> {
        let topology = self.topology();
        let all: Vec<String> = match probe_kind(capability) {
            Probe::Gpu => topology.gpu_ids(),
            Probe::Server => topology.servers.iter().map(|s| s.id.clone()).collect(),
        };
        match scope {
            CheckScope::All => Ok(all),
            CheckScope::Device(id) => {
                if all.contains(id) {
                    Ok(vec![id.clone()])
                } else if let (Probe::Server, Some((server, _))) = (probe_kind(capability), topology.gpu(id)) {
                    // a GPU id narrows a server-level check to its host
                    Ok(vec![server.id.clone()])
                } else {
                    Err(SimError::NotFound {
                        what: "device",
                        id: id.clone(),
                    })
                }
            }
        }
    }

    fn correctness_reading(&self, capability: &str, device: &str, t: f64) -> DeviceReading {
        let state = self.device_state_at(t);
        let corrupted = match probe_kind(capability) {
            Probe::Gpu => state.gpus.get(device).map(|g| g.ecc_errors).unwrap_or(0),
            Probe::Server => self
                .topology()
                .server(device)
                .map(|s| s.gpus.iter().map(|g| state.gpus[&g.id].ecc_errors).sum())
                .unwrap_or(0),
        };
        DeviceReading {
            device: device.to_string(),
            passed: corrupted == 0,
            measured: Some(corrupted as f64),
            expected: Some(0.0),
        }
    }

    fn performance_reading(&self, capability: &str, device: &str, t: f64) -> Result<DeviceReading, SimError> {
        let topology = self.topology();
        let (measured, expected) = match capability {
            "gpu-matmul" | "gpu-membw" | "gpu-freq" => {
                let (_, gpu) = topology.gpu(device).expect("checked device");
                if !self.gpu_online_at(device, t) {
                    let expected = match capability {
                        "gpu-matmul" => gpu.peak_flops_per_s,
                        "gpu-membw" => gpu.mem_bytes_per_s,
                        _ => gpu.nominal_mhz,
                    };
                    return Ok(DeviceReading {
                        device: device.to_string(),
                        passed: false,
                        measured: Some(0.0),
                        expected: Some(expected),
                    });
                }
                let profile = self.gpu_profile_at(device, t)?;
                match capability {
                    "gpu-matmul" => (profile.rate(ResourceKind::Compute), gpu.peak_flops_per_s),
                    "gpu-membw" => (profile.rate(ResourceKind::MemoryBandwidth), gpu.mem_bytes_per_s),
                    _ => (
                        self.gpu_frequency_at(device, t).unwrap_or(gpu.nominal_mhz),
                        gpu.nominal_mhz,
                    ),
                }
            }
            "rdma-rw" => {
                let server = topology.server(device).expect("checked device");
                let profile_link = self
                    .device_state_at(t)
                    .servers
                    .get(device)
                    .map(|s| s.link_bytes_per_s)
                    .unwrap_or(server.nic_bytes_per_s);
                (profile_link, server.nic_bytes_per_s)
            }
            _ => {
                let server = topology.server(device).expect("checked device");
                (
                    self.effective_storage_rate_at(device, t).unwrap_or(0.0),
                    server.storage_bytes_per_s,
                )
            }
        };
        let passed = measured > 0.0 && !slow(measured, expected, self.config().slowdown_threshold)?;
        Ok(DeviceReading {
            device: device.to_string(),
            passed,
            measured: Some(measured),
            expected: Some(expected),
        })
    }
}

/// Model-based comparison: a unit task on the nominal supply against the
/// same task on the measured supply.
fn slow(measured: f64, expected: f64, threshold: f64) -> Result<bool, SimError> {
    let unit = TaskDemand::only(ResourceKind::Compute, 1.0)?;
    let nominal = ResourceProfile::new(expected, 1.0, 1.0)?;
    let predicted = predict_single(&unit, &nominal)?;
    Ok(matches!(
        detect_slowdown(&predicted, measured, threshold)?,
        Verdict::Slow { .. }
    ))
}

fn ratio_of(r: &DeviceReading) -> f64 {
    match (r.measured, r.expected) {
        (Some(m), Some(e)) if e > 0.0 => m / e,
        _ => 1.0,
    }
}

fn worse(a: &DeviceReading, b: &DeviceReading) -> bool {
    (!a.passed && b.passed) || (a.passed == b.passed && ratio_of(a) < ratio_of(b))
}

fn summarize(capability: &str, dimension: Dimension, readings: Vec<DeviceReading>) -> CheckResult {
    let failing: Vec<&DeviceReading> = readings.iter().filter(|r| !r.passed).collect();
    let failing_devices = failing.iter().map(|r| r.device.clone()).collect();
    let unit = describe(capability).1;
    let evidence = if dimension == Dimension::Correctness {
        if failing.is_empty() {
            format!("{capability} {dimension}: {} devices round-trip clean", readings.len())
        } else {
            failing
                .iter()
                .map(|r| format!("{}: {} mismatches (ecc)", r.device, r.measured.unwrap_or(0.0)))
                .collect::<Vec<_>>()
                .join("; ")
        }
    } else if failing.is_empty() {
        let min_ratio = readings.iter().map(ratio_of).fold(f64::INFINITY, f64::min);
        format!(
            "{capability} {dimension}: {} devices within bound (min ratio {:.3})",
            readings.len(),
            min_ratio
        )
    } else {
        failing
            .iter()
            .map(|r| {
                format!(
                    "{}: measured {} {unit}, expected {} {unit} (ratio {:.3})",
                    r.device,
                    fmt_value(r.measured.unwrap_or(0.0)),
                    fmt_value(r.expected.unwrap_or(0.0)),
                    ratio_of(r)
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    };
    let worst = readings
        .iter()
        .fold(None::<&DeviceReading>, |acc, r| match acc {
            Some(w) if !worse(r, w) => Some(w),
            _ => Some(r),
        });
    let (measured, expected, ratio) = match (dimension, worst) {
        (Dimension::Correctness, _) | (_, None) => (None, None, None),
        (_, Some(w)) => (w.measured, w.expected, Some(ratio_of(w))),
    };
    CheckResult {
        capability: capability.to_string(),
        dimension,
        passed: failing.is_empty(),
        measured,
        expected,
        ratio,
        failing_devices,
        evidence,
        readings,
    }
}

fn fmt_value(v: f64) -> String {
    if v.abs() >= 1e6 {
        format!("{v:.3e}")
    } else {
        format!("{v}")
    }
}
