use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster_sim::{Cluster, JobLog, JobSpec, TimeWindow};
use crate::perf_model::{detect_slowdown, estimate_rate, Verdict, DEFAULT_SLOWDOWN_THRESHOLD};

pub type AlertId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlertSource {
    PowerAnomaly,
    SlowdownVerdict,
    CheckFailure,
    ManualLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub id: AlertId,
    pub source: AlertSource,
    pub device: Option<String>,
    pub job: Option<String>,
    pub evidence: String,
    /// Simulated time.
    pub raised_at_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    /// Relative deviation from the fleet median power that raises an alert.
    pub power_band: f64,
    /// Smallest group of equally loaded GPUs worth comparing.
    pub min_peers: usize,
    pub cooldown_s: f64,
    pub slowdown_threshold: f64,
    pub warmup_iterations: usize,
    pub min_samples: usize,
    pub rate_tolerance: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            power_band: 0.2,
            min_peers: 3,
            cooldown_s: 300.0,
            slowdown_threshold: DEFAULT_SLOWDOWN_THRESHOLD,
            warmup_iterations: 2,
            min_samples: 5,
            rate_tolerance: 0.05,
        }
    }
}

type DedupKey = (AlertSource, Option<String>, Option<String>);
/// Power and utilization of one device at one tick.
type Reading = (Option<f64>, Option<f64>);

/// Watches telemetry and job logs. Repeated alerts with the same
/// (source, device, job) are suppressed for one cooldown window.
#[derive(Debug, Clone, Default)]
pub struct Monitor {
    config: MonitorConfig,
    next_id: AlertId,
    last_raised: BTreeMap<DedupKey, f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

impl Monitor {
    pub fn new(config: MonitorConfig) -> Self {
        Self {
            config,
            next_id: 1,
            last_raised: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    fn raise(
        &mut self,
        source: AlertSource,
        device: Option<String>,
        job: Option<String>,
        evidence: String,
        at: f64,
    ) -> Option<Alert> {
        let key = (source, device.clone(), job.clone());
        if let Some(&last) = self.last_raised.get(&key) {
            if at - last < self.config.cooldown_s {
                return None;
            }
        }
        self.last_raised.insert(key, at);
        let id = self.next_id.max(1);
        self.next_id = id + 1;
        Some(Alert {
            id,
            source,
            device,
            job,
            evidence,
            raised_at_s: at,
        })
    }

    /// Compares each GPU's power with the median of GPUs at the same
    /// utilization, tick by tick, over `window`.
    pub fn scan_power(&mut self, cluster: &Cluster, window: TimeWindow) -> Vec<Alert> {
        let Ok(samples) = cluster.sample_telemetry(window) else {
            return Vec::new();
        };
        // tick -> device -> (power, utilization)
        let mut ticks: BTreeMap<u64, BTreeMap<String, Reading>> = BTreeMap::new();
        for s in samples {
            let slot = ticks
                .entry(s.timestamp_s.to_bits())
                .or_default()
                .entry(s.device.clone())
                .or_default();
            match s.metric.as_str() {
                "gpu_power_w" => slot.0 = Some(s.value),
                "gpu_utilization" => slot.1 = Some(s.value),
                _ => {}
            }
        }
        let mut alerts = Vec::new();
        for (bits, devices) in ticks {
            let t = f64::from_bits(bits);
            let mut groups: BTreeMap<u64, Vec<(String, f64)>> = BTreeMap::new();
            for (device, (power, util)) in devices {
                if let (Some(p), Some(u)) = (power, util) {
                    if u > 0.0 {
                        groups.entry((u * 1e6).round() as u64).or_default().push((device, p));
                    }
                }
            }
            for (util_key, members) in groups {
                if members.len() < self.config.min_peers {
                    continue;
                }
                let mut powers: Vec<f64> = members.iter().map(|(_, p)| *p).collect();
                let med = median(&mut powers);
                for (device, power) in members {
                    let deviation = (power - med) / med;
                    if deviation.abs() > self.config.power_band {
                        let evidence = format!(
                            "{device} power {power:.1} W vs fleet median {med:.1} W at utilization {:.2} ({:+.0}%, band ±{:.0}%)",
                            util_key as f64 / 1e6,
                            deviation * 100.0,
                            self.config.power_band * 100.0
                        );
                        alerts.extend(self.raise(AlertSource::PowerAnomaly, Some(device), None, evidence, t));
                    }
                }
            }
        }
        alerts
    }

    /// Estimates the job's iteration rate and compares it with the model's
    /// nominal prediction.
    pub fn observe_job(&mut self, cluster: &Cluster, job: &JobSpec, log: &JobLog) -> Vec<Alert> {
        let Ok(prediction) = cluster.nominal_job_prediction(job) else {
            return Vec::new();
        };
        let Ok(estimate) = estimate_rate(
            &log.rates(),
            self.config.warmup_iterations,
            self.config.rate_tolerance,
            self.config.min_samples,
        ) else {
            return Vec::new();
        };
        if !estimate.converged {
            return Vec::new();
        }
        match detect_slowdown(&prediction, estimate.mean, self.config.slowdown_threshold) {
            Ok(Verdict::Slow { ratio }) => {
                let evidence = format!(
                    "job {} on {} gpus: measured {:.4} it/s vs predicted {:.4} it/s (ratio {:.3} < {})",
                    job.id,
                    job.gpus.len(),
                    estimate.mean,
                    prediction.rate,
                    ratio,
                    self.config.slowdown_threshold
                );
                let at = log.end_s().unwrap_or(cluster.now());
                self.raise(AlertSource::SlowdownVerdict, None, Some(job.id.clone()), evidence, at)
                    .into_iter()
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    /// An alert from a failed supply-side check.
    pub fn check_failure(&mut self, device: &str, evidence: String, at: f64) -> Option<Alert> {
        self.raise(AlertSource::CheckFailure, Some(device.to_string()), None, evidence, at)
    }

    /// An operator-submitted log excerpt; `None` when the text is blank.
    /// Never deduplicated.
    pub fn manual(&mut self, evidence: impl Into<String>, at: f64) -> Option<Alert> {
        let evidence = evidence.into();
        if evidence.trim().is_empty() {
            return None;
        }
        let id = self.next_id.max(1);
        self.next_id = id + 1;
        Some(Alert {
            id,
            source: AlertSource::ManualLog,
            device: None,
            job: None,
            evidence,
            raised_at_s: at,
        })
    }
}
