use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultId(pub u64);

impl fmt::Display for FaultId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// Core clock pinned to `target_mhz` (thermal or power capping).
    GpuFrequencyThrottle { target_mhz: f64 },
    /// Server NIC bandwidth multiplied by `factor`.
    LinkDegrade { factor: f64 },
    /// Host memory consumed at a constant rate.
    MemoryLeak { bytes_per_s: f64 },
    /// Local storage consumed at a constant rate.
    DiskFill { bytes_per_s: f64 },
    /// Uncorrectable ECC errors on a GPU.
    EccBurst { count: u64 },
}

impl FaultKind {
    pub fn name(&self) -> &'static str {
        match self {
            FaultKind::GpuFrequencyThrottle { .. } => "gpu_frequency_throttle",
            FaultKind::LinkDegrade { .. } => "link_degrade",
            FaultKind::MemoryLeak { .. } => "memory_leak",
            FaultKind::DiskFill { .. } => "disk_fill",
            FaultKind::EccBurst { .. } => "ecc_burst",
        }
    }

    /// GPU faults target a GPU id, the rest target a server id.
    pub fn targets_gpu(&self) -> bool {
        matches!(
            self,
            FaultKind::GpuFrequencyThrottle { .. } | FaultKind::EccBurst { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    #[serde(flatten)]
    pub kind: FaultKind,
    pub target: String,
    #[serde(default)]
    pub onset_s: f64,
}

impl FaultSpec {
    pub fn new(kind: FaultKind, target: impl Into<String>) -> Self {
        Self {
            kind,
            target: target.into(),
            onset_s: 0.0,
        }
    }

    pub fn at(mut self, onset_s: f64) -> Self {
        self.onset_s = onset_s;
        self
    }

    pub fn throttle(gpu: impl Into<String>, target_mhz: f64) -> Self {
        Self::new(FaultKind::GpuFrequencyThrottle { target_mhz }, gpu)
    }
}

/// Reads a fault schedule: a JSON array of [`FaultSpec`].
pub fn load_fault_schedule(path: &Path) -> Result<Vec<FaultSpec>, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| SimError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_document_shape() {
        let spec: FaultSpec = serde_json::from_str(
            r#"{"kind": "gpu_frequency_throttle", "target_mhz": 200, "target": "gpu-3", "onset_s": 5}"#,
        )
        .unwrap();
        assert_eq!(spec, FaultSpec::throttle("gpu-3", 200.0).at(5.0));
        let round = serde_json::to_value(FaultSpec::new(FaultKind::LinkDegrade { factor: 0.5 }, "node-1")).unwrap();
        assert_eq!(round["kind"], "link_degrade");
        assert_eq!(round["factor"], 0.5);
    }
}
