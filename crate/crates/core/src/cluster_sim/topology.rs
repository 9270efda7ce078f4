use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::ResourceProfile;

const BUNDLED_TOPOLOGY: &str = include_str!("../../data/topology.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuSpec {
    pub id: String,
    pub nominal_mhz: f64,
    /// Peak matrix-multiply throughput at nominal frequency.
    pub peak_flops_per_s: f64,
    pub mem_bytes_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub id: String,
    pub host: String,
    pub ssh_port: u16,
    pub gpus: Vec<GpuSpec>,
    pub nic_bytes_per_s: f64,
    pub storage_bytes_per_s: f64,
    #[serde(default = "default_storage_capacity")]
    pub storage_capacity_bytes: f64,
    #[serde(default = "default_host_memory")]
    pub host_memory_bytes: f64,
}

fn default_storage_capacity() -> f64 {
    30e12
}

fn default_host_memory() -> f64 {
    2e12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTopology {
    pub servers: Vec<ServerSpec>,
}

impl ClusterTopology {
    /// 4 servers x 8 A800-class GPUs (`gpu-0` .. `gpu-31`).
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_TOPOLOGY).expect("bundled topology parses")
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let topology: Self = serde_json::from_str(&text).map_err(|e| SimError::Parse(e.to_string()))?;
        topology.validate()?;
        Ok(topology)
    }

    /// Single server with `gpu_count` identical GPUs, used for sandboxes.
    pub fn single_server(gpu_count: usize) -> Self {
        let mut bundled = Self::bundled();
        let mut server = bundled.servers.remove(0);
        let template = server.gpus[0].clone();
        server.gpus = (0..gpu_count)
            .map(|i| GpuSpec {
                id: format!("gpu-{i}"),
                ..template.clone()
            })
            .collect();
        Self { servers: vec![server] }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |field: String, reason: &str| SimError::InvalidTopology {
            field,
            reason: reason.to_string(),
        };
        if self.servers.is_empty() {
            return Err(invalid("servers".into(), "at least one server required"));
        }
        let mut ids = BTreeSet::new();
        let mut endpoints = BTreeSet::new();
        for (si, server) in self.servers.iter().enumerate() {
            let at = |name: &str| format!("servers[{si}].{name}");
            if server.id.is_empty() {
                return Err(invalid(at("id"), "empty id"));
            }
            if !ids.insert(server.id.clone()) {
                return Err(invalid(at("id"), &format!("duplicate id {}", server.id)));
            }
            if !endpoints.insert((server.host.clone(), server.ssh_port)) {
                return Err(invalid(
                    at("host"),
                    &format!("duplicate endpoint {}:{}", server.host, server.ssh_port),
                ));
            }
            for (name, value) in [
                ("nic_bytes_per_s", server.nic_bytes_per_s),
                ("storage_bytes_per_s", server.storage_bytes_per_s),
                ("storage_capacity_bytes", server.storage_capacity_bytes),
                ("host_memory_bytes", server.host_memory_bytes),
            ] {
                if !(value.is_finite() && value > 0.0) {
                    return Err(invalid(at(name), "must be positive"));
                }
            }
            for (gi, gpu) in server.gpus.iter().enumerate() {
                let at = |name: &str| format!("servers[{si}].gpus[{gi}].{name}");
                if gpu.id.is_empty() {
                    return Err(invalid(at("id"), "empty id"));
                }
                if !ids.insert(gpu.id.clone()) {
                    return Err(invalid(at("id"), &format!("duplicate id {}", gpu.id)));
                }
                for (name, value) in [
                    ("nominal_mhz", gpu.nominal_mhz),
                    ("peak_flops_per_s", gpu.peak_flops_per_s),
                    ("mem_bytes_per_s", gpu.mem_bytes_per_s),
                ] {
                    if !(value.is_finite() && value > 0.0) {
                        return Err(invalid(at(name), "must be positive"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn gpus(&self) -> impl Iterator<Item = (&ServerSpec, &GpuSpec)> {
        self.servers
            .iter()
            .flat_map(|s| s.gpus.iter().map(move |g| (s, g)))
    }

    pub fn gpu(&self, id: &str) -> Option<(&ServerSpec, &GpuSpec)> {
        self.gpus().find(|(_, g)| g.id == id)
    }

    pub fn server(&self, id: &str) -> Option<&ServerSpec> {
        self.servers.iter().find(|s| s.id == id)
    }

    pub fn gpu_ids(&self) -> Vec<String> {
        self.gpus().map(|(_, g)| g.id.clone()).collect()
    }

    /// True when `id` names a GPU or a server.
    pub fn contains(&self, id: &str) -> bool {
        self.gpu(id).is_some() || self.server(id).is_some()
    }

    /// Supply profile of a GPU at nominal clocks and an undegraded link.
    pub fn nominal_profile(&self, gpu_id: &str) -> Option<ResourceProfile> {
        let (server, gpu) = self.gpu(gpu_id)?;
        ResourceProfile::new(gpu.peak_flops_per_s, gpu.mem_bytes_per_s, server.nic_bytes_per_s).ok()
    }
}
