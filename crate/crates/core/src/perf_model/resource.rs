use std::fmt;

use serde::{Deserialize, Serialize};

use super::PerfError;
use crate::Scalar;

/// Equivalent resource dimension a task draws on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    /// Matrix-multiply floating-point throughput (FLOP/s).
    Compute,
    /// Memory bandwidth (bytes/s).
    MemoryBandwidth,
    /// Interconnect or storage bandwidth (bytes/s).
    IoBandwidth,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 3] = [
        ResourceKind::Compute,
        ResourceKind::MemoryBandwidth,
        ResourceKind::IoBandwidth,
    ];

    pub fn index(self) -> usize {
        match self {
            ResourceKind::Compute => 0,
            ResourceKind::MemoryBandwidth => 1,
            ResourceKind::IoBandwidth => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ResourceKind::Compute => "compute",
            ResourceKind::MemoryBandwidth => "memory",
            ResourceKind::IoBandwidth => "io",
        }
    }

    pub(crate) fn supply_field(self) -> &'static str {
        match self {
            ResourceKind::Compute => "compute_flops_per_s",
            ResourceKind::MemoryBandwidth => "mem_bytes_per_s",
            ResourceKind::IoBandwidth => "io_bytes_per_s",
        }
    }

    pub(crate) fn demand_field(self) -> &'static str {
        match self {
            ResourceKind::Compute => "compute_flops",
            ResourceKind::MemoryBandwidth => "mem_bytes",
            ResourceKind::IoBandwidth => "io_bytes",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Supply rates of one device, per resource kind, in SI units per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile<T>", bound(deserialize = "T: Scalar"))]
pub struct ResourceProfile<T> {
    compute_flops_per_s: T,
    mem_bytes_per_s: T,
    io_bytes_per_s: T,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct RawProfile<T> {
    compute_flops_per_s: T,
    mem_bytes_per_s: T,
    io_bytes_per_s: T,
}

impl<T: Scalar> TryFrom<RawProfile<T>> for ResourceProfile<T> {
    type Error = PerfError;

    fn try_from(raw: RawProfile<T>) -> Result<Self, Self::Error> {
        ResourceProfile::new(raw.compute_flops_per_s, raw.mem_bytes_per_s, raw.io_bytes_per_s)
    }
}

impl<T: Scalar> ResourceProfile<T> {
    pub fn new(compute_flops_per_s: T, mem_bytes_per_s: T, io_bytes_per_s: T) -> Result<Self, PerfError> {
        Self::from_rates([compute_flops_per_s, mem_bytes_per_s, io_bytes_per_s])
    }

    /// Builds a profile from rates indexed by [`ResourceKind::index`].
    pub fn from_rates(rates: [T; 3]) -> Result<Self, PerfError> {
        for kind in ResourceKind::ALL {
            let value = rates[kind.index()];
            if !(value.is_finite() && value > T::zero()) {
                return Err(PerfError::InvalidProfile {
                    field: kind.supply_field(),
                    value: value.as_f64(),
                });
            }
        }
        Ok(Self {
            compute_flops_per_s: rates[0],
            mem_bytes_per_s: rates[1],
            io_bytes_per_s: rates[2],
        })
    }

    pub fn rate(&self, kind: ResourceKind) -> T {
        match kind {
            ResourceKind::Compute => self.compute_flops_per_s,
            ResourceKind::MemoryBandwidth => self.mem_bytes_per_s,
            ResourceKind::IoBandwidth => self.io_bytes_per_s,
        }
    }

    pub fn rates(&self) -> [T; 3] {
        [self.compute_flops_per_s, self.mem_bytes_per_s, self.io_bytes_per_s]
    }

    /// Returns a copy with one rate replaced.
    pub fn with_rate(&self, kind: ResourceKind, value: T) -> Result<Self, PerfError> {
        let mut rates = self.rates();
        rates[kind.index()] = value;
        Self::from_rates(rates)
    }

    /// Returns a copy with one rate multiplied by `factor`.
    pub fn scaled(&self, kind: ResourceKind, factor: T) -> Result<Self, PerfError> {
        self.with_rate(kind, self.rate(kind) * factor)
    }
}

/// Total requirement of one task, per resource kind, in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDemand<T>", bound(deserialize = "T: Scalar"))]
pub struct TaskDemand<T> {
    compute_flops: T,
    mem_bytes: T,
    io_bytes: T,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct RawDemand<T> {
    #[serde(default = "zero")]
    compute_flops: T,
    #[serde(default = "zero")]
    mem_bytes: T,
    #[serde(default = "zero")]
    io_bytes: T,
}

fn zero<T: Scalar>() -> T {
    T::zero()
}

impl<T: Scalar> TryFrom<RawDemand<T>> for TaskDemand<T> {
    type Error = PerfError;

    fn try_from(raw: RawDemand<T>) -> Result<Self, Self::Error> {
        TaskDemand::new(raw.compute_flops, raw.mem_bytes, raw.io_bytes)
    }
}

impl<T: Scalar> TaskDemand<T> {
    pub fn new(compute_flops: T, mem_bytes: T, io_bytes: T) -> Result<Self, PerfError> {
        Self::from_amounts([compute_flops, mem_bytes, io_bytes])
    }

    pub fn from_amounts(amounts: [T; 3]) -> Result<Self, PerfError> {
        for kind in ResourceKind::ALL {
            let value = amounts[kind.index()];
            if !(value.is_finite() && value >= T::zero()) {
                return Err(PerfError::InvalidDemand {
                    field: kind.demand_field(),
                    value: value.as_f64(),
                });
            }
        }
        if amounts.iter().all(|v| *v == T::zero()) {
            return Err(PerfError::ZeroDemand);
        }
        Ok(Self {
            compute_flops: amounts[0],
            mem_bytes: amounts[1],
            io_bytes: amounts[2],
        })
    }

    /// A demand that draws on a single resource.
    pub fn only(kind: ResourceKind, amount: T) -> Result<Self, PerfError> {
        let mut amounts = [T::zero(); 3];
        amounts[kind.index()] = amount;
        Self::from_amounts(amounts)
    }

    pub fn amount(&self, kind: ResourceKind) -> T {
        match kind {
            ResourceKind::Compute => self.compute_flops,
            ResourceKind::MemoryBandwidth => self.mem_bytes,
            ResourceKind::IoBandwidth => self.io_bytes,
        }
    }

    pub fn amounts(&self) -> [T; 3] {
        [self.compute_flops, self.mem_bytes, self.io_bytes]
    }

    /// Kinds with a strictly positive requirement, in [`ResourceKind::ALL`] order.
    pub fn positive_kinds(&self) -> Vec<ResourceKind> {
        ResourceKind::ALL
            .into_iter()
            .filter(|k| self.amount(*k) > T::zero())
            .collect()
    }
}

/// Whether two resources can be busy at the same time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    Serial,
    Parallel,
}

/// Pairwise overlap relation over the three resource kinds.
///
/// A non-transitive `Serial` relation (two serial pairs, one parallel pair)
/// is evaluated through its transitive closure: resources chained by serial
/// links form one class whose busy times add.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelismRule {
    pub compute_memory: Overlap,
    pub compute_io: Overlap,
    pub memory_io: Overlap,
}

impl Default for ParallelismRule {
    fn default() -> Self {
        Self {
            compute_memory: Overlap::Serial,
            compute_io: Overlap::Parallel,
            memory_io: Overlap::Parallel,
        }
    }
}

impl ParallelismRule {
    pub fn uniform(overlap: Overlap) -> Self {
        Self {
            compute_memory: overlap,
            compute_io: overlap,
            memory_io: overlap,
        }
    }

    pub fn all_serial() -> Self {
        Self::uniform(Overlap::Serial)
    }

    pub fn all_parallel() -> Self {
        Self::uniform(Overlap::Parallel)
    }

    /// Overlap between two distinct kinds. A kind is trivially serial with itself.
    pub fn between(&self, a: ResourceKind, b: ResourceKind) -> Overlap {
        use ResourceKind::*;
        match (a, b) {
            (Compute, MemoryBandwidth) | (MemoryBandwidth, Compute) => self.compute_memory,
            (Compute, IoBandwidth) | (IoBandwidth, Compute) => self.compute_io,
            (MemoryBandwidth, IoBandwidth) | (IoBandwidth, MemoryBandwidth) => self.memory_io,
            _ => Overlap::Serial,
        }
    }

    /// Partitions `kinds` into serial classes (connected components of the
    /// serial relation). Classes are ordered by their smallest member and
    /// members keep the order of `kinds`.
    pub fn serial_classes(&self, kinds: &[ResourceKind]) -> Vec<Vec<ResourceKind>> {
        let mut label: Vec<usize> = (0..kinds.len()).collect();
        // three nodes at most, so relabel until stable
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..kinds.len() {
                for j in 0..kinds.len() {
                    if i != j
                        && self.between(kinds[i], kinds[j]) == Overlap::Serial
                        && label[j] < label[i]
                    {
                        label[i] = label[j];
                        changed = true;
                    }
                }
            }
        }
        let mut classes: Vec<(usize, Vec<ResourceKind>)> = Vec::new();
        for (i, kind) in kinds.iter().enumerate() {
            match classes.iter_mut().find(|(l, _)| *l == label[i]) {
                Some((_, members)) => members.push(*kind),
                None => classes.push((label[i], vec![*kind])),
            }
        }
        classes.into_iter().map(|(_, m)| m).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_rejects_non_positive_rates() {
        let err = ResourceProfile::new(1.0_f64, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, PerfError::InvalidProfile { field: "mem_bytes_per_s", .. }));
        assert!(ResourceProfile::new(f64::INFINITY, 1.0, 1.0).is_err());
    }

    #[test]
    fn demand_rejects_negative_and_all_zero() {
        assert!(matches!(
            TaskDemand::new(-1.0_f64, 0.0, 0.0).unwrap_err(),
            PerfError::InvalidDemand { field: "compute_flops", .. }
        ));
        assert!(matches!(TaskDemand::new(0.0_f64, 0.0, 0.0).unwrap_err(), PerfError::ZeroDemand));
    }

    #[test]
    fn documents_use_si_field_names() {
        let profile: ResourceProfile<f64> = serde_json::from_str(
            r#"{"compute_flops_per_s": 312e12, "mem_bytes_per_s": 2.039e12, "io_bytes_per_s": 25e9}"#,
        )
        .unwrap();
        assert_eq!(profile.rate(ResourceKind::MemoryBandwidth), 2.039e12);
        let demand: TaskDemand<f32> = serde_json::from_str(r#"{"mem_bytes": 1e9}"#).unwrap();
        assert_eq!(demand.positive_kinds(), vec![ResourceKind::MemoryBandwidth]);
        let text = serde_json::to_string(&demand).unwrap();
        assert!(text.contains("\"compute_flops\"") && text.contains("\"io_bytes\""));
        assert!(serde_json::from_str::<ResourceProfile<f64>>(
            r#"{"compute_flops_per_s": -1, "mem_bytes_per_s": 1, "io_bytes_per_s": 1}"#
        )
        .is_err());
    }

    #[test]
    fn default_rule_classes() {
        let rules = ParallelismRule::default();
        let classes = rules.serial_classes(&ResourceKind::ALL);
        assert_eq!(
            classes,
            vec![
                vec![ResourceKind::Compute, ResourceKind::MemoryBandwidth],
                vec![ResourceKind::IoBandwidth]
            ]
        );
        assert_eq!(ParallelismRule::all_serial().serial_classes(&ResourceKind::ALL).len(), 1);
        assert_eq!(ParallelismRule::all_parallel().serial_classes(&ResourceKind::ALL).len(), 3);
    }

    #[test]
    fn non_transitive_serial_chain_is_closed() {
        let rules = ParallelismRule {
            compute_memory: Overlap::Serial,
            compute_io: Overlap::Parallel,
            memory_io: Overlap::Serial,
        };
        assert_eq!(rules.serial_classes(&ResourceKind::ALL).len(), 1);
    }
}
