use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ParallelismRule, PerfError, ResourceKind, ResourceProfile, TaskDemand};
use crate::Scalar;

/// Predicted steady-state performance of a task on a device.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfPrediction<T> {
    /// Tasks per second.
    pub rate: T,
    /// Modeled wall time of one task, seconds.
    pub total_time: T,
    /// Busy time of each resource per task, indexed by [`ResourceKind::index`].
    pub busy: [T; 3],
    /// Resource (or serial class of resources) realizing `total_time`.
    pub bottleneck: Vec<ResourceKind>,
}

impl<T: Scalar> PerfPrediction<T> {
    pub fn busy_time(&self, kind: ResourceKind) -> T {
        self.busy[kind.index()]
    }
}

/// Performance of a task that draws on exactly one resource: `N0 / M0`.
pub fn predict_single<T: Scalar>(
    demand: &TaskDemand<T>,
    profile: &ResourceProfile<T>,
) -> Result<PerfPrediction<T>, PerfError> {
    let positive = demand.positive_kinds();
    let [kind] = positive.as_slice() else {
        return Err(PerfError::NotSingleResource { positive });
    };
    let supply = profile.rate(*kind);
    let required = demand.amount(*kind);
    let mut busy = [T::zero(); 3];
    busy[kind.index()] = required / supply;
    Ok(PerfPrediction {
        rate: supply / required,
        total_time: required / supply,
        busy,
        bottleneck: vec![*kind],
    })
}

/// Performance of a task drawing on several resources.
///
/// Per-resource busy time is `m[k] / n[k]`. Resources with positive demand
/// are grouped into serial classes; busy times add within a class and
/// distinct classes overlap, so the task takes the longest class sum.
pub fn predict_multi<T: Scalar>(
    demand: &TaskDemand<T>,
    profile: &ResourceProfile<T>,
    rules: &ParallelismRule,
) -> PerfPrediction<T> {
    let mut busy = [T::zero(); 3];
    for kind in ResourceKind::ALL {
        busy[kind.index()] = demand.amount(kind) / profile.rate(kind);
    }
    let classes = rules.serial_classes(&demand.positive_kinds());
    let mut total_time = T::zero();
    let mut bottleneck = Vec::new();
    for class in classes {
        let class_time = class
            .iter()
            .fold(T::zero(), |acc, kind| acc + busy[kind.index()]);
        if class_time > total_time {
            total_time = class_time;
            bottleneck = class;
        }
    }
    PerfPrediction {
        rate: T::one() / total_time,
        total_time,
        busy,
        bottleneck,
    }
}

/// One subtask of a composite workload and its share of the work.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct MixEntry<T> {
    pub demand: TaskDemand<T>,
    pub proportion: T,
}

/// A composite task described by the proportions of its subtasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MixEntry<T>>", into = "Vec<MixEntry<T>>", bound = "T: Scalar")]
pub struct WorkloadMix<T> {
    entries: Vec<MixEntry<T>>,
}

impl<T: Scalar> TryFrom<Vec<MixEntry<T>>> for WorkloadMix<T> {
    type Error = PerfError;

    fn try_from(entries: Vec<MixEntry<T>>) -> Result<Self, Self::Error> {
        WorkloadMix::new(entries)
    }
}

impl<T: Scalar> From<WorkloadMix<T>> for Vec<MixEntry<T>> {
    fn from(mix: WorkloadMix<T>) -> Self {
        mix.entries
    }
}

impl<T: Scalar> WorkloadMix<T> {
    pub fn new(entries: Vec<MixEntry<T>>) -> Result<Self, PerfError> {
        if entries.is_empty() {
            return Err(PerfError::EmptyMix);
        }
        let mut sum = T::zero();
        for (index, entry) in entries.iter().enumerate() {
            let p = entry.proportion;
            if !(p >= T::zero() && p <= T::one()) {
                return Err(PerfError::InvalidProportion {
                    index,
                    value: p.as_f64(),
                });
            }
            sum = sum + p;
        }
        // 1e-9 in f64; a few ulps per entry for narrower types
        let slack = T::lit(1e-9).max(T::epsilon() * T::lit(4.0 * entries.len() as f64));
        if (sum - T::one()).abs() > slack {
            return Err(PerfError::ProportionSum { sum: sum.as_f64() });
        }
        Ok(Self { entries })
    }

    /// A mix of a single task.
    pub fn single(demand: TaskDemand<T>) -> Self {
        Self {
            entries: vec![MixEntry {
                demand,
                proportion: T::one(),
            }],
        }
    }

    pub fn entries(&self) -> &[MixEntry<T>] {
        &self.entries
    }

    /// Proportion-weighted sum of subtask demands.
    pub fn aggregate(&self) -> Result<TaskDemand<T>, PerfError> {
        let mut amounts = [T::zero(); 3];
        for entry in &self.entries {
            for kind in ResourceKind::ALL {
                amounts[kind.index()] =
                    amounts[kind.index()] + entry.proportion * entry.demand.amount(kind);
            }
        }
        TaskDemand::from_amounts(amounts)
    }
}

pub fn predict_mix<T: Scalar>(
    mix: &WorkloadMix<T>,
    profile: &ResourceProfile<T>,
    rules: &ParallelismRule,
) -> Result<PerfPrediction<T>, PerfError> {
    let aggregate = mix.aggregate()?;
    Ok(predict_multi(&aggregate, profile, rules))
}

/// Attainable compute rate `min(n_compute, I * n_memory)` at each arithmetic
/// intensity `I` (FLOP per byte of memory traffic).
pub fn roofline_curve<T: Scalar>(
    profile: &ResourceProfile<T>,
    intensity_grid: &[T],
) -> Result<Vec<(T, T)>, PerfError> {
    if intensity_grid.is_empty() {
        return Err(PerfError::EmptyGrid);
    }
    let peak = profile.rate(ResourceKind::Compute);
    let bandwidth = profile.rate(ResourceKind::MemoryBandwidth);
    intensity_grid
        .iter()
        .enumerate()
        .map(|(index, &intensity)| {
            if !(intensity.is_finite() && intensity > T::zero()) {
                return Err(PerfError::NonPositiveIntensity {
                    index,
                    value: intensity.as_f64(),
                });
            }
            Ok((intensity, peak.min(intensity * bandwidth)))
        })
        .collect()
}

/// Intensity where the memory slope meets the compute roof.
pub fn ridge_point<T: Scalar>(profile: &ResourceProfile<T>) -> T {
    profile.rate(ResourceKind::Compute) / profile.rate(ResourceKind::MemoryBandwidth)
}

/// Two-column whitespace-separated table for plotting tools.
pub fn roofline_table<T: Scalar>(curve: &[(T, T)]) -> String {
    let mut out = String::from("# intensity_flop_per_byte attainable_flop_per_s\n");
    for (intensity, attainable) in curve {
        let _ = writeln!(out, "{:e} {:e}", intensity.as_f64(), attainable.as_f64());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perf_model::Overlap;
    use approx::assert_relative_eq;

    fn profile(c: f64, m: f64, io: f64) -> ResourceProfile<f64> {
        ResourceProfile::new(c, m, io).unwrap()
    }

    #[test]
    fn single_resource_identity() {
        let p = profile(10e9, 10e9, 10e9);
        let d = TaskDemand::only(ResourceKind::MemoryBandwidth, 10e9).unwrap();
        let pred = predict_single(&d, &p).unwrap();
        assert_eq!(pred.rate, 1.0);
        assert_eq!(pred.bottleneck, vec![ResourceKind::MemoryBandwidth]);

        let a800 = profile(312e12, 2.039e12, 25e9);
        let one = TaskDemand::only(ResourceKind::Compute, 312e12).unwrap();
        assert_eq!(predict_single(&one, &a800).unwrap().rate, 1.0);
        let two = TaskDemand::only(ResourceKind::Compute, 624e12).unwrap();
        assert_eq!(predict_single(&two, &a800).unwrap().rate, 0.5);
    }

    #[test]
    fn single_rejects_multi_resource_demand() {
        let d = TaskDemand::new(1.0, 2.0, 0.0).unwrap();
        match predict_single(&d, &profile(1.0, 1.0, 1.0)) {
            Err(PerfError::NotSingleResource { positive }) => assert_eq!(
                positive,
                vec![ResourceKind::Compute, ResourceKind::MemoryBandwidth]
            ),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn multi_default_rules_examples() {
        let p = profile(1.0, 1.0, 1.0);
        let rules = ParallelismRule::default();
        let pred = predict_multi(&TaskDemand::new(10.0, 2.0, 5.0).unwrap(), &p, &rules);
        assert_eq!(pred.total_time, 12.0);
        assert_relative_eq!(pred.rate, 1.0 / 12.0);
        assert_eq!(
            pred.bottleneck,
            vec![ResourceKind::Compute, ResourceKind::MemoryBandwidth]
        );

        let pred = predict_multi(&TaskDemand::new(1.0, 1.0, 10.0).unwrap(), &p, &rules);
        assert_eq!(pred.total_time, 10.0);
        assert_relative_eq!(pred.rate, 0.1);
        assert_eq!(pred.bottleneck, vec![ResourceKind::IoBandwidth]);
    }

    #[test]
    fn uniform_rules_sum_and_max() {
        let p = profile(2.0, 4.0, 8.0);
        let d = TaskDemand::new(6.0, 4.0, 4.0).unwrap();
        let serial = predict_multi(&d, &p, &ParallelismRule::all_serial());
        assert_eq!(serial.total_time, 3.0 + 1.0 + 0.5);
        let parallel = predict_multi(&d, &p, &ParallelismRule::all_parallel());
        assert_eq!(parallel.total_time, 3.0);
        assert_eq!(parallel.bottleneck, vec![ResourceKind::Compute]);
    }

    #[test]
    fn mix_examples() {
        let p = profile(100.0, 50.0, 10.0);
        let rules = ParallelismRule::default();
        let d = TaskDemand::new(30.0, 10.0, 1.0).unwrap();
        assert_eq!(
            predict_mix(&WorkloadMix::single(d), &p, &rules).unwrap(),
            predict_multi(&d, &p, &rules)
        );

        // both subtasks take t = 4 s on their own
        let half = WorkloadMix::new(vec![
            MixEntry { demand: TaskDemand::only(ResourceKind::Compute, 400.0).unwrap(), proportion: 0.5 },
            MixEntry { demand: TaskDemand::only(ResourceKind::MemoryBandwidth, 200.0).unwrap(), proportion: 0.5 },
        ])
        .unwrap();
        assert_eq!(predict_mix(&half, &p, &rules).unwrap().total_time, 4.0);
    }

    #[test]
    fn mix_validation() {
        assert!(matches!(WorkloadMix::<f64>::new(vec![]), Err(PerfError::EmptyMix)));
        let d = TaskDemand::only(ResourceKind::Compute, 1.0_f64).unwrap();
        let bad = vec![
            MixEntry { demand: d, proportion: 0.5 },
            MixEntry { demand: d, proportion: 0.4 },
        ];
        assert!(matches!(WorkloadMix::new(bad), Err(PerfError::ProportionSum { .. })));
        let neg = vec![MixEntry { demand: d, proportion: -0.1 }, MixEntry { demand: d, proportion: 1.1 }];
        assert!(matches!(WorkloadMix::new(neg), Err(PerfError::InvalidProportion { index: 0, .. })));
        let json = r#"[{"demand": {"compute_flops": 1.0}, "proportion": 1.0}]"#;
        let mix: WorkloadMix<f64> = serde_json::from_str(json).unwrap();
        assert_eq!(mix.entries().len(), 1);
        assert!(serde_json::from_str::<WorkloadMix<f64>>("[]").is_err());
    }

    /// Compute-vs-io sweep: the time curve is the max of two lines.
    #[test]
    fn compute_io_sweep_matches_closed_form() {
        let p = profile(10.0, 1.0, 4.0);
        let rules = ParallelismRule::default();
        let compute = TaskDemand::only(ResourceKind::Compute, 30.0).unwrap(); // 3 s alone
        let io = TaskDemand::only(ResourceKind::IoBandwidth, 8.0).unwrap(); // 2 s alone
        let mut vertex = None;
        for step in 0..=100 {
            let share = step as f64 / 100.0;
            let mix = WorkloadMix::new(vec![
                MixEntry { demand: compute, proportion: share },
                MixEntry { demand: io, proportion: 1.0 - share },
            ])
            .unwrap();
            let t = predict_mix(&mix, &p, &rules).unwrap().total_time;
            let closed = f64::max(3.0 * share, 2.0 * (1.0 - share));
            assert_relative_eq!(t, closed, epsilon = 1e-12);
            if vertex.is_none() && 3.0 * share >= 2.0 * (1.0 - share) {
                vertex = Some(share);
            }
        }
        // 3s = 2(1-s) at s = 0.4
        assert_eq!(vertex, Some(0.4));
    }

    #[test]
    fn roofline_examples() {
        let p = profile(312e12, 2.039e12, 25e9);
        let ridge = ridge_point(&p);
        let curve = roofline_curve(&p, &[10.0, ridge, 1e9]).unwrap();
        assert_relative_eq!(curve[0].1, 2.039e13, max_relative = 1e-15);
        assert_eq!(curve[1].1, 312e12);
        assert_eq!(curve[2].1, 312e12);
        assert!(matches!(
            roofline_curve(&p, &[1.0, 0.0]),
            Err(PerfError::NonPositiveIntensity { index: 1, .. })
        ));
        assert!(matches!(roofline_curve(&p, &[]), Err(PerfError::EmptyGrid)));
        let table = roofline_table(&curve);
        assert_eq!(table.lines().count(), 4);
        assert!(table.lines().nth(1).unwrap().starts_with("1e1 "));
    }

    #[test]
    fn works_in_f32() {
        let p = ResourceProfile::new(4.0_f32, 2.0, 1.0).unwrap();
        let d = TaskDemand::new(4.0_f32, 2.0, 3.0).unwrap();
        let pred = predict_multi(&d, &p, &ParallelismRule::default());
        assert_eq!(pred.total_time, 3.0);
        let rules = ParallelismRule { compute_io: Overlap::Serial, ..ParallelismRule::default() };
        assert_eq!(predict_multi(&d, &p, &rules).total_time, 5.0);
    }
}
