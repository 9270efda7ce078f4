use super::{
    predict_mix, MixEntry, Overlap, ParallelismRule, PerfError, ResourceKind, ResourceProfile,
    TaskDemand, WorkloadMix,
};
use crate::Scalar;

const MAX_BISECTIONS: usize = 200;

/// Finds a two-subtask mix whose rate on `degraded` relative to `base`
/// equals `target`.
///
/// The profiles must differ in exactly one resource rate, lower on the
/// degraded side. The mix pairs a subtask bound by that resource with one
/// bound by an unaffected resource (a serial partner when the rules have
/// one), each taking one second on `base`; the proportion of the first is
/// found by bisection.
pub fn calibrate_mix_for_ratio<T: Scalar>(
    base: &ResourceProfile<T>,
    degraded: &ResourceProfile<T>,
    target: T,
    rules: &ParallelismRule,
) -> Result<WorkloadMix<T>, PerfError> {
    let changed: Vec<ResourceKind> = ResourceKind::ALL
        .into_iter()
        .filter(|k| base.rate(*k) != degraded.rate(*k))
        .collect();
    let [affected] = changed.as_slice() else {
        return Err(PerfError::InvalidArgument(format!(
            "profiles must differ in exactly one resource rate, found {}",
            changed.len()
        )));
    };
    let affected = *affected;
    if degraded.rate(affected) > base.rate(affected) {
        return Err(PerfError::InvalidArgument(format!(
            "degraded {affected} rate exceeds base rate"
        )));
    }
    let partner = ResourceKind::ALL
        .into_iter()
        .filter(|k| *k != affected)
        .find(|k| rules.between(affected, *k) == Overlap::Serial)
        .unwrap_or_else(|| {
            ResourceKind::ALL
                .into_iter()
                .find(|k| *k != affected)
                .expect("three kinds")
        });
    let bound = TaskDemand::only(affected, base.rate(affected))?;
    let other = TaskDemand::only(partner, base.rate(partner))?;

    let mix_at = |share: T| {
        WorkloadMix::new(vec![
            MixEntry { demand: bound, proportion: share },
            MixEntry { demand: other, proportion: T::one() - share },
        ])
    };
    let ratio_at = |share: T| -> Result<T, PerfError> {
        let mix = mix_at(share)?;
        Ok(predict_mix(&mix, degraded, rules)?.rate / predict_mix(&mix, base, rules)?.rate)
    };

    let at_full = ratio_at(T::one())?;
    let at_none = ratio_at(T::zero())?;
    let tolerance = T::lit(1e-12).max(T::epsilon() * T::lit(8.0));
    let (low, high) = (at_full.min(at_none), at_full.max(at_none));
    if !(target.is_finite() && target >= low - tolerance && target <= high + tolerance) {
        return Err(PerfError::NoSolution {
            target: target.as_f64(),
            min: low.as_f64(),
            max: high.as_f64(),
        });
    }
    if (at_full - target).abs() <= tolerance {
        return mix_at(T::one());
    }
    if (at_none - target).abs() <= tolerance {
        return mix_at(T::zero());
    }

    // f(share) = ratio - target changes sign between 0 and 1
    let sign_at_none = at_none > target;
    let (mut lo, mut hi) = (T::zero(), T::one());
    let two = T::lit(2.0);
    for _ in 0..MAX_BISECTIONS {
        let mid = (lo + hi) / two;
        let value = ratio_at(mid)?;
        if (value - target).abs() <= tolerance {
            return mix_at(mid);
        }
        if (value > target) == sign_at_none {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::epsilon() {
            break;
        }
    }
    mix_at((lo + hi) / two)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a800_like() -> (ResourceProfile<f64>, ResourceProfile<f64>) {
        let base = ResourceProfile::new(1410.0, 2e12, 25e9).unwrap();
        let degraded = base.with_rate(ResourceKind::Compute, 200.0).unwrap();
        (base, degraded)
    }

    fn forward_ratio(mix: &WorkloadMix<f64>, base: &ResourceProfile<f64>, degraded: &ResourceProfile<f64>) -> f64 {
        let rules = ParallelismRule::default();
        predict_mix(mix, degraded, &rules).unwrap().rate / predict_mix(mix, base, &rules).unwrap().rate
    }

    #[test]
    fn one_third_target_is_hit() {
        let (base, degraded) = a800_like();
        let mix = calibrate_mix_for_ratio(&base, &degraded, 1.0 / 3.0, &ParallelismRule::default()).unwrap();
        assert!((forward_ratio(&mix, &base, &degraded) - 1.0 / 3.0).abs() < 1e-6);
        // closed form for a serial pair: 1 / (p/r + 1 - p) = 1/3
        let expected_share = 2.0 / (1410.0 / 200.0 - 1.0);
        assert!((mix.entries()[0].proportion - expected_share).abs() < 1e-9);
        assert_eq!(mix.entries()[1].demand.positive_kinds(), vec![ResourceKind::MemoryBandwidth]);
    }

    #[test]
    fn boundaries() {
        let (base, degraded) = a800_like();
        let rules = ParallelismRule::default();
        let mix = calibrate_mix_for_ratio(&base, &degraded, 200.0 / 1410.0, &rules).unwrap();
        assert_eq!(mix.entries()[0].proportion, 1.0);
        let mix = calibrate_mix_for_ratio(&base, &degraded, 1.0 - 1e-7, &rules).unwrap();
        assert!(mix.entries()[0].proportion < 1e-6);
    }

    #[test]
    fn unreachable_target_reports_range() {
        let (base, degraded) = a800_like();
        match calibrate_mix_for_ratio(&base, &degraded, 0.1, &ParallelismRule::default()) {
            Err(PerfError::NoSolution { min, max, .. }) => {
                assert!((min - 200.0 / 1410.0).abs() < 1e-12);
                assert_eq!(max, 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn misuse_is_rejected() {
        let (base, _) = a800_like();
        let same = calibrate_mix_for_ratio(&base, &base, 0.5, &ParallelismRule::default());
        assert!(matches!(same, Err(PerfError::InvalidArgument(_))));
        let faster = base.with_rate(ResourceKind::Compute, 2000.0).unwrap();
        assert!(calibrate_mix_for_ratio(&base, &faster, 0.5, &ParallelismRule::default()).is_err());
    }

    #[test]
    fn parallel_partner_still_bisects() {
        let base = ResourceProfile::new(100.0, 100.0, 100.0).unwrap();
        let degraded = base.with_rate(ResourceKind::IoBandwidth, 25.0).unwrap();
        let rules = ParallelismRule::default();
        let mix = calibrate_mix_for_ratio(&base, &degraded, 0.5, &rules).unwrap();
        let ratio: f64 = predict_mix(&mix, &degraded, &rules).unwrap().rate / predict_mix(&mix, &base, &rules).unwrap().rate;
        assert!((ratio - 0.5_f64).abs() < 1e-9);
    }
}
