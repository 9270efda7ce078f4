use serde::Serialize;

use super::{PerfError, PerfPrediction};
use crate::Scalar;

/// Supply-rate estimate from repeated post-warm-up measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate<T> {
    pub mean: T,
    pub count: usize,
    pub std_error: T,
    pub converged: bool,
}

/// Mean of `samples` after dropping the first `warmup_count`.
///
/// Converged iff `std_error / mean < tolerance` and at least `min_samples`
/// post-warm-up samples were kept. Fails when the series is too short to
/// hold both the warm-up prefix and `min_samples` measurements in total.
pub fn estimate_rate<T: Scalar>(
    samples: &[T],
    warmup_count: usize,
    tolerance: T,
    min_samples: usize,
) -> Result<RateEstimate<T>, PerfError> {
    let required = (warmup_count + 1).max(min_samples);
    if samples.len() < required {
        return Err(PerfError::InsufficientData {
            required,
            available: samples.len(),
        });
    }
    let kept = &samples[warmup_count..];
    let count = kept.len();
    let n = T::from_usize(count).expect("sample count representable");
    let mean = kept.iter().fold(T::zero(), |acc, x| acc + *x) / n;
    let std_error = if count < 2 {
        T::infinity()
    } else {
        let ss = kept
            .iter()
            .fold(T::zero(), |acc, x| acc + (*x - mean) * (*x - mean));
        let variance = ss / (n - T::one());
        variance.sqrt() / n.sqrt()
    };
    let relative = if std_error == T::zero() {
        T::zero()
    } else {
        std_error / mean.abs()
    };
    let converged = relative < tolerance && count >= min_samples;
    Ok(RateEstimate {
        mean,
        count,
        std_error,
        converged,
    })
}

/// Outcome of comparing a measured rate against the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict<T> {
    Normal,
    /// `ratio` is measured / predicted.
    Slow { ratio: T },
}

impl<T> Verdict<T> {
    pub fn is_slow(&self) -> bool {
        matches!(self, Verdict::Slow { .. })
    }
}

/// Default fraction of predicted performance below which a task is slow.
pub const DEFAULT_SLOWDOWN_THRESHOLD: f64 = 0.9;

/// Slow iff `measured < threshold * predicted.rate`; the boundary is Normal.
pub fn detect_slowdown<T: Scalar>(
    predicted: &PerfPrediction<T>,
    measured: T,
    threshold: T,
) -> Result<Verdict<T>, PerfError> {
    if !(measured.is_finite() && measured > T::zero()) {
        return Err(PerfError::InvalidArgument(format!(
            "measured rate must be positive, got {measured}"
        )));
    }
    if !(threshold > T::zero() && threshold < T::one()) {
        return Err(PerfError::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if measured < threshold * predicted.rate {
        Ok(Verdict::Slow {
            ratio: measured / predicted.rate,
        })
    } else {
        Ok(Verdict::Normal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perf_model::{predict_single, ResourceKind, ResourceProfile, TaskDemand};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_series_converges() {
        let est = estimate_rate(&[5.0_f64, 5.0, 5.0, 5.0], 1, 0.01, 3).unwrap();
        assert_eq!(est.mean, 5.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.count, 3);
        assert!(est.converged);
    }

    #[test]
    fn short_series_is_insufficient() {
        let err = estimate_rate(&[1.0_f64, 2.0, 3.0], 0, 0.01, 10).unwrap_err();
        assert!(matches!(err, PerfError::InsufficientData { required: 10, available: 3 }));
        let err = estimate_rate(&[1.0_f64, 2.0], 2, 0.01, 1).unwrap_err();
        assert!(matches!(err, PerfError::InsufficientData { required: 3, .. }));
    }

    #[test]
    fn too_few_kept_samples_is_not_converged() {
        let est = estimate_rate(&[9.0_f64, 5.0, 5.0, 5.0, 5.0, 5.0], 3, 0.5, 5).unwrap();
        assert_eq!(est.count, 3);
        assert!(!est.converged);
    }

    #[test]
    fn iid_samples_recover_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mu = 42.0_f64;
        let samples: Vec<f64> = (0..10_050)
            .map(|_| mu * (1.0 + rng.random_range(-0.05..0.05)))
            .collect();
        let est = estimate_rate(&samples, 50, 1e-3, 100).unwrap();
        assert_eq!(est.count, 10_000);
        assert!((est.mean - mu).abs() < 4.0 * est.std_error, "{est:?}");
        assert!(est.converged);
    }

    fn unit_prediction() -> PerfPrediction<f64> {
        let p = ResourceProfile::new(3.0, 1.0, 1.0).unwrap();
        predict_single(&TaskDemand::only(ResourceKind::Compute, 1.0).unwrap(), &p).unwrap()
    }

    #[test]
    fn slowdown_verdicts() {
        let pred = unit_prediction();
        assert_eq!(detect_slowdown(&pred, 3.0, 0.9).unwrap(), Verdict::Normal);
        match detect_slowdown(&pred, 1.0, 0.9).unwrap() {
            Verdict::Slow { ratio } => assert!((ratio - 1.0 / 3.0).abs() < 1e-12),
            v => panic!("expected slow, got {v:?}"),
        }
        // 0.9 * 3.0 is the exact boundary
        assert_eq!(detect_slowdown(&pred, 0.9 * 3.0, 0.9).unwrap(), Verdict::Normal);
        assert!(detect_slowdown(&pred, 0.0, 0.9).is_err());
        assert!(detect_slowdown(&pred, 1.0, 1.0).is_err());
    }
}
