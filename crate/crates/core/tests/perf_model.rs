use clusterdiag_core::perf_model::{
    calibrate_mix_for_ratio, predict_mix, predict_multi, predict_single, ridge_point, roofline_curve,
    Overlap, ParallelismRule, ResourceKind,
};
use clusterdiag_core::{MixEntry, ResourceProfile, TaskDemand, WorkloadMix};
use proptest::prelude::*;

#[path = "support/perf_oracle.rs"]
mod perf_oracle;
use perf_oracle::{event_oracle, serial_matrix, KINDS};

fn overlap() -> impl Strategy<Value = Overlap> {
    prop_oneof![Just(Overlap::Serial), Just(Overlap::Parallel)]
}

fn rules() -> impl Strategy<Value = ParallelismRule> {
    (overlap(), overlap(), overlap()).prop_map(|(a, b, c)| ParallelismRule {
        compute_memory: a,
        compute_io: b,
        memory_io: c,
    })
}

fn rate() -> impl Strategy<Value = f64> {
    1e-3..1e6f64
}

fn amount() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 3 => 1e-3..1e6f64]
}

fn demand() -> impl Strategy<Value = [f64; 3]> {
    [amount(), amount(), amount()].prop_filter("some demand", |m| m.iter().any(|x| *x > 0.0))
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn event_oracle_agrees(m in demand(), n in [rate(), rate(), rate()], r in rules()) {
        let p = predict_multi(&TaskDemand::from_amounts(m).unwrap(), &ResourceProfile::from_rates(n).unwrap(), &r);
        let oracle = event_oracle(m, n, serial_matrix(&r));
        prop_assert!(close(p.total_time, oracle, 1e-9), "{} vs {}", p.total_time, oracle);
        prop_assert!(close(p.rate * p.total_time, 1.0, 1e-12));
    }

    #[test]
    fn composition_bounds(m in demand(), n in [rate(), rate(), rate()], r in rules()) {
        let p = predict_multi(&TaskDemand::from_amounts(m).unwrap(), &ResourceProfile::from_rates(n).unwrap(), &r);
        let max = p.busy.iter().cloned().fold(0.0, f64::max);
        let sum: f64 = p.busy.iter().sum();
        prop_assert!(max <= p.total_time * (1.0 + 1e-12));
        prop_assert!(p.total_time <= sum * (1.0 + 1e-12));
    }

    #[test]
    fn uniform_rules_give_sum_and_max(m in demand(), n in [rate(), rate(), rate()]) {
        let d = TaskDemand::from_amounts(m).unwrap();
        let p = ResourceProfile::from_rates(n).unwrap();
        let times: Vec<f64> = (0..3).map(|k| m[k] / n[k]).collect();
        let serial = predict_multi(&d, &p, &ParallelismRule::all_serial());
        let parallel = predict_multi(&d, &p, &ParallelismRule::all_parallel());
        prop_assert!(close(serial.total_time, times.iter().sum(), 1e-12));
        prop_assert!(close(parallel.total_time, times.iter().cloned().fold(0.0, f64::max), 1e-12));
    }

    #[test]
    fn single_resource_exactness(m0 in 1e-6..1e15f64, n0 in 1e-6..1e15f64, k in 0usize..3) {
        let d = TaskDemand::only(KINDS[k], m0).unwrap();
        let mut rates = [1.0; 3];
        rates[k] = n0;
        let p = predict_single(&d, &ResourceProfile::from_rates(rates).unwrap()).unwrap();
        prop_assert!(close(p.rate * m0, n0, 4.0 * f64::EPSILON));
        prop_assert_eq!(p.bottleneck, vec![KINDS[k]]);
    }

    #[test]
    fn monotone_in_supply_and_demand(
        m in demand(),
        n in [rate(), rate(), rate()],
        r in rules(),
        k in 0usize..3,
        factor in 1.0..10.0f64,
    ) {
        let d = TaskDemand::from_amounts(m).unwrap();
        let p = ResourceProfile::from_rates(n).unwrap();
        let base = predict_multi(&d, &p, &r).rate;
        let faster = predict_multi(&d, &p.scaled(KINDS[k], factor).unwrap(), &r).rate;
        prop_assert!(faster >= base * (1.0 - 1e-12));
        let mut more = m;
        more[k] = if more[k] == 0.0 { factor } else { more[k] * factor };
        let heavier = predict_multi(&TaskDemand::from_amounts(more).unwrap(), &p, &r).rate;
        prop_assert!(heavier <= base * (1.0 + 1e-12));
    }

    #[test]
    fn joint_scaling_is_invariant(m in demand(), n in [rate(), rate(), rate()], r in rules(), s in 1e-3..1e3f64) {
        let base = predict_multi(&TaskDemand::from_amounts(m).unwrap(), &ResourceProfile::from_rates(n).unwrap(), &r);
        let scaled = predict_multi(
            &TaskDemand::from_amounts(m.map(|x| x * s)).unwrap(),
            &ResourceProfile::from_rates(n.map(|x| x * s)).unwrap(),
            &r,
        );
        prop_assert!(close(base.rate, scaled.rate, 1e-12));
    }

    #[test]
    fn roofline_is_monotone_and_capped(
        n in [rate(), rate(), rate()],
        mut grid in proptest::collection::vec(1e-4..1e4f64, 1..60),
    ) {
        let p = ResourceProfile::from_rates(n).unwrap();
        grid.sort_by(f64::total_cmp);
        let curve = roofline_curve(&p, &grid).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
        }
        for (i, a) in &curve {
            prop_assert!(*a <= n[0]);
            prop_assert!(close(*a, n[0].min(i * n[1]), 1e-15));
        }
    }
}

#[test]
fn ridge_sits_at_compute_over_bandwidth() {
    let p = ResourceProfile::new(312e12, 2.039e12, 1e11).unwrap();
    let ridge = ridge_point(&p);
    assert_eq!(ridge, 312e12 / 2.039e12);
    let curve = roofline_curve(&p, &[ridge, ridge * 0.5, 10.0, 1e9]).unwrap();
    assert_eq!(curve[0].1, 312e12);
    assert!(curve[1].1 < 312e12);
    assert!((curve[2].1 - 2.039e13).abs() < 1e-3);
    assert_eq!(curve[3].1, 312e12);
}

#[test]
fn throttled_demand_matches_event_oracle() {
    let m = [141e12, 100e9, 0.0];
    let nominal = [141e12, 2e12, 1e11];
    let throttled = [141e12 * 200.0 / 1410.0, 2e12, 1e11];
    let rules = ParallelismRule::default();
    let s = serial_matrix(&rules);
    let expected = event_oracle(m, nominal, s) / event_oracle(m, throttled, s);
    let d = TaskDemand::from_amounts(m).unwrap();
    let got = predict_multi(&d, &ResourceProfile::from_rates(throttled).unwrap(), &rules).rate
        / predict_multi(&d, &ResourceProfile::from_rates(nominal).unwrap(), &rules).rate;
    assert!(close(got, expected, 1e-12), "{got} vs {expected}");
}

#[test]
fn one_third_calibration_checks_out_forward() {
    let base = ResourceProfile::new(1410.0, 1000.0, 500.0).unwrap();
    let degraded = base.with_rate(ResourceKind::Compute, 200.0).unwrap();
    let rules = ParallelismRule::default();
    let mix = calibrate_mix_for_ratio(&base, &degraded, 1.0 / 3.0, &rules).unwrap();
    assert_eq!(mix.entries().len(), 2);
    let ratio = predict_mix(&mix, &degraded, &rules).unwrap().rate / predict_mix(&mix, &base, &rules).unwrap().rate;
    assert!((ratio - 1.0 / 3.0).abs() < 1e-6, "{ratio}");
    // cross-check the aggregate against the event schedule
    let agg = mix.aggregate().unwrap().amounts();
    let s = serial_matrix(&rules);
    let oracle = event_oracle(agg, base.rates(), s) / event_oracle(agg, degraded.rates(), s);
    assert!((oracle - 1.0 / 3.0).abs() < 1e-6, "{oracle}");
}

#[test]
fn compute_io_sweep_is_max_of_two_lines() {
    let p = ResourceProfile::new(100.0, 50.0, 20.0).unwrap();
    let c = TaskDemand::only(ResourceKind::Compute, 300.0).unwrap();
    let io = TaskDemand::only(ResourceKind::IoBandwidth, 40.0).unwrap();
    let rules = ParallelismRule::default();
    for i in 0..=100 {
        let x = i as f64 / 100.0;
        let mix = WorkloadMix::new(vec![
            MixEntry { demand: c, proportion: x },
            MixEntry { demand: io, proportion: 1.0 - x },
        ])
        .unwrap();
        let t = predict_mix(&mix, &p, &rules).unwrap().total_time;
        let expected = (x * 3.0).max((1.0 - x) * 2.0);
        assert!((t - expected).abs() < 1e-12, "x={x}: {t} vs {expected}");
    }
}
