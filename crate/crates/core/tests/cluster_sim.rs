use clusterdiag_core::cluster_sim::script::{compile, ScriptLimits};
use clusterdiag_core::cluster_sim::{
    list_checks, CheckScope, Cluster, ClusterConfig, ClusterTopology, FaultKind, FaultSpec, JobSpec,
    TimeWindow,
};
use clusterdiag_core::perf_model::ResourceKind;
use clusterdiag_core::{MixEntry, TaskDemand, WorkloadMix};
use proptest::prelude::*;

fn job(id: &str, gpus: &[&str], iterations: usize) -> JobSpec {
    let mix = WorkloadMix::new(vec![
        MixEntry { demand: TaskDemand::only(ResourceKind::Compute, 100e12).unwrap(), proportion: 0.6 },
        MixEntry { demand: TaskDemand::only(ResourceKind::MemoryBandwidth, 1e12).unwrap(), proportion: 0.3 },
        MixEntry { demand: TaskDemand::only(ResourceKind::IoBandwidth, 2e9).unwrap(), proportion: 0.1 },
    ])
    .unwrap();
    JobSpec {
        id: id.into(),
        mix,
        gpus: gpus.iter().map(|g| g.to_string()).collect(),
        iterations,
    }
}

fn fault_kind() -> impl Strategy<Value = FaultKind> {
    prop_oneof![
        (50.0..1400.0f64).prop_map(|target_mhz| FaultKind::GpuFrequencyThrottle { target_mhz }),
        (0.05..0.95f64).prop_map(|factor| FaultKind::LinkDegrade { factor }),
        (1e6..1e10f64).prop_map(|bytes_per_s| FaultKind::MemoryLeak { bytes_per_s }),
        (1e6..1e10f64).prop_map(|bytes_per_s| FaultKind::DiskFill { bytes_per_s }),
        (1u64..400).prop_map(|count| FaultKind::EccBurst { count }),
    ]
}

/// A fault on a device of node-0 or node-1; gpu-0..15 live there.
fn fault() -> impl Strategy<Value = FaultSpec> {
    (fault_kind(), 0usize..16, 0usize..2, 0.0..5.0f64).prop_map(|(kind, gpu, server, onset)| {
        let target = if kind.targets_gpu() { format!("gpu-{gpu}") } else { format!("node-{server}") };
        FaultSpec::new(kind, target).at(onset)
    })
}

fn run(seed: u64, faults: &[FaultSpec], gpus: &[&str]) -> (String, String) {
    let mut c = Cluster::build(ClusterTopology::bundled(), seed).unwrap();
    for f in faults {
        c.inject_fault(f.clone()).unwrap();
    }
    let log = c.run_job(&job("j", gpus, 8)).unwrap();
    let telemetry = c.sample_telemetry(TimeWindow::new(0.0, c.now())).unwrap();
    let lines: Vec<String> = telemetry.iter().map(|s| s.to_line()).collect();
    (serde_json::to_string(&log).unwrap(), lines.join("\n"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn identical_inputs_are_bit_identical(seed in any::<u64>(), faults in proptest::collection::vec(fault(), 0..3)) {
        let gpus = ["gpu-0", "gpu-1", "gpu-8"];
        prop_assert_eq!(run(seed, &faults, &gpus), run(seed, &faults, &gpus));
    }

    #[test]
    fn faults_stay_local(seed in any::<u64>(), f in fault()) {
        // the job runs on node-3, away from every generated fault target
        let gpus = ["gpu-24", "gpu-25"];
        let mut clean = Cluster::build(ClusterTopology::bundled(), seed).unwrap();
        let mut faulty = Cluster::build(ClusterTopology::bundled(), seed).unwrap();
        faulty.inject_fault(f.clone()).unwrap();
        let a = clean.run_job(&job("j", &gpus, 6)).unwrap();
        let b = faulty.run_job(&job("j", &gpus, 6)).unwrap();
        prop_assert_eq!(&a, &b);
        let involved = |device: &str| {
            if device == f.target {
                return true;
            }
            // a server fault involves that server's gpus
            faulty.topology().server(&f.target).is_some_and(|s| s.gpus.iter().any(|g| g.id == device))
        };
        let window = TimeWindow::new(0.0, clean.now());
        let keep = |c: &Cluster| -> Vec<String> {
            c.sample_telemetry(window).unwrap().into_iter().filter(|s| !involved(&s.device)).map(|s| s.to_line()).collect()
        };
        prop_assert_eq!(keep(&clean), keep(&faulty));
    }

    #[test]
    fn clearing_restores_state(seed in any::<u64>(), f in fault(), wait in 0.0..50.0f64) {
        let mut c = Cluster::build(ClusterTopology::bundled(), seed).unwrap();
        c.advance(wait);
        let before = c.device_state();
        let id = c.inject_fault(f.clone().at(0.0)).unwrap();
        c.clear_fault(id).unwrap();
        prop_assert_eq!(c.device_state(), before);
    }

    #[test]
    fn pure_compute_rate_follows_frequency(mhz in 50.0..1410.0f64, gpu in 0usize..32) {
        let mut c = Cluster::new(ClusterTopology::bundled(), ClusterConfig::with_seed(1).noiseless()).unwrap();
        let id = format!("gpu-{gpu}");
        let spec = JobSpec {
            id: "p".into(),
            mix: WorkloadMix::single(TaskDemand::only(ResourceKind::Compute, 50e12).unwrap()),
            gpus: vec![id.clone()],
            iterations: 2,
        };
        let nominal = c.run_job(&spec).unwrap().iterations[0].rate;
        c.inject_fault(FaultSpec::throttle(id, mhz).at(c.now())).unwrap();
        let throttled = c.run_job(&spec).unwrap().iterations[0].rate;
        prop_assert!(((throttled / nominal) - mhz / 1410.0).abs() < 1e-12);
    }
}

#[test]
fn every_fault_kind_has_a_sound_check() {
    let faults = [
        FaultSpec::throttle("gpu-3", 200.0),
        FaultSpec::new(FaultKind::LinkDegrade { factor: 0.4 }, "node-1"),
        FaultSpec::new(FaultKind::MemoryLeak { bytes_per_s: 2e10 }, "node-0"),
        FaultSpec::new(FaultKind::DiskFill { bytes_per_s: 2.5e11 }, "node-2"),
        FaultSpec::new(FaultKind::EccBurst { count: 150 }, "gpu-9"),
    ];
    for fault in faults {
        let mut healthy = Cluster::build(ClusterTopology::bundled(), 4).unwrap();
        let mut broken = Cluster::build(ClusterTopology::bundled(), 4).unwrap();
        broken.inject_fault(fault.clone()).unwrap();
        healthy.advance(120.0);
        broken.advance(120.0);
        let sound = list_checks().into_iter().find(|d| {
            let bad = broken.run_check(&d.capability, d.dimension, &CheckScope::All).unwrap();
            let good = healthy.run_check(&d.capability, d.dimension, &CheckScope::All).unwrap();
            !bad.passed && good.passed && bad.failing_devices.contains(&fault.target)
        });
        assert!(sound.is_some(), "no check detects {}", fault.kind.name());
    }
}

#[test]
fn remediation_script_repairs_a_throttle() {
    let mut c = Cluster::build(ClusterTopology::bundled(), 2).unwrap();
    c.inject_fault(FaultSpec::throttle("gpu-3", 200.0)).unwrap();
    let program = compile("read freq gpu-3\nset_frequency gpu-3 1410\nread freq gpu-3").unwrap();
    let out = program.run(&mut c, "", ScriptLimits::default()).unwrap();
    assert_eq!(out.mutations.len(), 1);
    assert_eq!(out.lines.len(), 3);
    assert!(out.lines[0].contains("200"));
    assert!(out.lines[2].contains("1410"));
}
