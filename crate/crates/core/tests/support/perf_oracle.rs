use clusterdiag_core::perf_model::{Overlap, ParallelismRule, ResourceKind};

pub const KINDS: [ResourceKind; 3] = [
    ResourceKind::Compute,
    ResourceKind::MemoryBandwidth,
    ResourceKind::IoBandwidth,
];

/// Discrete-event schedule of one task. Each resource with positive demand
/// is a job of length m/n. Two jobs conflict when a chain of serial links
/// through other demanded resources joins them; a job starts as soon as no conflicting job is running, in
/// resource order. Returns the makespan.
pub fn event_oracle(m: [f64; 3], n: [f64; 3], serial: [[bool; 3]; 3]) -> f64 {
    let mut conflict = serial;
    for k in (0..3).filter(|&k| m[k] > 0.0) {
        for i in 0..3 {
            for j in 0..3 {
                conflict[i][j] |= conflict[i][k] && conflict[k][j];
            }
        }
    }
    let length: Vec<f64> = (0..3).map(|k| m[k] / n[k]).collect();
    let mut pending: Vec<usize> = (0..3).filter(|&k| m[k] > 0.0).collect();
    let mut running: Vec<(usize, f64)> = Vec::new();
    let mut now = 0.0f64;
    let mut makespan = 0.0f64;
    while !pending.is_empty() || !running.is_empty() {
        let mut started = Vec::new();
        for &k in &pending {
            let blocked = running.iter().any(|&(r, _)| conflict[k][r])
                || started.iter().any(|&s: &usize| conflict[k][s]);
            if !blocked {
                started.push(k);
            }
        }
        pending.retain(|k| !started.contains(k));
        for k in started {
            running.push((k, now + length[k]));
        }
        let next = running.iter().map(|&(_, end)| end).fold(f64::INFINITY, f64::min);
        now = next;
        makespan = makespan.max(now);
        running.retain(|&(_, end)| end > now);
    }
    makespan
}

pub fn serial_matrix(rules: &ParallelismRule) -> [[bool; 3]; 3] {
    let mut s = [[false; 3]; 3];
    for (i, a) in KINDS.iter().enumerate() {
        for (j, b) in KINDS.iter().enumerate() {
            s[i][j] = i == j || rules.between(*a, *b) == Overlap::Serial;
        }
    }
    s
}

