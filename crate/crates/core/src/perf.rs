//! Phase tracing, idle fraction, runtime distribution and strong scaling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Compute,
    MaskBuild,
    Pack,
    Unpack,
    Exchange,
    Allreduce,
    Idle,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Compute,
        Phase::MaskBuild,
        Phase::Pack,
        Phase::Unpack,
        Phase::Exchange,
        Phase::Allreduce,
        Phase::Idle,
    ];

    pub fn class(self) -> PhaseClass {
        match self {
            Phase::Compute => PhaseClass::Compute,
            Phase::Idle => PhaseClass::Idle,
            _ => PhaseClass::Communication,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Compute => "compute",
            Phase::MaskBuild => "mask_build",
            Phase::Pack => "pack",
            Phase::Unpack => "unpack",
            Phase::Exchange => "exchange",
            Phase::Allreduce => "allreduce",
            Phase::Idle => "idle",
        }
    }

    /// Buffer preparation, as opposed to moving data between workers.
    fn is_preparation(self) -> bool {
        matches!(self, Phase::MaskBuild | Phase::Pack | Phase::Unpack)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseClass {
    Compute,
    Communication,
    Idle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub worker: usize,
    pub phase: Phase,
    pub start_ns: u64,
    pub end_ns: u64,
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
}

impl TraceEvent {
    pub fn duration_ns(&self) -> u64 {
        self.end_ns - self.start_ns
    }
}

/// Checks `end >= start` and that no worker has overlapping events.
pub fn validate_trace(events: &[TraceEvent]) -> Result<()> {
    let mut by_worker: BTreeMap<usize, Vec<(u64, u64)>> = BTreeMap::new();
    for e in events {
        if e.end_ns < e.start_ns {
            return Err(Error::Validation(format!(
                "event of worker {} ends ({}) before it starts ({})",
                e.worker, e.end_ns, e.start_ns
            )));
        }
        by_worker.entry(e.worker).or_default().push((e.start_ns, e.end_ns));
    }
    for (w, mut spans) in by_worker {
        spans.sort_unstable();
        if let Some(pair) = spans.windows(2).find(|p| p[1].0 < p[0].1) {
            return Err(Error::Validation(format!(
                "worker {w} has overlapping events at {} ns",
                pair[1].0
            )));
        }
    }
    Ok(())
}

pub fn write_trace(events: &[TraceEvent], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(events).expect("trace events serialize");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceEvent>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let events: Vec<TraceEvent> = serde_json::from_str(&text)
        .map_err(|e| Error::format(e.column() as u64, format!("trace {}: {e}", path.display())))?;
    validate_trace(&events)?;
    Ok(events)
}

/// `1 - sum(t) / (N * max(t))`: zero for perfectly balanced workers.
pub fn idle_fraction(t_active: &[f64]) -> Result<f64> {
    if t_active.is_empty() {
        return Err(Error::Validation("idle fraction of zero workers".into()));
    }
    if t_active.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::Validation("active times must be finite and >= 0".into()));
    }
    let max = t_active.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::Validation("all active times are zero".into()));
    }
    let sum: f64 = t_active.iter().sum();
    Ok(1.0 - sum / (t_active.len() as f64 * max))
}

/// Time fractions of a trace, summed over all workers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfReport {
    pub workers: usize,
    pub steps: usize,
    /// Non-idle seconds per worker.
    pub t_active: Vec<f64>,
    pub fr_idle: f64,
    pub compute: f64,
    pub communication: f64,
    pub idle: f64,
    /// Share of communication time spent on masks, packing and unpacking.
    pub comm_preparation: f64,
    /// Share of communication time spent in exchanges and reductions.
    pub comm_transfer: f64,
    pub phase_fractions: BTreeMap<String, f64>,
    /// Wall seconds per traced step, in step order.
    pub step_times: Vec<f64>,
}

pub fn runtime_distribution(events: &[TraceEvent]) -> Result<PerfReport> {
    if events.is_empty() {
        return Err(Error::Validation("empty trace".into()));
    }
    validate_trace(events)?;
    let workers = events.iter().map(|e| e.worker).max().unwrap() + 1;
    let mut per_phase: BTreeMap<Phase, f64> = BTreeMap::new();
    let mut active = vec![0.0; workers];
    let mut steps: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for e in events {
        let d = e.duration_ns() as f64 * 1e-9;
        *per_phase.entry(e.phase).or_default() += d;
        if e.phase != Phase::Idle {
            active[e.worker] += d;
        }
        let span = steps.entry(e.step).or_insert((e.start_ns, e.end_ns));
        span.0 = span.0.min(e.start_ns);
        span.1 = span.1.max(e.end_ns);
    }
    let total: f64 = per_phase.values().sum();
    if total <= 0.0 {
        return Err(Error::Validation("trace has zero total duration".into()));
    }
    let class_sum = |c: PhaseClass| -> f64 {
        per_phase.iter().filter(|(p, _)| p.class() == c).map(|(_, d)| d).sum()
    };
    let comm = class_sum(PhaseClass::Communication);
    let prep: f64 = per_phase.iter().filter(|(p, _)| p.is_preparation()).map(|(_, d)| d).sum();
    let (comm_preparation, comm_transfer) = if comm > 0.0 {
        (prep / comm, (comm - prep) / comm)
    } else {
        (0.0, 0.0)
    };
    let fr_idle = if active.iter().any(|t| *t > 0.0) {
        idle_fraction(&active)?
    } else {
        0.0
    };
    Ok(PerfReport {
        workers,
        steps: steps.len(),
        fr_idle,
        compute: class_sum(PhaseClass::Compute) / total,
        communication: comm / total,
        idle: class_sum(PhaseClass::Idle) / total,
        comm_preparation,
        comm_transfer,
        phase_fractions: Phase::ALL
            .iter()
            .map(|p| (p.name().to_string(), per_phase.get(p).copied().unwrap_or(0.0) / total))
            .collect(),
        step_times: steps.values().map(|(s, e)| (e - s) as f64 * 1e-9).collect(),
        t_active: active,
    })
}

impl PerfReport {
    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut row = |k: &str, v: f64| writeln!(out, "{k},{v}").unwrap();
        row("workers", self.workers as f64);
        row("steps", self.steps as f64);
        row("fr_idle", self.fr_idle);
        row("compute", self.compute);
        row("communication", self.communication);
        row("idle", self.idle);
        row("comm_preparation", self.comm_preparation);
        row("comm_transfer", self.comm_transfer);
        for (k, v) in &self.phase_fractions {
            row(&format!("phase_{k}"), *v);
        }
        for (w, t) in self.t_active.iter().enumerate() {
            row(&format!("t_active_{w}"), *t);
        }
        if !self.step_times.is_empty() {
            row("mean_step_time", self.step_times.iter().sum::<f64>() / self.step_times.len() as f64);
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "{} workers, {} steps\n\
             compute       {:6.2}%\n\
             communication {:6.2}%  (preparation {:.1}%, transfer {:.1}%)\n\
             idle          {:6.2}%\n\
             idle fraction {:.4}\n",
            self.workers,
            self.steps,
            100.0 * self.compute,
            100.0 * self.communication,
            100.0 * self.comm_preparation,
            100.0 * self.comm_transfer,
            100.0 * self.idle,
            self.fr_idle
        )
    }
}

/// Steps discarded before timing.
pub const WARM_STEPS: usize = 10;
/// Minimum number of timed steps per configuration.
pub const MIN_MEASURED_STEPS: usize = 50;

/// A fixed problem that can be run at different worker counts.
pub trait ScalingWorkload {
    /// Runs `steps` optimizer steps on `parts` workers and returns the wall
    /// seconds of each.
    fn run(&mut self, parts: usize, steps: usize) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub parts: usize,
    pub mean_step_time: f64,
    pub speedup: f64,
    pub ideal_speedup: f64,
}

/// Strong-scaling table relative to the smallest worker count.
pub fn scaling_run<W: ScalingWorkload + ?Sized>(
    workload: &mut W,
    parts: &[usize],
    warm: usize,
    measured: usize,
) -> Result<Vec<ScalingRow>> {
    if parts.is_empty() || measured == 0 {
        return Err(Error::Config("scaling run needs worker counts and measured steps".into()));
    }
    let mut means = Vec::with_capacity(parts.len());
    for &p in parts {
        let times = workload.run(p, warm + measured)?;
        if times.len() != warm + measured {
            return Err(Error::Validation(format!(
                "workload returned {} step times for {} steps",
                times.len(),
                warm + measured
            )));
        }
        means.push(times[warm..].iter().sum::<f64>() / measured as f64);
    }
    let base = parts.iter().zip(&means).min_by_key(|(p, _)| **p).unwrap();
    let (p_min, t_min) = (*base.0, *base.1);
    Ok(parts
        .iter()
        .zip(means)
        .map(|(&p, t)| ScalingRow {
            parts: p,
            mean_step_time: t,
            speedup: t_min / t,
            ideal_speedup: p as f64 / p_min as f64,
        })
        .collect())
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from("parts,mean_step_time,speedup,ideal_speedup\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.parts, r.mean_step_time, r.speedup, r.ideal_speedup).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(worker: usize, phase: Phase, start_ns: u64, end_ns: u64) -> TraceEvent {
        TraceEvent {
            worker,
            phase,
            start_ns,
            end_ns,
            step: 0,
            block: None,
        }
    }

    #[test]
    fn idle_fraction_examples() {
        assert_eq!(idle_fraction(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(idle_fraction(&[1.0, 3.0]).unwrap(), 1.0 - 4.0 / 6.0);
        assert_eq!(idle_fraction(&[4.0, 0.0, 0.0, 0.0]).unwrap(), 0.75);
        assert!(idle_fraction(&[0.0, 0.0]).is_err());
        assert!(idle_fraction(&[]).is_err());
    }

    #[test]
    fn constructed_trace_fractions() {
        let events = vec![
            ev(0, Phase::Compute, 0, 60),
            ev(0, Phase::Exchange, 60, 90),
            ev(0, Phase::Idle, 90, 100),
        ];
        let r = runtime_distribution(&events).unwrap();
        assert!((r.compute - 0.6).abs() < 1e-12);
        assert!((r.communication - 0.3).abs() < 1e-12);
        assert!((r.idle - 0.1).abs() < 1e-12);
        assert_eq!(r.comm_transfer, 1.0);
    }

    #[test]
    fn single_worker_without_collectives() {
        let r = runtime_distribution(&[ev(0, Phase::Compute, 5, 50)]).unwrap();
        assert_eq!((r.compute, r.communication, r.idle, r.fr_idle), (1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn overlapping_and_empty_traces_rejected() {
        assert!(runtime_distribution(&[]).is_err());
        let bad = vec![ev(0, Phase::Compute, 0, 10), ev(0, Phase::Pack, 5, 12)];
        assert!(runtime_distribution(&bad).is_err());
        assert!(validate_trace(&[ev(1, Phase::Compute, 9, 3)]).is_err());
    }

    #[test]
    fn trace_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.json");
        let mut events = vec![ev(0, Phase::MaskBuild, 0, 4), ev(1, Phase::Allreduce, 0, 9)];
        events[1].block = Some(2);
        write_trace(&events, &path).unwrap();
        assert_eq!(read_trace(&path).unwrap(), events);
    }

    struct Fixed(Vec<f64>);
    impl ScalingWorkload for Fixed {
        fn run(&mut self, parts: usize, steps: usize) -> Result<Vec<f64>> {
            let t = self.0[parts.trailing_zeros() as usize];
            Ok((0..steps).map(|i| if i < 2 { 100.0 } else { t }).collect())
        }
    }

    #[test]
    fn scaling_table_discards_warm_steps() {
        let rows = scaling_run(&mut Fixed(vec![8.0, 4.0, 3.0]), &[1, 2, 4], 2, 5).unwrap();
        assert_eq!(rows[0].speedup, 1.0);
        assert_eq!(rows[1].speedup, 2.0);
        assert_eq!(rows[2].ideal_speedup, 4.0);
        assert!((rows[2].speedup - 8.0 / 3.0).abs() < 1e-12);
    }
}
