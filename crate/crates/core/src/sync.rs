//! CPU-GPU time synchronization and log-of-interest identification.
//!
//! The GPU counter value `T0` is read from the CPU; the read completes at CPU time
//! `Tc`. The counter was latched when the read started, so `T0` maps to
//! `Tc - read_delay`. Every log entry carries a counter value and is mapped
//! through that anchor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{ExecutionRecord, GpuTimestamp, LoiSample, Nanos, RunRecord};

/// Median of measured timestamp-read latencies (lower median for even counts).
pub fn calibrate_read_delay(samples: &[Nanos]) -> Result<Nanos> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("read-delay samples"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    Ok(sorted[(sorted.len() - 1) / 2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncModel {
    pub tc_cpu: Nanos,
    pub t0_gpu: GpuTimestamp,
    pub read_delay_est: Nanos,
}

impl SyncModel {
    pub fn from_run(run: &RunRecord) -> Self {
        SyncModel {
            tc_cpu: run.tc_cpu,
            t0_gpu: run.t0_gpu,
            read_delay_est: run.read_delay,
        }
    }

    pub fn gpu_to_cpu(&self, ts: GpuTimestamp) -> Result<Nanos> {
        gpu_to_cpu(self, ts)
    }
}

/// CPU-domain time of a GPU counter reading.
pub fn gpu_to_cpu(sync: &SyncModel, ts: GpuTimestamp) -> Result<Nanos> {
    if ts.tick_period != sync.t0_gpu.tick_period {
        return Err(Error::TickPeriodMismatch {
            anchor: sync.t0_gpu.tick_period,
            timestamp: ts.tick_period,
        });
    }
    Ok(sync.tc_cpu - sync.read_delay_est + (ts.ticks - sync.t0_gpu.ticks) * ts.tick_period)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoiMode {
    /// Drop samples whose averaging window is contaminated.
    #[default]
    Strict,
    /// Keep them, tagged `mixed`.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoiOptions {
    pub averaging_window: Nanos,
    pub mode: LoiMode,
    /// Idle gaps between executions up to this length count as back to back.
    pub gap_tolerance: Nanos,
}

impl LoiOptions {
    pub fn new(averaging_window: Nanos, mode: LoiMode) -> Self {
        LoiOptions {
            averaging_window,
            mode,
            gap_tolerance: 0,
        }
    }
}

/// Resolves each power log entry of `run` to the execution it was taken in.
///
/// An entry belongs to the execution whose `[start_cpu, end_cpu)` contains its
/// synchronized timestamp; its TOI is the offset from `start_cpu`. An entry is
/// *mixed* when its trailing averaging window reaches into an idle gap between
/// executions or into an execution of a different kernel. Idle time before the
/// first execution does not make an entry mixed.
pub fn identify_loi(run: &RunRecord, sync: &SyncModel, opts: &LoiOptions) -> Result<Vec<LoiSample>> {
    resolve(run, opts, |ts| sync.gpu_to_cpu(ts))
}

/// Baseline without synchronization: the GPU counter is read as if it were CPU time.
pub fn identify_loi_unsynchronized(run: &RunRecord, opts: &LoiOptions) -> Result<Vec<LoiSample>> {
    resolve(run, opts, |ts| Ok(ts.nominal_ns()))
}

fn resolve<F>(run: &RunRecord, opts: &LoiOptions, to_cpu: F) -> Result<Vec<LoiSample>>
where
    F: Fn(GpuTimestamp) -> Result<Nanos>,
{
    let execs = &run.executions;
    let mut out = Vec::new();
    for entry in &run.log {
        let t = to_cpu(entry.gpu_ts)?;
        let i = execs.partition_point(|e| e.start_cpu <= t);
        if i == 0 || t >= execs[i - 1].end_cpu {
            continue;
        }
        let exec = &execs[i - 1];
        let mixed = window_is_mixed(execs, i - 1, t, opts);
        if mixed && opts.mode == LoiMode::Strict {
            continue;
        }
        out.push(LoiSample {
            run_id: run.run_id,
            exec_index: exec.exec_index,
            kernel_id: exec.kernel_id.clone(),
            toi: t - exec.start_cpu,
            power: entry.power,
            mixed,
        });
    }
    Ok(out)
}

fn window_is_mixed(execs: &[ExecutionRecord], idx: usize, t: Nanos, opts: &LoiOptions) -> bool {
    // window covers nanoseconds [first, t]
    let first = t - opts.averaging_window + 1;
    let kernel = &execs[idx].kernel_id;
    let mut j = idx;
    while first < execs[j].start_cpu {
        if j == 0 {
            return false;
        }
        let prev = &execs[j - 1];
        if execs[j].start_cpu - prev.end_cpu > opts.gap_tolerance || prev.kernel_id != *kernel {
            return true;
        }
        j -= 1;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{ComponentPower, PowerLogEntry};

    #[test]
    fn calibration_examples() {
        assert_eq!(calibrate_read_delay(&[100]).unwrap(), 100);
        assert_eq!(calibrate_read_delay(&[90, 100, 300]).unwrap(), 100);
        assert_eq!(calibrate_read_delay(&[300, 90, 100, 120]).unwrap(), 100);
        assert!(matches!(calibrate_read_delay(&[]), Err(Error::EmptyInput(_))));
    }

    fn anchor() -> SyncModel {
        SyncModel {
            tc_cpu: 1_000_000,
            t0_gpu: GpuTimestamp::new(77_000, 10),
            read_delay_est: 1_000,
        }
    }

    #[test]
    fn gpu_to_cpu_examples() {
        let s = anchor();
        assert_eq!(gpu_to_cpu(&s, s.t0_gpu).unwrap(), 999_000);
        assert_eq!(gpu_to_cpu(&s, GpuTimestamp::new(77_500, 10)).unwrap(), 1_004_000);
        assert!(matches!(
            gpu_to_cpu(&s, GpuTimestamp::new(77_500, 5)),
            Err(Error::TickPeriodMismatch { .. })
        ));
    }

    fn exec(i: u32, kernel: &str, start: Nanos, end: Nanos) -> ExecutionRecord {
        ExecutionRecord {
            exec_index: i,
            kernel_id: kernel.into(),
            start_cpu: start,
            end_cpu: end,
        }
    }

    fn run_with(execs: Vec<ExecutionRecord>, sample_cpu: &[Nanos]) -> RunRecord {
        // identity sync: tick 1 ns, anchor at 0
        RunRecord {
            run_id: 7,
            t0_gpu: GpuTimestamp::new(0, 1),
            tc_cpu: 0,
            read_delay: 0,
            pre_delay: 0,
            executions: execs,
            log: sample_cpu
                .iter()
                .map(|&t| PowerLogEntry {
                    gpu_ts: GpuTimestamp::new(t, 1),
                    power: ComponentPower::from_parts(1.0, 1.0, 1.0, 1.0),
                })
                .collect(),
        }
    }

    #[test]
    fn samples_in_idle_gaps_yield_no_loi() {
        let run = run_with(
            vec![exec(0, "k", 1_100, 1_200), exec(1, "k", 2_100, 2_200)],
            &[1_000, 2_000, 3_000],
        );
        let opts = LoiOptions::new(1_000, LoiMode::Lenient);
        assert!(identify_loi(&run, &SyncModel::from_run(&run), &opts).unwrap().is_empty());
    }

    #[test]
    fn mixed_rules() {
        let w = 1_000;
        // back to back same kernel, then a gap, then another kernel
        let execs = vec![
            exec(0, "k", 10_000, 11_500),
            exec(1, "k", 11_500, 13_000),
            exec(2, "k", 13_400, 14_900),
            exec(3, "x", 14_900, 15_200),
            exec(4, "k", 15_200, 16_700),
        ];
        let samples = [10_300, 11_800, 13_700, 14_600, 15_500, 16_500];
        let run = run_with(execs, &samples);
        let sync = SyncModel::from_run(&run);
        let lenient = identify_loi(&run, &sync, &LoiOptions::new(w, LoiMode::Lenient)).unwrap();
        let got: Vec<(u32, Nanos, bool)> = lenient.iter().map(|l| (l.exec_index, l.toi, l.mixed)).collect();
        assert_eq!(
            got,
            vec![
                (0, 300, false),  // reaches into pre-run idle only
                (1, 300, false),  // reaches into the previous back-to-back execution
                (2, 300, true),   // reaches into the 400 ns gap
                (2, 1_200, false),
                (4, 300, true),   // reaches into kernel x
                (4, 1_300, false),
            ]
        );
        let strict = identify_loi(&run, &sync, &LoiOptions::new(w, LoiMode::Strict)).unwrap();
        assert_eq!(strict.len(), 4);
        assert!(strict.iter().all(|l| !l.mixed));

        let tolerant = LoiOptions {
            gap_tolerance: 400,
            ..LoiOptions::new(w, LoiMode::Strict)
        };
        assert_eq!(identify_loi(&run, &sync, &tolerant).unwrap().len(), 5);
    }

    #[test]
    fn boundaries_are_half_open() {
        let run = run_with(vec![exec(0, "k", 1_000, 2_000)], &[1_000, 1_999, 2_000]);
        let l = identify_loi(&run, &SyncModel::from_run(&run), &LoiOptions::new(10, LoiMode::Strict)).unwrap();
        let tois: Vec<Nanos> = l.iter().map(|s| s.toi).collect();
        assert_eq!(tois, vec![0, 999]);
    }
}
