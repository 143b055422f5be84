//! Deterministic GPU telemetry simulator.
//!
//! Produces [`RunRecord`]s as a real capture would (CPU-side execution timings,
//! one sync anchor, and an averaging power log stamped with GPU counter values)
//! together with a sealed [`GroundTruth`] for verification.
//!
//! Instantaneous power is defined at every integer GPU nanosecond. A logged
//! sample at time `t` is the mean of those values over `(t - window, t]`; the
//! simulator computes it in closed form per curve segment, and
//! [`oracle_logged_average`] recomputes it by brute force.

mod curve;
pub(crate) mod rng;
mod truth;

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sync::calibrate_read_delay;
use crate::telemetry::{
    ComponentPower, ExecutionRecord, GpuTimestamp, Nanos, PowerLogEntry, RunId, RunRecord,
    DEFAULT_TICK_PERIOD_NS, NS_PER_MS,
};

pub use curve::{KernelCurves, PowerCurve};
pub use rng::derive_seed;
pub use truth::{oracle_logged_average, GroundTruth, TrueExecution};

/// Number of latency samples in the simulated read-delay benchmark.
pub const CALIBRATION_SAMPLES: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmupMode {
    /// Power starts low and rises to steady state.
    Settle,
    /// Early executions overshoot power and get throttled back.
    Throttle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupModel {
    pub mode: WarmupMode,
    pub warmup_execs: u32,
    /// Execution-time multipliers for the warm-up executions, each >= 1.
    pub slowdown: Vec<f64>,
    /// Power multipliers for the warm-up executions.
    pub power_scale: Vec<f64>,
}

impl Default for WarmupModel {
    fn default() -> Self {
        WarmupModel {
            mode: WarmupMode::Settle,
            warmup_execs: 3,
            slowdown: vec![1.5, 1.2, 1.05],
            power_scale: vec![1.0, 1.0, 1.0],
        }
    }
}

impl WarmupModel {
    pub fn none() -> Self {
        WarmupModel {
            mode: WarmupMode::Settle,
            warmup_execs: 0,
            slowdown: Vec::new(),
            power_scale: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.warmup_execs as usize;
        if self.slowdown.len() != n || self.power_scale.len() != n {
            return Err(Error::InvalidConfig(format!(
                "warm-up lists must have length warmup_execs = {n}"
            )));
        }
        if self.slowdown.iter().any(|s| !s.is_finite() || *s < 1.0) {
            return Err(Error::InvalidConfig("warm-up slowdown multipliers must be >= 1".into()));
        }
        let scale_ok = match self.mode {
            WarmupMode::Settle => self.power_scale.iter().all(|s| (0.0..=1.0).contains(s)),
            WarmupMode::Throttle => self.power_scale.iter().all(|s| s.is_finite() && *s >= 1.0),
        };
        if !scale_ok {
            return Err(Error::InvalidConfig(format!(
                "{:?} warm-up power_scale out of range: {:?}",
                self.mode, self.power_scale
            )));
        }
        Ok(())
    }

    fn slowdown_for(&self, occurrence: u32) -> f64 {
        self.slowdown.get(occurrence as usize).copied().unwrap_or(1.0)
    }

    fn power_scale_for(&self, occurrence: u32) -> f64 {
        self.power_scale.get(occurrence as usize).copied().unwrap_or(1.0)
    }
}

/// A synthetic kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kernel_id: String,
    pub nominal_exec_time: Nanos,
    /// Relative standard deviation of the execution time.
    #[serde(default)]
    pub exec_time_jitter_rel: f64,
    #[serde(default)]
    pub outlier_prob: f64,
    #[serde(default = "default_outlier_scale")]
    pub outlier_scale: f64,
    pub curve: KernelCurves,
    #[serde(default)]
    pub warmup: WarmupModel,
}

fn default_outlier_scale() -> f64 {
    1.5
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nominal_exec_time <= 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel '{}': nominal_exec_time must be > 0",
                self.kernel_id
            )));
        }
        if !(self.exec_time_jitter_rel >= 0.0 && self.exec_time_jitter_rel.is_finite()) {
            return Err(Error::InvalidConfig("exec_time_jitter_rel must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_prob) {
            return Err(Error::InvalidConfig("outlier_prob must be in [0, 1)".into()));
        }
        if !(self.outlier_scale > 1.0) {
            return Err(Error::InvalidConfig("outlier_scale must be > 1".into()));
        }
        self.curve.validate()?;
        self.warmup.validate()
    }

    /// Same kernel with execution-time noise and outliers removed.
    pub fn noise_free(&self) -> KernelSpec {
        KernelSpec {
            exec_time_jitter_rel: 0.0,
            outlier_prob: 0.0,
            ..self.clone()
        }
    }

    /// Power the kernel draws once warm-up is over, averaged over one execution.
    pub fn steady_mean_power(&self) -> ComponentPower {
        let d = self.nominal_exec_time;
        self.curve.sum_range(d, 0, d).scale(1.0 / d as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoggerSpec {
    pub sample_interval: Nanos,
    pub averaging_window: Nanos,
    pub idle_power: ComponentPower,
}

impl Default for LoggerSpec {
    fn default() -> Self {
        LoggerSpec {
            sample_interval: NS_PER_MS,
            averaging_window: NS_PER_MS,
            idle_power: ComponentPower::from_parts(40.0, 30.0, 20.0, 10.0),
        }
    }
}

impl LoggerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sample_interval <= 0 || self.averaging_window <= 0 {
            return Err(Error::InvalidConfig(
                "sample_interval and averaging_window must be > 0".into(),
            ));
        }
        self.idle_power.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockSpec {
    /// CPU time minus GPU time. Never visible to the analysis side.
    pub cpu_gpu_offset: Nanos,
    pub read_delay_mean: Nanos,
    /// Standard deviation of the timestamp-read latency.
    pub read_delay_jitter: Nanos,
    /// GPU counter rate error in parts per billion (positive = slow counter).
    pub drift_ppb: i64,
    pub tick_period: Nanos,
}

impl Default for ClockSpec {
    fn default() -> Self {
        ClockSpec {
            cpu_gpu_offset: 2_500_000_321,
            read_delay_mean: 1_500,
            read_delay_jitter: 100,
            drift_ppb: 0,
            tick_period: DEFAULT_TICK_PERIOD_NS,
        }
    }
}

impl ClockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.read_delay_mean < 0 || self.read_delay_jitter < 0 {
            return Err(Error::InvalidConfig("read delay mean/jitter must be >= 0".into()));
        }
        if self.tick_period <= 0 {
            return Err(Error::InvalidConfig("tick_period must be > 0".into()));
        }
        if self.drift_ppb <= -1_000_000_000 {
            return Err(Error::InvalidConfig("drift_ppb must be > -1e9".into()));
        }
        Ok(())
    }

    /// GPU counter value at true GPU time `t`.
    pub fn ticks_at(&self, t: Nanos) -> i64 {
        let num = t as i128 * 1_000_000_000;
        let den = self.tick_period as i128 * (1_000_000_000 + self.drift_ppb as i128);
        num.div_euclid(den) as i64
    }
}

/// What one run executes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Passes over `kernel_sequence`. For an isolated kernel this is the execution count.
    pub executions: u32,
    /// Inclusive range of the randomized idle delay before the first execution.
    pub pre_delay_range: (Nanos, Nanos),
    /// Idle time between consecutive executions (0 = back to back).
    pub inter_exec_gap: Nanos,
    /// `(kernel, repetitions)`; each pass runs every entry `repetitions` times in order.
    pub kernel_sequence: Vec<(KernelSpec, u32)>,
}

impl RunConfig {
    pub fn isolated(kernel: KernelSpec, executions: u32) -> Self {
        RunConfig {
            executions,
            pre_delay_range: (50_000, 50_000 + NS_PER_MS),
            inter_exec_gap: 0,
            kernel_sequence: vec![(kernel, 1)],
        }
    }

    pub fn total_executions(&self) -> u64 {
        let per_pass: u64 = self.kernel_sequence.iter().map(|(_, r)| *r as u64).sum();
        per_pass * self.executions as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.executions == 0 {
            return Err(Error::InvalidConfig("executions must be >= 1".into()));
        }
        if self.kernel_sequence.is_empty() {
            return Err(Error::InvalidConfig("kernel_sequence is empty".into()));
        }
        let (lo, hi) = self.pre_delay_range;
        if lo < 0 || hi < lo {
            return Err(Error::InvalidConfig(format!("bad pre_delay_range ({lo}, {hi})")));
        }
        if self.inter_exec_gap < 0 {
            return Err(Error::InvalidConfig("inter_exec_gap must be >= 0".into()));
        }
        for (k, reps) in &self.kernel_sequence {
            if *reps == 0 {
                return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
            }
            k.validate()?;
        }
        Ok(())
    }
}

/// Execution time of the `exec_index`-th execution of `spec` within a run.
///
/// Warm-up executions (by index) are additionally stretched by the warm-up slowdown.
pub fn draw_exec_time(spec: &KernelSpec, exec_index: u32, seed: u64) -> Nanos {
    let mut rng = rng::stream(&[seed, rng::PURPOSE_EXEC_DRAW, exec_index as u64]);
    let u: f64 = rng.random();
    let noise = Normal::new(0.0, spec.exec_time_jitter_rel.max(0.0))
        .map(|n| n.sample(&mut rng))
        .unwrap_or(0.0);
    let nominal = spec.nominal_exec_time as f64;
    let base = if u < spec.outlier_prob {
        nominal * spec.outlier_scale
    } else {
        nominal * (1.0 + noise)
    };
    let t = base * spec.warmup.slowdown_for(exec_index);
    (t.round() as Nanos).max(1)
}

/// Draws `n` timestamp-read latencies the way a read-delay benchmark would observe them.
pub fn sample_read_delays(clock: &ClockSpec, n: usize, seed: u64) -> Vec<Nanos> {
    let mut rng = rng::stream(&[seed, rng::PURPOSE_CALIBRATION]);
    (0..n).map(|_| draw_read_delay(clock, &mut rng)).collect()
}

fn draw_read_delay<R: Rng>(clock: &ClockSpec, rng: &mut R) -> Nanos {
    let jitter = Normal::new(0.0, clock.read_delay_jitter as f64)
        .map(|n| n.sample(rng))
        .unwrap_or(0.0);
    ((clock.read_delay_mean as f64 + jitter).round() as Nanos).max(0)
}

/// Simulates one run.
///
/// Timeline (GPU time, nanoseconds): the logger produces samples at multiples of
/// `sample_interval`, starting with the first whose window lies at or after 0. The
/// CPU reads the GPU counter at that first sample instant, waits a random pre-delay
/// once the read returns, then launches the executions.
pub fn simulate_run(
    run_id: RunId,
    config: &RunConfig,
    logger: &LoggerSpec,
    clock: &ClockSpec,
    seed: u64,
) -> Result<(RunRecord, GroundTruth)> {
    config.validate()?;
    logger.validate()?;
    clock.validate()?;

    let interval = logger.sample_interval;
    let first_sample = (logger.averaging_window + interval - 1) / interval;
    let anchor = first_sample * interval;

    let run = run_id as u64;
    let read_delay_actual = draw_read_delay(clock, &mut rng::stream(&[seed, run, rng::PURPOSE_ANCHOR]));
    let read_delay_est = calibrate_read_delay(&sample_read_delays(clock, CALIBRATION_SAMPLES, seed))?;
    let (lo, hi) = config.pre_delay_range;
    let pre_delay = rng::stream(&[seed, run, rng::PURPOSE_PRE_DELAY]).random_range(lo..=hi);

    let kernels: Vec<KernelSpec> = config.kernel_sequence.iter().map(|(k, _)| k.clone()).collect();
    let mut occurrences: HashMap<usize, u32> = HashMap::new();
    let mut executions = Vec::with_capacity(config.total_executions() as usize);
    let mut t = anchor + read_delay_actual + pre_delay;
    for _ in 0..config.executions {
        for (k, (spec, reps)) in config.kernel_sequence.iter().enumerate() {
            for _ in 0..*reps {
                let occ = occurrences.entry(k).or_insert(0);
                let exec_seed = rng::derive_seed(&[seed, run, rng::PURPOSE_EXEC, k as u64]);
                let d = draw_exec_time(spec, *occ, exec_seed);
                executions.push(TrueExecution {
                    kernel: k,
                    start: t,
                    end: t + d,
                    power_scale: spec.warmup.power_scale_for(*occ),
                });
                *occ += 1;
                t += d + config.inter_exec_gap;
            }
        }
    }
    let last_end = executions.last().map(|e| e.end).unwrap_or(anchor);

    let mut sample_times = Vec::new();
    let mut k = first_sample;
    loop {
        let ts = k * interval;
        sample_times.push(ts);
        if ts >= last_end {
            break;
        }
        k += 1;
    }
    let horizon_end = *sample_times.last().unwrap_or(&anchor);

    let truth = GroundTruth {
        run_id,
        kernels,
        executions,
        logger: logger.clone(),
        clock: clock.clone(),
        read_delay_actual,
        read_delay_est,
        anchor_gpu: anchor,
        horizon_end,
    };

    let log = sample_times
        .iter()
        .map(|&ts| {
            Ok(PowerLogEntry {
                gpu_ts: GpuTimestamp::new(clock.ticks_at(ts), clock.tick_period),
                power: truth.window_average(ts, logger.averaging_window)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let offset = clock.cpu_gpu_offset;
    let tc_cpu = anchor + offset + read_delay_actual;
    let record = RunRecord {
        run_id,
        t0_gpu: GpuTimestamp::new(clock.ticks_at(anchor), clock.tick_period),
        tc_cpu,
        read_delay: read_delay_est,
        pre_delay,
        executions: truth
            .executions
            .iter()
            .enumerate()
            .map(|(i, e)| ExecutionRecord {
                exec_index: i as u32,
                kernel_id: truth.kernels[e.kernel].kernel_id.clone(),
                start_cpu: e.start + offset,
                end_cpu: e.end + offset,
            })
            .collect(),
        log,
    };
    Ok((record, truth))
}
