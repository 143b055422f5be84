use crate::error::{Error, Result};
use crate::telemetry::{ComponentPower, Nanos, RunId};

use super::{ClockSpec, KernelSpec, LoggerSpec};

/// One execution as it really happened, in GPU time. Covers nanoseconds `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueExecution {
    /// Index into [`GroundTruth::kernels`].
    pub kernel: usize,
    pub start: Nanos,
    pub end: Nanos,
    pub power_scale: f64,
}

impl TrueExecution {
    pub fn duration(&self) -> Nanos {
        self.end - self.start
    }
}

/// Hidden state of a simulated run. Never handed to the analysis side.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub run_id: RunId,
    pub kernels: Vec<KernelSpec>,
    pub executions: Vec<TrueExecution>,
    pub logger: LoggerSpec,
    pub clock: ClockSpec,
    /// Latency of this run's anchor read.
    pub read_delay_actual: Nanos,
    /// Benchmark estimate that was written into the run record.
    pub read_delay_est: Nanos,
    /// GPU time at which the anchor counter value was latched.
    pub anchor_gpu: Nanos,
    /// Last logged instant; power is defined on `[0, horizon_end]`.
    pub horizon_end: Nanos,
}

impl GroundTruth {
    /// Instantaneous power at GPU nanosecond `n`.
    pub fn power_at(&self, n: Nanos) -> ComponentPower {
        let i = self.executions.partition_point(|e| e.start <= n);
        if i > 0 {
            let e = &self.executions[i - 1];
            if n < e.end {
                let frac = (n - e.start) as f64 / e.duration() as f64;
                return self.kernels[e.kernel].curve.value_at(frac).scale(e.power_scale);
            }
        }
        self.logger.idle_power
    }

    /// Mean power over `(window_end - window, window_end]`, integrated segment by segment.
    pub fn window_average(&self, window_end: Nanos, window: Nanos) -> Result<ComponentPower> {
        self.check_horizon(window_end, window)?;
        let lo = window_end - window + 1;
        let hi = window_end + 1;
        let first = self.executions.partition_point(|e| e.end <= lo);
        let mut busy: Nanos = 0;
        let mut acc = ComponentPower::ZERO;
        for e in self.executions[first..].iter().take_while(|e| e.start < hi) {
            let a = lo.max(e.start);
            let b = hi.min(e.end);
            if b <= a {
                continue;
            }
            let d = e.duration();
            acc += self.kernels[e.kernel]
                .curve
                .sum_range(d, a - e.start, b - e.start)
                .scale(e.power_scale);
            busy += b - a;
        }
        acc += self.logger.idle_power.scale((window - busy) as f64);
        Ok(acc.scale(1.0 / window as f64))
    }

    fn check_horizon(&self, window_end: Nanos, window: Nanos) -> Result<()> {
        if window <= 0 {
            return Err(Error::InvalidConfig("window must be > 0".into()));
        }
        if window_end - window < 0 || window_end > self.horizon_end {
            return Err(Error::OutOfHorizon(format!(
                "window ({}, {}] not within [0, {}]",
                window_end - window,
                window_end,
                self.horizon_end
            )));
        }
        Ok(())
    }

    pub fn kernel_index(&self, kernel_id: &str) -> Option<usize> {
        self.kernels.iter().position(|k| k.kernel_id == kernel_id)
    }

    /// CPU-domain time of GPU instant `t`.
    pub fn cpu_time_of(&self, t: Nanos) -> Nanos {
        t + self.clock.cpu_gpu_offset
    }

    /// Execution covering GPU instant `t`, with the offset into it.
    pub fn execution_at(&self, t: Nanos) -> Option<(usize, Nanos)> {
        let i = self.executions.partition_point(|e| e.start <= t);
        (i > 0 && t < self.executions[i - 1].end).then(|| (i - 1, t - self.executions[i - 1].start))
    }

    /// GPU instants at which the logger produced a sample.
    pub fn sample_times(&self) -> impl Iterator<Item = Nanos> + '_ {
        let interval = self.logger.sample_interval;
        (self.anchor_gpu / interval..=self.horizon_end / interval).map(move |k| k * interval)
    }

    /// Logged power a sample taken `toi` into an execution would report if the kernel had
    /// been running back to back at its steady state (nominal duration, no warm-up scaling).
    pub fn steady_window_average(&self, kernel_id: &str, toi: Nanos, window: Nanos) -> Result<ComponentPower> {
        let k = self
            .kernel_index(kernel_id)
            .ok_or_else(|| Error::InvalidConfig(format!("kernel '{kernel_id}' not in ground truth")))?;
        let spec = &self.kernels[k];
        let d = spec.nominal_exec_time;
        if toi < 0 || toi >= 2 * d || window <= 0 {
            return Err(Error::OutOfHorizon(format!(
                "toi {toi} outside steady-state horizon [0, {})",
                2 * d
            )));
        }
        let lo = toi - window + 1;
        let hi = toi + 1;
        let mut acc = ComponentPower::ZERO;
        for period in lo.div_euclid(d)..=(hi - 1).div_euclid(d) {
            let base = period * d;
            let a = lo.max(base) - base;
            let b = hi.min(base + d) - base;
            if b > a {
                acc += spec.curve.sum_range(d, a, b);
            }
        }
        Ok(acc.scale(1.0 / window as f64))
    }

    /// Mean of the logged power over execution `index`, from `samples` evenly spaced offsets.
    pub fn execution_mean_logged(&self, index: usize, samples: usize) -> Result<ComponentPower> {
        let e = self
            .executions
            .get(index)
            .ok_or_else(|| Error::OutOfHorizon(format!("execution {index} not simulated")))?;
        let d = e.duration();
        let n = samples.clamp(1, d as usize);
        let mut acc = ComponentPower::ZERO;
        for i in 0..n {
            let toi = (i as i128 * d as i128 / n as i128) as Nanos;
            acc += self.window_average(e.start + toi, self.logger.averaging_window)?;
        }
        Ok(acc.scale(1.0 / n as f64))
    }
}

/// Brute-force logged average: visits every nanosecond of `(window_end - window, window_end]`.
///
/// Independent of the closed-form integration in [`GroundTruth::window_average`]; meant
/// for tests and spot checks.
pub fn oracle_logged_average(truth: &GroundTruth, window_end: Nanos, window: Nanos) -> Result<ComponentPower> {
    truth.check_horizon(window_end, window)?;
    let mut sum = [0.0f64; 4];
    let mut comp = [0.0f64; 4];
    for n in (window_end - window + 1)..=window_end {
        let p = truth.power_at(n);
        for (i, v) in [p.total, p.xcd, p.iod, p.hbm].into_iter().enumerate() {
            // Kahan summation
            let y = v - comp[i];
            let t = sum[i] + y;
            comp[i] = (t - sum[i]) - y;
            sum[i] = t;
        }
    }
    let w = window as f64;
    Ok(ComponentPower {
        total: sum[0] / w,
        xcd: sum[1] / w,
        iod: sum[2] / w,
        hbm: sum[3] / w,
    })
}
