//! Domain types shared by the simulator and the analysis pipeline.
//!
//! Time is always integer nanoseconds ([`Nanos`]); power is `f64` watts.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer nanoseconds. CPU-domain, GPU-domain, and durations all use this.
pub type Nanos = i64;

pub type RunId = u32;

/// Default GPU counter period: a 100 MHz counter.
pub const DEFAULT_TICK_PERIOD_NS: Nanos = 10;

pub const NS_PER_US: Nanos = 1_000;
pub const NS_PER_MS: Nanos = 1_000_000;

/// Power broken down by GPU sub-component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentPower {
    pub total: f64,
    pub xcd: f64,
    pub iod: f64,
    pub hbm: f64,
}

impl ComponentPower {
    pub const ZERO: ComponentPower = ComponentPower {
        total: 0.0,
        xcd: 0.0,
        iod: 0.0,
        hbm: 0.0,
    };

    /// Builds a power vector from component parts; `other` is folded into the total only.
    pub fn from_parts(xcd: f64, iod: f64, hbm: f64, other: f64) -> Self {
        ComponentPower {
            total: xcd + iod + hbm + other,
            xcd,
            iod,
            hbm,
        }
    }

    pub fn get(&self, component: Component) -> f64 {
        match component {
            Component::Total => self.total,
            Component::Xcd => self.xcd,
            Component::Iod => self.iod,
            Component::Hbm => self.hbm,
        }
    }

    /// Power not attributed to XCD, IOD or HBM.
    pub fn other(&self) -> f64 {
        self.total - self.xcd - self.iod - self.hbm
    }

    pub fn scale(self, k: f64) -> Self {
        ComponentPower {
            total: self.total * k,
            xcd: self.xcd * k,
            iod: self.iod * k,
            hbm: self.hbm * k,
        }
    }

    pub fn is_non_negative(&self) -> bool {
        self.total >= 0.0 && self.xcd >= 0.0 && self.iod >= 0.0 && self.hbm >= 0.0
    }

    /// Checks the type invariants: non-negative fields and a total that dominates each part.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.total, self.xcd, self.iod, self.hbm]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !self.is_non_negative() {
            return Err(Error::InvalidConfig(format!(
                "power must be finite and non-negative: {self:?}"
            )));
        }
        if self.total < self.xcd.max(self.iod).max(self.hbm) {
            return Err(Error::InvalidConfig(format!(
                "total power below a component: {self:?}"
            )));
        }
        Ok(())
    }

    /// Time-weighted average of `(duration, power)` segments.
    pub fn time_average<I>(segments: I) -> Option<ComponentPower>
    where
        I: IntoIterator<Item = (Nanos, ComponentPower)>,
    {
        let mut acc = ComponentPower::ZERO;
        let mut span: Nanos = 0;
        for (dt, p) in segments {
            acc += p.scale(dt as f64);
            span += dt;
        }
        (span > 0).then(|| acc.scale(1.0 / span as f64))
    }
}

impl Add for ComponentPower {
    type Output = ComponentPower;
    fn add(self, rhs: Self) -> Self {
        ComponentPower {
            total: self.total + rhs.total,
            xcd: self.xcd + rhs.xcd,
            iod: self.iod + rhs.iod,
            hbm: self.hbm + rhs.hbm,
        }
    }
}

impl AddAssign for ComponentPower {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for ComponentPower {
    type Output = ComponentPower;
    fn sub(self, rhs: Self) -> Self {
        ComponentPower {
            total: self.total - rhs.total,
            xcd: self.xcd - rhs.xcd,
            iod: self.iod - rhs.iod,
            hbm: self.hbm - rhs.hbm,
        }
    }
}

impl Mul<f64> for ComponentPower {
    type Output = ComponentPower;
    fn mul(self, k: f64) -> Self {
        self.scale(k)
    }
}

impl Sum for ComponentPower {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ComponentPower::ZERO, Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Total,
    Xcd,
    Iod,
    Hbm,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Total, Component::Xcd, Component::Iod, Component::Hbm];

    pub fn as_str(&self) -> &'static str {
        match self {
            Component::Total => "total",
            Component::Xcd => "xcd",
            Component::Iod => "iod",
            Component::Hbm => "hbm",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(Component::Total),
            "xcd" => Ok(Component::Xcd),
            "iod" => Ok(Component::Iod),
            "hbm" => Ok(Component::Hbm),
            other => Err(Error::InvalidConfig(format!("unknown component '{other}'"))),
        }
    }
}

/// Raw GPU counter reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpuTimestamp {
    pub ticks: i64,
    pub tick_period: Nanos,
}

impl GpuTimestamp {
    pub fn new(ticks: i64, tick_period: Nanos) -> Self {
        GpuTimestamp { ticks, tick_period }
    }

    /// Counter value expressed in nanoseconds of the nominal counter period.
    pub fn nominal_ns(&self) -> Nanos {
        self.ticks * self.tick_period
    }
}

/// One averaged sample from the on-GPU power logger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLogEntry {
    pub gpu_ts: GpuTimestamp,
    pub power: ComponentPower,
}

/// CPU-side timing of one kernel execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub exec_index: u32,
    pub kernel_id: String,
    pub start_cpu: Nanos,
    pub end_cpu: Nanos,
}

impl ExecutionRecord {
    pub fn duration(&self) -> Nanos {
        self.end_cpu - self.start_cpu
    }
}

/// Everything captured for one run: sync anchor, execution timings, and the power log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: RunId,
    /// Counter value read from the CPU before the first execution.
    pub t0_gpu: GpuTimestamp,
    /// CPU time at which the T0 read completed.
    pub tc_cpu: Nanos,
    /// Calibrated latency of the timestamp read.
    pub read_delay: Nanos,
    /// Idle delay between the anchor read completing and the first launch.
    pub pre_delay: Nanos,
    pub executions: Vec<ExecutionRecord>,
    pub log: Vec<PowerLogEntry>,
}

impl RunRecord {
    /// Checks ordering invariants on executions and the log.
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.executions.iter().enumerate() {
            if e.exec_index as usize != i {
                return Err(Error::InvalidConfig(format!(
                    "run {}: exec_index {} at position {i}",
                    self.run_id, e.exec_index
                )));
            }
            if e.end_cpu <= e.start_cpu {
                return Err(Error::InvalidConfig(format!(
                    "run {}: execution {} has non-positive duration",
                    self.run_id, e.exec_index
                )));
            }
        }
        for w in self.executions.windows(2) {
            if w[1].start_cpu < w[0].end_cpu {
                return Err(Error::InvalidConfig(format!(
                    "run {}: executions {} and {} overlap",
                    self.run_id, w[0].exec_index, w[1].exec_index
                )));
            }
        }
        for w in self.log.windows(2) {
            if w[1].gpu_ts.ticks < w[0].gpu_ts.ticks {
                return Err(Error::InvalidConfig(format!(
                    "run {}: log timestamps not monotone",
                    self.run_id
                )));
            }
        }
        Ok(())
    }

    pub fn exec_times(&self) -> Vec<Nanos> {
        self.executions.iter().map(ExecutionRecord::duration).collect()
    }
}

/// A power log resolved to a kernel execution and an offset within it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoiSample {
    pub run_id: RunId,
    pub exec_index: u32,
    pub kernel_id: String,
    /// Offset of the sample within the execution.
    pub toi: Nanos,
    pub power: ComponentPower,
    /// The averaging window reached into an inter-execution gap or another kernel.
    pub mixed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseBoundaries {
    pub warmup_count: u32,
    pub sse_index: u32,
    pub ssp_index: u32,
}

impl PhaseBoundaries {
    pub fn index_of(&self, phase: Phase) -> u32 {
        match phase {
            Phase::Sse => self.sse_index,
            Phase::Ssp => self.ssp_index,
        }
    }
}

/// Steady-state execution vs steady-state power profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Sse,
    Ssp,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Sse => "sse",
            Phase::Ssp => "ssp",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sse" => Ok(Phase::Sse),
            "ssp" => Ok(Phase::Ssp),
            other => Err(Error::InvalidConfig(format!("unknown phase '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn from_parts_keeps_other_in_total() {
        let p = ComponentPower::from_parts(300.0, 80.0, 50.0, 20.0);
        assert_eq!(p.total, 450.0);
        assert_eq!(p.other(), 20.0);
        p.validate().unwrap();
    }

    #[test]
    fn validate_rejects_total_below_component() {
        let p = ComponentPower {
            total: 10.0,
            xcd: 20.0,
            iod: 0.0,
            hbm: 0.0,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn time_average_of_constants() {
        let idle = ComponentPower::from_parts(40.0, 30.0, 20.0, 10.0);
        let busy = ComponentPower::from_parts(400.0, 100.0, 70.0, 30.0);
        let avg = ComponentPower::time_average([(600, idle), (400, busy)]).unwrap();
        assert!((avg.total - (0.6 * 100.0 + 0.4 * 600.0)).abs() < 1e-9);
        assert!(ComponentPower::time_average(Vec::new()).is_none());
    }

    fn power() -> impl Strategy<Value = ComponentPower> {
        (0.0..1e3f64, 0.0..1e3f64, 0.0..1e3f64, 0.0..1e3f64)
            .prop_map(|(x, i, h, o)| ComponentPower::from_parts(x, i, h, o))
    }

    proptest! {
        #[test]
        fn arithmetic_preserves_non_negativity(a in power(), b in power(), k in 0.0..10.0f64, dt in 1i64..1_000_000) {
            prop_assert!((a + b).is_non_negative());
            prop_assert!(a.scale(k).is_non_negative());
            let avg = ComponentPower::time_average([(dt, a), (dt * 2, b)]).unwrap();
            prop_assert!(avg.is_non_negative());
            prop_assert!(avg.total + 1e-9 >= avg.xcd.max(avg.iod).max(avg.hbm));
        }
    }
}
