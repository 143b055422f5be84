//! Instantaneous power curves over one kernel execution.
//!
//! A curve is sampled once per nanosecond: the point `k` of an execution of
//! duration `d` sits at fraction `k / d` of the execution, for `k` in `[0, d)`.
//! [`PowerCurve::sum_range`] sums those samples in closed form, one linear
//! segment at a time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{ComponentPower, Nanos};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PowerCurve {
    Constant { watts: f64 },
    LinearRamp { start: f64, end: f64 },
    /// `(fraction of execution time, watts)` knots. Repeated fractions give a step.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    f0: f64,
    f1: f64,
    w0: f64,
    w1: f64,
}

impl Segment {
    fn value(&self, frac: f64) -> f64 {
        self.w0 + (self.w1 - self.w0) * ((frac - self.f0) / (self.f1 - self.f0))
    }
}

impl PowerCurve {
    pub fn validate(&self) -> Result<()> {
        let knots = self.knots();
        if knots.is_empty() {
            return Err(Error::InvalidConfig("piecewise curve needs at least one knot".into()));
        }
        let mut prev = 0.0;
        for &(f, w) in &knots {
            if !(0.0..=1.0).contains(&f) || f < prev {
                return Err(Error::InvalidConfig(format!(
                    "curve knots must be ordered fractions in [0,1], got {f}"
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidConfig(format!("curve watts must be >= 0, got {w}")));
            }
            prev = f;
        }
        Ok(())
    }

    fn knots(&self) -> Vec<(f64, f64)> {
        match self {
            PowerCurve::Constant { watts } => vec![(0.0, *watts), (1.0, *watts)],
            PowerCurve::LinearRamp { start, end } => vec![(0.0, *start), (1.0, *end)],
            PowerCurve::PiecewiseLinear { knots } => knots.clone(),
        }
    }

    /// Positive-width linear segments partitioning `[0, 1)`.
    fn segments(&self) -> Vec<Segment> {
        let mut knots = self.knots();
        if let Some(&(f, w)) = knots.first() {
            if f > 0.0 {
                knots.insert(0, (0.0, w));
            }
        }
        if let Some(&(f, w)) = knots.last() {
            if f < 1.0 {
                knots.push((1.0, w));
            }
        }
        knots
            .windows(2)
            .filter(|p| p[1].0 > p[0].0)
            .map(|p| Segment {
                f0: p[0].0,
                f1: p[1].0,
                w0: p[0].1,
                w1: p[1].1,
            })
            .collect()
    }

    /// Power at `frac` of the execution, `frac` in `[0, 1)`.
    pub fn value_at(&self, frac: f64) -> f64 {
        match self {
            PowerCurve::Constant { watts } => return *watts,
            PowerCurve::LinearRamp { start, end } => return start + (end - start) * frac,
            PowerCurve::PiecewiseLinear { .. } => {}
        }
        let segments = self.segments();
        let seg = segments
            .iter()
            .rev()
            .find(|s| s.f0 <= frac)
            .unwrap_or(&segments[0]);
        seg.value(frac)
    }

    /// Sum of the per-nanosecond samples `k` in `[k_lo, k_hi)` of an execution lasting `d` ns.
    pub fn sum_range(&self, d: Nanos, k_lo: Nanos, k_hi: Nanos) -> f64 {
        debug_assert!(d > 0 && 0 <= k_lo && k_hi <= d);
        if k_hi <= k_lo {
            return 0.0;
        }
        let segments = self.segments();
        let last = segments.len() - 1;
        let mut sum = 0.0;
        for (i, seg) in segments.iter().enumerate() {
            let a = first_at_or_after(seg.f0, d);
            let b = if i == last { d } else { first_at_or_after(seg.f1, d) };
            let lo = a.max(k_lo);
            let hi = b.min(k_hi);
            if hi <= lo {
                continue;
            }
            let n = (hi - lo) as f64;
            // sum of k over [lo, hi) is exact in i64 for any realistic duration
            let sum_k = ((lo + hi - 1) as i128 * (hi - lo) as i128 / 2) as f64;
            let slope = (seg.w1 - seg.w0) / (seg.f1 - seg.f0);
            sum += n * seg.w0 + slope * (sum_k / d as f64 - n * seg.f0);
        }
        sum
    }
}

/// Smallest `k >= 0` with `k / d >= f`, evaluated with the same float division as `value_at` callers.
fn first_at_or_after(f: f64, d: Nanos) -> Nanos {
    let df = d as f64;
    let mut k = ((f * df).ceil() as Nanos).clamp(0, d);
    while k > 0 && ((k - 1) as f64 / df) >= f {
        k -= 1;
    }
    while k < d && (k as f64 / df) < f {
        k += 1;
    }
    k
}

/// Per-component curves of one kernel. Total power is the sum of all four.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCurves {
    pub xcd: PowerCurve,
    pub iod: PowerCurve,
    pub hbm: PowerCurve,
    /// Board power not attributed to XCD, IOD or HBM.
    pub other: PowerCurve,
}

impl KernelCurves {
    pub fn constant(power: ComponentPower) -> Self {
        KernelCurves {
            xcd: PowerCurve::Constant { watts: power.xcd },
            iod: PowerCurve::Constant { watts: power.iod },
            hbm: PowerCurve::Constant { watts: power.hbm },
            other: PowerCurve::Constant {
                watts: power.other(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.xcd.validate()?;
        self.iod.validate()?;
        self.hbm.validate()?;
        self.other.validate()
    }

    pub fn value_at(&self, frac: f64) -> ComponentPower {
        ComponentPower::from_parts(
            self.xcd.value_at(frac),
            self.iod.value_at(frac),
            self.hbm.value_at(frac),
            self.other.value_at(frac),
        )
    }

    pub fn sum_range(&self, d: Nanos, k_lo: Nanos, k_hi: Nanos) -> ComponentPower {
        ComponentPower::from_parts(
            self.xcd.sum_range(d, k_lo, k_hi),
            self.iod.sum_range(d, k_lo, k_hi),
            self.hbm.sum_range(d, k_lo, k_hi),
            self.other.sum_range(d, k_lo, k_hi),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(curve: &PowerCurve, d: Nanos, lo: Nanos, hi: Nanos) -> f64 {
        (lo..hi).map(|k| curve.value_at(k as f64 / d as f64)).sum()
    }

    #[test]
    fn step_curve_values() {
        let c = PowerCurve::PiecewiseLinear {
            knots: vec![(0.0, 400.0), (0.5, 400.0), (0.5, 700.0), (1.0, 700.0)],
        };
        assert_eq!(c.value_at(0.0), 400.0);
        assert_eq!(c.value_at(0.4999), 400.0);
        assert_eq!(c.value_at(0.5), 700.0);
        assert_eq!(c.value_at(0.99), 700.0);
        // d = 10: k = 0..5 at 400, k = 5..10 at 700
        assert_eq!(c.sum_range(10, 0, 10), 5.0 * 400.0 + 5.0 * 700.0);
        assert_eq!(c.sum_range(11, 0, 11), 6.0 * 400.0 + 5.0 * 700.0);
    }

    #[test]
    fn boundary_fraction_that_rounds_up() {
        // 0.3 * 10 = 3.0000000000000004 in f64; k = 3 still belongs to the upper segment
        let c = PowerCurve::PiecewiseLinear {
            knots: vec![(0.0, 100.0), (0.3, 100.0), (0.3, 900.0), (1.0, 900.0)],
        };
        assert_eq!(c.sum_range(10, 0, 10), brute(&c, 10, 0, 10));
    }

    #[test]
    fn ramp_sum_matches_brute_force() {
        let c = PowerCurve::LinearRamp {
            start: 200.0,
            end: 700.0,
        };
        for &(d, lo, hi) in &[(1000, 0, 1000), (997, 13, 640), (1, 0, 1), (50_000, 49_000, 50_000)] {
            let exact = c.sum_range(d, lo, hi);
            let b = brute(&c, d, lo, hi);
            assert!((exact - b).abs() <= 1e-9 * b.abs(), "{d} {lo} {hi}: {exact} vs {b}");
        }
    }

    #[test]
    fn knots_not_spanning_unit_interval_extend_flat() {
        let c = PowerCurve::PiecewiseLinear {
            knots: vec![(0.25, 300.0), (0.75, 500.0)],
        };
        assert_eq!(c.value_at(0.1), 300.0);
        assert_eq!(c.value_at(0.9), 500.0);
        assert!((c.value_at(0.5) - 400.0).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(PowerCurve::PiecewiseLinear { knots: vec![] }.validate().is_err());
        assert!(PowerCurve::PiecewiseLinear {
            knots: vec![(0.5, 1.0), (0.2, 1.0)]
        }
        .validate()
        .is_err());
        assert!(PowerCurve::Constant { watts: -1.0 }.validate().is_err());
        assert!(PowerCurve::LinearRamp {
            start: 0.0,
            end: 10.0
        }
        .validate()
        .is_ok());
    }
}
