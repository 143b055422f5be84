//! Power-profile differentiation: warm-up detection, SSE/SSP execution planning,
//! and the SSE-vs-SSP measurement error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stitch::StitchedProfile;
use crate::telemetry::{Nanos, PhaseBoundaries, RunRecord};

/// Relative change below which execution time or power counts as stable.
pub const DEFAULT_STABILITY_REL: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub warmup_execs: u32,
    /// Warm-ups plus the one SSE execution.
    pub sse_execs_total: u32,
    pub ssp_execs_total: u32,
}

impl Default for PhasePlan {
    fn default() -> Self {
        PhasePlan {
            warmup_execs: 3,
            sse_execs_total: 4,
            ssp_execs_total: 4,
        }
    }
}

impl PhasePlan {
    pub fn validate(&self) -> Result<()> {
        if self.sse_execs_total < self.warmup_execs + 1 || self.ssp_execs_total < self.sse_execs_total {
            return Err(Error::InvalidConfig(format!(
                "phase plan must satisfy ssp >= sse >= warmup + 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Executions per run needed to reach steady-state power: `max(ceil(window / exec_time), sse_execs)`.
pub fn compute_ssp_executions(averaging_window: Nanos, exec_time: Nanos, sse_execs: u32) -> Result<u32> {
    if exec_time <= 0 {
        return Err(Error::InvalidConfig("execution time must be > 0".into()));
    }
    if averaging_window <= 0 || sse_execs == 0 {
        return Err(Error::InvalidConfig(
            "averaging window and SSE execution count must be > 0".into(),
        ));
    }
    let fill = (averaging_window + exec_time - 1) / exec_time;
    Ok((fill.min(u32::MAX as Nanos) as u32).max(sse_execs))
}

/// Smallest `w` such that every execution from `w` on is within `eps_rel` of the fastest one.
pub fn detect_warmup_count(exec_times: &[Nanos], eps_rel: f64) -> Result<usize> {
    if exec_times.is_empty() {
        return Err(Error::EmptyInput("execution times"));
    }
    if exec_times.len() < 2 {
        return Err(Error::TooFewExecutions {
            needed: 2,
            found: exec_times.len(),
        });
    }
    let min = *exec_times.iter().min().expect("non-empty") as f64;
    let limit = (1.0 + eps_rel) * min;
    let w = exec_times
        .iter()
        .rposition(|&t| t as f64 > limit)
        .map_or(0, |i| i + 1);
    Ok(w.min(exec_times.len() - 1))
}

/// Bisects for the smallest `n` in `[n_lo, n_hi]` with `|P(n+1) - P(n)| <= delta_rel * P(n+1)`,
/// where `P(n)` is the logged power of the `n`-th execution as reported by `probe`.
///
/// Assumes the stability predicate is monotone in `n`; the result is re-probed before
/// being returned.
pub fn binary_search_ssp<F>(mut probe: F, n_lo: u32, n_hi: u32, delta_rel: f64) -> Result<u32>
where
    F: FnMut(u32) -> Result<f64>,
{
    if n_lo >= n_hi || n_lo == 0 {
        return Err(Error::InvalidConfig(format!(
            "binary search needs 0 < n_lo < n_hi, got [{n_lo}, {n_hi}]"
        )));
    }
    let mut cache: BTreeMap<u32, f64> = BTreeMap::new();
    let mut power = |n: u32| -> Result<f64> {
        if let Some(&p) = cache.get(&n) {
            return Ok(p);
        }
        let p = probe(n)?;
        cache.insert(n, p);
        Ok(p)
    };
    let mut stable = |n: u32| -> Result<bool> {
        let cur = power(n)?;
        let next = power(n + 1)?;
        Ok((next - cur).abs() <= delta_rel * next.abs())
    };

    let (mut lo, mut hi) = (n_lo, n_hi);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if stable(mid)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    if stable(lo)? {
        Ok(lo)
    } else {
        Err(Error::UnstablePower { lo: n_lo, hi: n_hi })
    }
}

/// Maps a plan onto a run's execution indices.
pub fn classify_phases(plan: &PhasePlan, run: &RunRecord) -> Result<PhaseBoundaries> {
    plan.validate()?;
    let found = run.executions.len();
    if found < plan.ssp_execs_total as usize {
        return Err(Error::TooFewExecutions {
            needed: plan.ssp_execs_total as usize,
            found,
        });
    }
    Ok(PhaseBoundaries {
        warmup_count: plan.warmup_execs,
        sse_index: plan.warmup_execs,
        ssp_index: plan.ssp_execs_total - 1,
    })
}

/// [`classify_phases`] counting only the executions of `kernel_id`, for runs that
/// interleave several kernels. Returned indices are positions in the whole run.
pub fn classify_kernel_phases(plan: &PhasePlan, run: &RunRecord, kernel_id: &str) -> Result<PhaseBoundaries> {
    plan.validate()?;
    let occ: Vec<u32> = run
        .executions
        .iter()
        .filter(|e| e.kernel_id == kernel_id)
        .map(|e| e.exec_index)
        .collect();
    if occ.len() < plan.ssp_execs_total as usize {
        return Err(Error::TooFewExecutions {
            needed: plan.ssp_execs_total as usize,
            found: occ.len(),
        });
    }
    Ok(PhaseBoundaries {
        warmup_count: plan.warmup_execs,
        sse_index: occ[plan.warmup_execs as usize],
        ssp_index: occ[plan.ssp_execs_total as usize - 1],
    })
}

/// Relative error, in percent, of taking the SSE profile as the kernel's power.
pub fn sse_ssp_error(sse: &StitchedProfile, ssp: &StitchedProfile) -> Result<f64> {
    if sse.component != ssp.component {
        return Err(Error::ComponentMismatch(
            sse.component.to_string(),
            ssp.component.to_string(),
        ));
    }
    let sse_mean = sse.mean_power()?;
    let ssp_mean = ssp.mean_power()?;
    Ok(100.0 * (sse_mean - ssp_mean).abs() / ssp_mean)
}
