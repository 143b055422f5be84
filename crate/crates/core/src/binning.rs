//! Execution-time binning, golden-run selection, and the profiling guidance table.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{LoiSample, Nanos, RunId, NS_PER_MS, NS_PER_US};

/// One row of the profiling guidance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceEntry {
    /// Exclusive lower bound of the execution-time range.
    pub exec_lo: Nanos,
    /// Inclusive upper bound; `None` is unbounded.
    pub exec_hi: Option<Nanos>,
    pub runs: u32,
    /// One LOI wanted per this much kernel time.
    pub loi_density: Nanos,
    pub margin_rel: f64,
    /// The execution time fell below the first row and the row was extrapolated.
    #[serde(default)]
    pub extrapolated: bool,
}

impl GuidanceEntry {
    const fn row(lo: Nanos, hi: Option<Nanos>, runs: u32, density: Nanos, margin: f64) -> Self {
        GuidanceEntry {
            exec_lo: lo,
            exec_hi: hi,
            runs,
            loi_density: density,
            margin_rel: margin,
            extrapolated: false,
        }
    }

    pub fn contains(&self, exec_time: Nanos) -> bool {
        exec_time > self.exec_lo && self.exec_hi.is_none_or(|hi| exec_time <= hi)
    }
}

pub const GUIDANCE_TABLE: [GuidanceEntry; 4] = [
    GuidanceEntry::row(25 * NS_PER_US, Some(50 * NS_PER_US), 400, 5 * NS_PER_US, 0.05),
    GuidanceEntry::row(50 * NS_PER_US, Some(200 * NS_PER_US), 200, 10 * NS_PER_US, 0.05),
    GuidanceEntry::row(200 * NS_PER_US, Some(NS_PER_MS), 200, 10 * NS_PER_US, 0.02),
    GuidanceEntry::row(NS_PER_MS, None, 200, 10 * NS_PER_US, 0.02),
];

pub fn lookup_guidance(exec_time: Nanos) -> Result<GuidanceEntry> {
    if exec_time <= 0 {
        return Err(Error::InvalidConfig(format!(
            "execution time must be > 0, got {exec_time} ns"
        )));
    }
    if let Some(row) = GUIDANCE_TABLE.iter().find(|r| r.contains(exec_time)) {
        return Ok(row.clone());
    }
    Ok(GuidanceEntry {
        extrapolated: true,
        ..GUIDANCE_TABLE[0].clone()
    })
}

/// Runs whose steady-state execution time lies within `margin_rel` of `anchor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub anchor: Nanos,
    pub members: BTreeSet<RunId>,
    pub margin_rel: f64,
}

pub(crate) fn within_margin(t: Nanos, anchor: Nanos, margin_rel: f64) -> bool {
    (t - anchor).abs() as f64 <= margin_rel * anchor as f64
}

/// One candidate bin per distinct execution time, best first: most members, then smallest anchor.
pub fn bin_runs(ssp_exec_times: &BTreeMap<RunId, Nanos>, margin_rel: f64) -> Result<Vec<Bin>> {
    if ssp_exec_times.is_empty() {
        return Err(Error::EmptyInput("execution times to bin"));
    }
    if !(margin_rel > 0.0) {
        return Err(Error::InvalidConfig("binning margin must be > 0".into()));
    }
    let mut by_time: Vec<(Nanos, RunId)> = ssp_exec_times.iter().map(|(&r, &t)| (t, r)).collect();
    by_time.sort_unstable();
    let mut anchors: Vec<Nanos> = by_time.iter().map(|&(t, _)| t).collect();
    anchors.dedup();

    let mut bins: Vec<Bin> = anchors
        .into_iter()
        .map(|a| {
            let lo = by_time.partition_point(|&(t, _)| t < a && !within_margin(t, a, margin_rel));
            let hi = by_time.partition_point(|&(t, _)| t <= a || within_margin(t, a, margin_rel));
            Bin {
                anchor: a,
                members: by_time[lo..hi].iter().map(|&(_, r)| r).collect(),
                margin_rel,
            }
        })
        .collect();
    bins.sort_by(|a, b| b.members.len().cmp(&a.members.len()).then(a.anchor.cmp(&b.anchor)));
    Ok(bins)
}

/// Members of the best bin; every other run is an outlier.
pub fn select_golden_runs(bins: &[Bin]) -> BTreeSet<RunId> {
    bins.first().map(|b| b.members.clone()).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status", content = "missing")]
pub enum Sufficiency {
    Sufficient,
    Deficit(u64),
}

/// Compares the distinct TOI slots covered by `lois` against the guidance target.
pub fn loi_sufficiency(lois: &[LoiSample], exec_time: Nanos, guidance: &GuidanceEntry) -> Sufficiency {
    let d = guidance.loi_density.max(1);
    let target = (exec_time.max(0) + d - 1) / d;
    let covered: HashSet<Nanos> = lois.iter().map(|l| l.toi.div_euclid(d)).collect();
    let deficit = target - covered.len() as Nanos;
    if deficit > 0 {
        Sufficiency::Deficit(deficit as u64)
    } else {
        Sufficiency::Sufficient
    }
}
