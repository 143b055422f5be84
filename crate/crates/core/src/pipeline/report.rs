use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::binning::{GuidanceEntry, Sufficiency};
use crate::error::{Error, Result};
use crate::stitch::{PolyFit, StitchedProfile};
use crate::telemetry::{Component, Nanos, Phase, PhaseBoundaries, RunId};

pub const REPORT_VERSION: &str = "fingrav-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    Simulated,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    /// Execution times of the pre-timing executions of the target kernel.
    pub pre_timing_ns: Vec<Nanos>,
    pub warmup_detected: usize,
    pub exec_time_ns: Nanos,
    pub guidance: GuidanceEntry,
    /// Fields the configuration overrode instead of taking them from the guidance row.
    pub overridden: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub warmup_execs: u32,
    pub sse_execs_total: u32,
    pub ssp_execs_total: u32,
    /// Count from the window / execution-time formula.
    pub ssp_formula: u32,
    /// Count found by bisection when the warm-up power trace rose then fell.
    pub ssp_binary_search: Option<u32>,
    /// Passes over the kernel sequence per run.
    pub passes_per_run: u32,
    /// Period of one pass, used in place of the execution time for interleaved workloads.
    pub pass_period_ns: Option<Nanos>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub planned: u32,
    pub top_up: u32,
    pub executed: u32,
    pub golden: u32,
    pub discarded: u32,
    pub bin_anchor_ns: Nanos,
    pub margin_rel: f64,
    pub discarded_ids: Vec<RunId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLois {
    /// LOIs of golden runs taken during the phase's execution.
    pub count: usize,
    pub mixed: usize,
    pub sufficiency: Sufficiency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoiSummary {
    pub loi_density_ns: Nanos,
    pub total: usize,
    pub per_phase: BTreeMap<Phase, PhaseLois>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub phase: Phase,
    pub component: Component,
    pub fit: Option<PolyFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentError {
    pub rms_w: f64,
    pub max_abs_w: f64,
    /// Spread of the reference profile; the mean level when the profile is flat.
    pub dynamic_range_w: f64,
    pub rms_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Reconstruction {
    Available {
        reference: String,
        ssp: BTreeMap<Component, ComponentError>,
    },
    Unavailable {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub name: String,
    pub source: InputSource,
    pub seed: Option<u64>,
    pub kernel_id: String,
    pub timing: TimingSummary,
    pub plan: PlanSummary,
    pub runs: RunCounts,
    pub lois: LoiSummary,
    pub phase_boundaries: PhaseBoundaries,
    pub profiles: Vec<StitchedProfile>,
    pub fits: Vec<FitEntry>,
    /// Percent error of the SSE mean against the SSP mean, per component.
    pub sse_ssp_error: BTreeMap<Component, f64>,
    pub reconstruction: Reconstruction,
}

impl ExperimentReport {
    pub fn profile(&self, phase: Phase, component: Component) -> Option<&StitchedProfile> {
        self.profiles
            .iter()
            .find(|p| p.phase == phase && p.component == component)
    }

    pub fn fit(&self, phase: Phase, component: Component) -> Option<&PolyFit> {
        self.fits
            .iter()
            .find(|f| f.phase == phase && f.component == component)
            .and_then(|f| f.fit.as_ref())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: ExperimentReport = serde_json::from_str(text)?;
        if report.version != REPORT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported report version '{}'",
                report.version
            )));
        }
        Ok(report)
    }
}
