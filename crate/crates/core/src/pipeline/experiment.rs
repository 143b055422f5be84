//! End-to-end profiling: plan, run, bin, sync, top up, stitch, fit.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::binning::{bin_runs, loi_sufficiency, lookup_guidance, select_golden_runs, Bin, GuidanceEntry, Sufficiency};
use crate::error::{Error, Result, Stage, StageExt};
use crate::phase::{
    binary_search_ssp, classify_kernel_phases, compute_ssp_executions, detect_warmup_count, sse_ssp_error, PhasePlan,
};
use crate::sim::{derive_seed, simulate_run, GroundTruth, RunConfig};
use crate::stitch::{fit_poly, profile_error, stitch, StitchedProfile};
use crate::sync::{identify_loi, LoiOptions, SyncModel};
use crate::telemetry::{Component, LoiSample, Nanos, Phase, PhaseBoundaries, RunId, RunRecord};

use super::config::{ExperimentConfig, PhaseSelection, WorkloadMode};
use super::report::{
    ComponentError, ExperimentReport, FitEntry, InputSource, LoiSummary, PhaseLois, PlanSummary, Reconstruction,
    RunCounts, TimingSummary, REPORT_VERSION,
};

/// Executions in the pre-timing run.
pub const PRE_TIMING_EXECS: u32 = 5;

/// Offsets per execution averaged by the power-stabilization probe.
const PROBE_SAMPLES: usize = 256;

/// Extra execution counts the stabilization search may look beyond the formula.
const SEARCH_SPAN: u32 = 32;

const PURPOSE_TIMING: u64 = 0x7449_4d45;
const PURPOSE_PROBE: u64 = 0x5052_4f42;

const TIMING_RUN_ID: RunId = RunId::MAX;

/// Settings for the analysis half of the pipeline (steps 6 to 9).
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub phase: PhaseSelection,
    pub loi: LoiOptions,
    pub target_kernel: Option<String>,
    pub margin_rel: Option<f64>,
    pub loi_density: Option<Nanos>,
    pub warmup_execs: u32,
    pub sse_execs: u32,
    pub stability_rel: f64,
    pub fit_degree: usize,
}

impl ExperimentConfig {
    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            phase: self.phase,
            loi: self.loi_options(),
            target_kernel: Some(self.target_kernel_id().to_string()),
            margin_rel: self.margin_rel,
            loi_density: self.loi_density,
            warmup_execs: self.warmup_execs,
            sse_execs: self.sse_execs,
            stability_rel: self.stability_rel,
            fit_degree: self.fit_degree,
        }
    }
}

/// A finished experiment: the report plus the raw material behind it.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: ExperimentReport,
    pub runs: Vec<RunRecord>,
    /// Simulator truth per run, in `runs` order; empty for imported logs.
    pub truths: Vec<GroundTruth>,
    /// LOIs of the target kernel from every run, golden or not.
    pub lois: Vec<LoiSample>,
    /// Phase boundaries of the golden runs.
    pub golden_bounds: BTreeMap<RunId, PhaseBoundaries>,
}

impl Experiment {
    pub fn golden_lois(&self) -> impl Iterator<Item = &LoiSample> + '_ {
        self.lois.iter().filter(|l| self.golden_bounds.contains_key(&l.run_id))
    }
}

fn lower_median(values: &[Nanos]) -> Nanos {
    let mut v = values.to_vec();
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

fn target_times(run: &RunRecord, kernel: &str) -> Vec<Nanos> {
    run.executions
        .iter()
        .filter(|e| e.kernel_id == kernel)
        .map(|e| e.duration())
        .collect()
}

/// Median duration of one pass over the kernel sequence, skipping warm-up passes.
fn pass_period(run: &RunRecord, per_pass: usize, skip: usize, gap: Nanos) -> Option<Nanos> {
    let execs = &run.executions;
    let passes = execs.len() / per_pass;
    let periods: Vec<Nanos> = (skip.min(passes.saturating_sub(1))..passes)
        .map(|p| {
            let first = &execs[p * per_pass];
            let last = &execs[(p + 1) * per_pass - 1];
            last.end_cpu + gap - first.start_cpu
        })
        .collect();
    (!periods.is_empty()).then(|| lower_median(&periods))
}

/// Power trace that climbs and then drops back by more than `delta_rel` of its peak.
fn rises_then_falls(trace: &[f64], delta_rel: f64) -> bool {
    let Some((peak, &top)) = trace
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
    else {
        return false;
    };
    let last = trace[trace.len() - 1];
    peak > 0 && peak + 1 < trace.len() && top - trace[0] > delta_rel * top && top - last > delta_rel * top
}

/// Noise-free run used to measure logged power per execution count.
fn probe_truth(cfg: &ExperimentConfig, executions: u32) -> Result<GroundTruth> {
    let kernel = cfg.kernels[0].noise_free();
    let (lo, _) = cfg.pre_delay_range;
    let run_cfg = RunConfig {
        executions,
        pre_delay_range: (lo, lo),
        inter_exec_gap: cfg.inter_exec_gap,
        kernel_sequence: vec![(kernel, 1)],
    };
    let seed = derive_seed(&[cfg.seed, PURPOSE_PROBE]);
    Ok(simulate_run(0, &run_cfg, &cfg.logger, &cfg.clock, seed)?.1)
}

struct Planned {
    timing: TimingSummary,
    plan: PhasePlan,
    summary: PlanSummary,
    guidance: GuidanceEntry,
    runs: u32,
}

fn plan_experiment(cfg: &ExperimentConfig, target: &str) -> Result<Planned> {
    let window = cfg.logger.averaging_window;
    let per_pass: u32 = cfg.run_config(1).kernel_sequence.iter().map(|(_, r)| *r).sum();
    let target_reps = cfg.run_config(1).kernel_sequence.iter().filter(|(k, _)| k.kernel_id == target).map(|(_, r)| *r).sum::<u32>();

    // step 1: time the kernel
    let timing_seed = derive_seed(&[cfg.seed, PURPOSE_TIMING]);
    let (timing_run, _) = simulate_run(
        TIMING_RUN_ID,
        &cfg.run_config(PRE_TIMING_EXECS),
        &cfg.logger,
        &cfg.clock,
        timing_seed,
    )
    .at(Stage::Timing)?;
    let times = target_times(&timing_run, target);
    let warm = detect_warmup_count(&times, cfg.stability_rel).at(Stage::Timing)?;
    let exec_time = lower_median(&times[warm..]);
    let mut guidance = lookup_guidance(exec_time).at(Stage::Timing)?;
    let mut overridden = Vec::new();
    if let Some(m) = cfg.margin_rel {
        guidance.margin_rel = m;
        overridden.push("margin_rel".to_string());
    }
    if let Some(d) = cfg.loi_density {
        guidance.loi_density = d;
        overridden.push("loi_density".to_string());
    }
    let runs = match cfg.runs {
        Some(r) => {
            overridden.push("runs".to_string());
            r
        }
        None => guidance.runs,
    };

    // steps 2-4: executions per run
    let period = match cfg.mode {
        WorkloadMode::Isolated => None,
        WorkloadMode::Interleaved => {
            let passes_warm = warm.div_ceil(target_reps.max(1) as usize);
            pass_period(&timing_run, per_pass as usize, passes_warm, cfg.inter_exec_gap)
        }
    };
    let formula = compute_ssp_executions(window, period.unwrap_or(exec_time), cfg.sse_execs).at(Stage::Planning)?;
    let mut searched = None;
    if cfg.mode == WorkloadMode::Isolated {
        let n_hi = formula + SEARCH_SPAN;
        let truth = probe_truth(cfg, n_hi + 1).at(Stage::Planning)?;
        let power = |n: u32| -> Result<f64> { Ok(truth.execution_mean_logged(n as usize - 1, PROBE_SAMPLES)?.total) };
        let trace = (1..=formula + 1).map(power).collect::<Result<Vec<f64>>>().at(Stage::Planning)?;
        if rises_then_falls(&trace, cfg.stability_rel) {
            searched = Some(binary_search_ssp(power, formula, n_hi, cfg.stability_rel).at(Stage::Planning)?);
        }
    }
    let passes = searched.map_or(formula, |n| n.max(formula));
    let plan = PhasePlan {
        warmup_execs: cfg.warmup_execs,
        sse_execs_total: cfg.sse_execs,
        ssp_execs_total: passes * target_reps.max(1),
    };
    plan.validate().at(Stage::Planning)?;

    Ok(Planned {
        timing: TimingSummary {
            pre_timing_ns: times,
            warmup_detected: warm,
            exec_time_ns: exec_time,
            guidance: guidance.clone(),
            overridden,
        },
        plan,
        summary: PlanSummary {
            warmup_execs: plan.warmup_execs,
            sse_execs_total: plan.sse_execs_total,
            ssp_execs_total: plan.ssp_execs_total,
            ssp_formula: formula,
            ssp_binary_search: searched,
            passes_per_run: passes,
            pass_period_ns: period,
        },
        guidance,
        runs,
    })
}

struct Selection {
    bins: Vec<Bin>,
    golden_bounds: BTreeMap<RunId, PhaseBoundaries>,
    lois: Vec<LoiSample>,
}

/// Steps 6 and 7 over a set of runs.
fn select_and_sync(
    runs: &[RunRecord],
    plan: &PhasePlan,
    target: &str,
    margin_rel: f64,
    loi: &LoiOptions,
) -> Result<Selection> {
    let bounds: BTreeMap<RunId, PhaseBoundaries> = runs
        .iter()
        .map(|r| Ok((r.run_id, classify_kernel_phases(plan, r, target)?)))
        .collect::<Result<_>>()
        .at(Stage::Binning)?;
    let ssp_times: BTreeMap<RunId, Nanos> = runs
        .iter()
        .map(|r| (r.run_id, r.executions[bounds[&r.run_id].ssp_index as usize].duration()))
        .collect();
    let bins = bin_runs(&ssp_times, margin_rel).at(Stage::Binning)?;
    let golden = select_golden_runs(&bins);
    let golden_bounds = bounds.into_iter().filter(|(r, _)| golden.contains(r)).collect();

    let per_run: Vec<Vec<LoiSample>> = runs
        .par_iter()
        .map(|r| identify_loi(r, &SyncModel::from_run(r), loi))
        .collect::<Result<_>>()
        .at(Stage::Sync)?;
    let lois = per_run
        .into_iter()
        .flatten()
        .filter(|l| l.kernel_id == target)
        .collect();
    Ok(Selection {
        bins,
        golden_bounds,
        lois,
    })
}

fn phase_lois<'a>(sel: &'a Selection, phase: Phase) -> impl Iterator<Item = &'a LoiSample> + 'a {
    sel.lois.iter().filter(move |l| {
        sel.golden_bounds
            .get(&l.run_id)
            .is_some_and(|b| b.index_of(phase) == l.exec_index)
    })
}

fn loi_summary(sel: &Selection, phases: &[Phase], anchor: Nanos, guidance: &GuidanceEntry) -> LoiSummary {
    let per_phase = phases
        .iter()
        .map(|&phase| {
            let lois: Vec<LoiSample> = phase_lois(sel, phase).cloned().collect();
            let entry = PhaseLois {
                count: lois.len(),
                mixed: lois.iter().filter(|l| l.mixed).count(),
                sufficiency: loi_sufficiency(&lois, anchor, guidance),
            };
            (phase, entry)
        })
        .collect();
    LoiSummary {
        loi_density_ns: guidance.loi_density,
        total: sel.lois.len(),
        per_phase,
    }
}

fn deficit(summary: &LoiSummary) -> u64 {
    summary
        .per_phase
        .values()
        .map(|p| match p.sufficiency {
            Sufficiency::Sufficient => 0,
            Sufficiency::Deficit(n) => n,
        })
        .max()
        .unwrap_or(0)
}

struct Stitched {
    profiles: Vec<StitchedProfile>,
    fits: Vec<FitEntry>,
    sse_ssp_error: BTreeMap<Component, f64>,
}

/// Step 9.
fn stitch_and_fit(sel: &Selection, phases: &[Phase], target: &str, anchor: Nanos, degree: usize) -> Result<Stitched> {
    let mut profiles = Vec::new();
    let mut fits = Vec::new();
    for &phase in phases {
        for component in Component::ALL {
            let profile = stitch(&sel.lois, &sel.golden_bounds, phase, component, target, anchor).at(Stage::Stitch)?;
            let (fit, error) = match fit_poly(&profile, degree) {
                Ok(f) => (Some(f), None),
                Err(e @ Error::Underdetermined { .. }) => (None, Some(e.to_string())),
                Err(e) => return Err(e.at(Stage::Fit)),
            };
            fits.push(FitEntry {
                phase,
                component,
                fit,
                error,
            });
            profiles.push(profile);
        }
    }
    let mut errors = BTreeMap::new();
    if phases.len() == 2 {
        for component in Component::ALL {
            let find = |ph: Phase| {
                profiles
                    .iter()
                    .find(|p| p.phase == ph && p.component == component)
                    .expect("both phases stitched")
            };
            let e = sse_ssp_error(find(Phase::Sse), find(Phase::Ssp)).at(Stage::Stitch)?;
            errors.insert(component, e);
        }
    }
    Ok(Stitched {
        profiles,
        fits,
        sse_ssp_error: errors,
    })
}

/// Reference spread used to normalize reconstruction error: max - min of the
/// reference, or its mean level when the profile is flat.
pub fn dynamic_range(reference: &[f64]) -> f64 {
    let max = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = reference.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let range = max - min;
    if range > 1e-6 * mean.abs() {
        range
    } else {
        mean.abs()
    }
}

/// SSP reconstruction error against the kernel's isolated steady state.
pub fn reconstruction_error(profile: &StitchedProfile, truth: &GroundTruth) -> Result<ComponentError> {
    let err = profile_error(profile, truth)?;
    let window = truth.logger.averaging_window;
    let reference = profile
        .points
        .iter()
        .map(|p| Ok(truth.steady_window_average(&profile.kernel_id, p.toi, window)?.get(profile.component)))
        .collect::<Result<Vec<f64>>>()?;
    let range = dynamic_range(&reference);
    Ok(ComponentError {
        rms_w: err.rms,
        max_abs_w: err.max_abs,
        dynamic_range_w: range,
        rms_rel: err.rms / range,
    })
}

/// Runs the whole methodology against the simulator.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate().at(Stage::Planning)?;
    let target = cfg.target_kernel_id().to_string();
    let opts = cfg.analysis_options();
    let phases = cfg.phase.phases();

    let planned = plan_experiment(cfg, &target)?;
    let run_cfg = cfg.run_config(planned.summary.passes_per_run);
    let simulate = |ids: std::ops::Range<RunId>| -> Result<Vec<(RunRecord, GroundTruth)>> {
        ids.into_par_iter()
            .map(|r| simulate_run(r, &run_cfg, &cfg.logger, &cfg.clock, cfg.seed))
            .collect::<Result<Vec<_>>>()
    };

    // step 5
    let (mut runs, mut truths): (Vec<_>, Vec<_>) = simulate(0..planned.runs).at(Stage::Simulation)?.into_iter().unzip();

    // steps 6-7
    let margin = planned.guidance.margin_rel;
    let mut sel = select_and_sync(&runs, &planned.plan, &target, margin, &opts.loi)?;
    let mut lois = loi_summary(&sel, phases, sel.bins[0].anchor, &planned.guidance);

    // step 8: one round of extra runs
    let mut top_up = 0u32;
    let missing = deficit(&lois);
    if cfg.top_up && missing > 0 {
        top_up = missing.min(u32::MAX as u64 - planned.runs as u64) as u32;
        let extra = simulate(planned.runs..planned.runs + top_up).at(Stage::TopUp)?;
        for (r, t) in extra {
            runs.push(r);
            truths.push(t);
        }
        sel = select_and_sync(&runs, &planned.plan, &target, margin, &opts.loi).at(Stage::TopUp)?;
        lois = loi_summary(&sel, phases, sel.bins[0].anchor, &planned.guidance);
    }

    // step 9
    let anchor = sel.bins[0].anchor;
    let stitched = stitch_and_fit(&sel, phases, &target, anchor, opts.fit_degree)?;

    let reconstruction = if phases.contains(&Phase::Ssp) {
        let first_golden = *sel.golden_bounds.keys().next().expect("golden bin is never empty");
        let truth = &truths[runs.iter().position(|r| r.run_id == first_golden).expect("run exists")];
        let ssp = stitched
            .profiles
            .iter()
            .filter(|p| p.phase == Phase::Ssp)
            .map(|p| Ok((p.component, reconstruction_error(p, truth)?)))
            .collect::<Result<BTreeMap<_, _>>>()
            .at(Stage::Output)?;
        Reconstruction::Available {
            reference: "isolated back-to-back steady state at nominal execution time".into(),
            ssp,
        }
    } else {
        Reconstruction::Unavailable {
            reason: "no SSP profile was requested".into(),
        }
    };

    let report = build_report(
        cfg.name.clone(),
        InputSource::Simulated,
        Some(cfg.seed),
        &target,
        planned.timing,
        planned.summary,
        planned.runs,
        top_up,
        &sel,
        margin,
        lois,
        stitched,
        reconstruction,
    );
    Ok(Experiment {
        report,
        runs,
        truths,
        lois: sel.lois,
        golden_bounds: sel.golden_bounds,
    })
}

/// Runs steps 6 to 9 on captured logs. Step 1 is read off the runs themselves, and a
/// LOI deficit is reported rather than topped up.
pub fn analyze_runs(name: &str, runs: Vec<RunRecord>, opts: &AnalysisOptions) -> Result<Experiment> {
    if runs.is_empty() {
        return Err(Error::EmptyInput("runs").at(Stage::Timing));
    }
    for r in &runs {
        r.validate().at(Stage::Timing)?;
    }
    let target = match &opts.target_kernel {
        Some(k) => k.clone(),
        None => runs[0]
            .executions
            .last()
            .ok_or(Error::EmptyInput("executions"))
            .at(Stage::Timing)?
            .kernel_id
            .clone(),
    };
    let phases = opts.phase.phases();

    // step 1 stand-in: execution times per occurrence, median across runs
    let per_run: Vec<Vec<Nanos>> = runs.iter().map(|r| target_times(r, &target)).collect();
    let occurrences = per_run.iter().map(Vec::len).min().unwrap_or(0);
    if occurrences < opts.sse_execs as usize {
        return Err(Error::TooFewExecutions {
            needed: opts.sse_execs as usize,
            found: occurrences,
        }
        .at(Stage::Timing));
    }
    let typical: Vec<Nanos> = (0..occurrences)
        .map(|i| lower_median(&per_run.iter().map(|t| t[i]).collect::<Vec<_>>()))
        .collect();
    let warm = detect_warmup_count(&typical, opts.stability_rel).at(Stage::Timing)?;
    let pooled: Vec<Nanos> = per_run.iter().flat_map(|t| t[warm..occurrences].iter().copied()).collect();
    let exec_time = lower_median(&pooled);
    let mut guidance = lookup_guidance(exec_time).at(Stage::Timing)?;
    let mut overridden = Vec::new();
    if let Some(m) = opts.margin_rel {
        guidance.margin_rel = m;
        overridden.push("margin_rel".to_string());
    }
    if let Some(d) = opts.loi_density {
        guidance.loi_density = d;
        overridden.push("loi_density".to_string());
    }

    let formula = compute_ssp_executions(opts.loi.averaging_window, exec_time, opts.sse_execs).at(Stage::Planning)?;
    let plan = PhasePlan {
        warmup_execs: opts.warmup_execs,
        sse_execs_total: opts.sse_execs,
        ssp_execs_total: occurrences as u32,
    };
    plan.validate().at(Stage::Planning)?;

    let sel = select_and_sync(&runs, &plan, &target, guidance.margin_rel, &opts.loi)?;
    let anchor = sel.bins[0].anchor;
    let lois = loi_summary(&sel, phases, anchor, &guidance);
    let stitched = stitch_and_fit(&sel, phases, &target, anchor, opts.fit_degree)?;
    let executed = runs.len() as u32;
    let report = build_report(
        name.to_string(),
        InputSource::Imported,
        None,
        &target,
        TimingSummary {
            pre_timing_ns: typical,
            warmup_detected: warm,
            exec_time_ns: exec_time,
            guidance: guidance.clone(),
            overridden,
        },
        PlanSummary {
            warmup_execs: plan.warmup_execs,
            sse_execs_total: plan.sse_execs_total,
            ssp_execs_total: plan.ssp_execs_total,
            ssp_formula: formula,
            ssp_binary_search: None,
            passes_per_run: plan.ssp_execs_total,
            pass_period_ns: None,
        },
        executed,
        0,
        &sel,
        guidance.margin_rel,
        lois,
        stitched,
        Reconstruction::Unavailable {
            reason: "imported logs carry no ground truth".into(),
        },
    );
    Ok(Experiment {
        report,
        runs,
        truths: Vec::new(),
        lois: sel.lois,
        golden_bounds: sel.golden_bounds,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    name: String,
    source: InputSource,
    seed: Option<u64>,
    target: &str,
    timing: TimingSummary,
    plan: PlanSummary,
    planned_runs: u32,
    top_up: u32,
    sel: &Selection,
    margin_rel: f64,
    lois: LoiSummary,
    stitched: Stitched,
    reconstruction: Reconstruction,
) -> ExperimentReport {
    let golden: BTreeSet<RunId> = sel.golden_bounds.keys().copied().collect();
    let executed = planned_runs + top_up;
    let discarded_ids: Vec<RunId> = sel
        .bins
        .iter()
        .flat_map(|b| b.members.iter().copied())
        .filter(|r| !golden.contains(r))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let phase_boundaries = *sel.golden_bounds.values().next().expect("golden bin is never empty");
    ExperimentReport {
        version: REPORT_VERSION.to_string(),
        name,
        source,
        seed,
        kernel_id: target.to_string(),
        timing,
        plan,
        runs: RunCounts {
            planned: planned_runs,
            top_up,
            executed,
            golden: golden.len() as u32,
            discarded: executed - golden.len() as u32,
            bin_anchor_ns: sel.bins[0].anchor,
            margin_rel,
            discarded_ids,
        },
        lois,
        phase_boundaries,
        profiles: stitched.profiles,
        fits: stitched.fits,
        sse_ssp_error: stitched.sse_ssp_error,
        reconstruction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rise_then_fall_detection() {
        assert!(rises_then_falls(&[100.0, 500.0, 450.0, 420.0], 0.02));
        assert!(!rises_then_falls(&[100.0, 300.0, 500.0, 500.0], 0.02));
        assert!(!rises_then_falls(&[500.0, 400.0, 300.0], 0.02));
        assert!(!rises_then_falls(&[100.0, 500.0, 495.0], 0.02));
    }

    #[test]
    fn flat_profiles_normalize_by_level() {
        assert_eq!(dynamic_range(&[600.0, 600.0]), 600.0);
        assert_eq!(dynamic_range(&[100.0, 300.0, 200.0]), 200.0);
    }

    #[test]
    fn pass_period_median() {
        use crate::telemetry::{ExecutionRecord, GpuTimestamp};
        let mut execs = Vec::new();
        let mut t = 0;
        for i in 0..10u32 {
            let d = if i % 2 == 0 { 300 } else { 100 };
            execs.push(ExecutionRecord {
                exec_index: i,
                kernel_id: if i % 2 == 0 { "h" } else { "s" }.into(),
                start_cpu: t,
                end_cpu: t + d,
            });
            t += d + 5;
        }
        let run = RunRecord {
            run_id: 0,
            t0_gpu: GpuTimestamp::new(0, 1),
            tc_cpu: 0,
            read_delay: 0,
            pre_delay: 0,
            executions: execs,
            log: Vec::new(),
        };
        assert_eq!(pass_period(&run, 2, 0, 5), Some(410));
    }
}
