use std::collections::BTreeSet;
use std::fs;

use fingrav_core::pipeline::experiment::reconstruction_error;
use fingrav_core::pipeline::io::{write_power_log, write_run_meta};
use fingrav_core::pipeline::{
    analyze_runs, emit_plot_data, import_logs, preset, run_experiment, ExperimentConfig, ExperimentReport, InputSource,
    PhaseSelection, Reconstruction, REPORT_VERSION,
};
use fingrav_core::stitch::stitch;
use fingrav_core::sync::{identify_loi_unsynchronized, LoiMode};
use fingrav_core::telemetry::{Component, Phase, NS_PER_MS};
use fingrav_core::Error;

fn file_names(dir: &std::path::Path) -> BTreeSet<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect()
}

#[test]
fn run_counts_follow_guidance() {
    let exp = run_experiment(&preset("constant").unwrap()).unwrap();
    let r = &exp.report;
    assert_eq!(r.timing.guidance.runs, 200);
    assert_eq!(r.runs.planned, 200);
    assert_eq!(r.runs.executed, r.runs.planned + r.runs.top_up);
    assert_eq!(r.runs.golden + r.runs.discarded, r.runs.executed);
    assert_eq!(r.runs.discarded_ids.len() as u32, r.runs.discarded);
    assert!(r.timing.overridden.is_empty());
    assert_eq!(exp.runs.len() as u32, r.runs.executed);
}

#[test]
fn overrides_are_recorded() {
    let mut cfg = preset("constant").unwrap();
    cfg.runs = Some(40);
    cfg.margin_rel = Some(0.1);
    let r = run_experiment(&cfg).unwrap().report;
    assert_eq!(r.runs.planned, 40);
    assert_eq!(r.runs.margin_rel, 0.1);
    assert!(r.timing.overridden.iter().any(|o| o == "runs"));
    assert!(r.timing.overridden.iter().any(|o| o == "margin_rel"));
}

#[test]
fn plot_files_follow_phase_selection() {
    let both = tempfile::tempdir().unwrap();
    let exp = run_experiment(&preset("cb-long").unwrap()).unwrap();
    emit_plot_data(&exp.report, both.path()).unwrap();
    let names = file_names(both.path());
    assert_eq!(names.len(), 10);
    for phase in ["sse", "ssp"] {
        assert!(names.contains(&format!("profile_{phase}_total.csv")));
        assert!(names.contains(&format!("series_{phase}_total.dat")));
    }

    let only = tempfile::tempdir().unwrap();
    let mut cfg = preset("cb-long").unwrap();
    cfg.phase = PhaseSelection::Ssp;
    let exp = run_experiment(&cfg).unwrap();
    emit_plot_data(&exp.report, only.path()).unwrap();
    let names = file_names(only.path());
    assert_eq!(names.len(), 5);
    assert!(names.iter().all(|n| n.contains("ssp")), "{names:?}");
    assert!(exp.report.sse_ssp_error.is_empty());
}

#[test]
fn sse_only_has_no_reconstruction() {
    let mut cfg = preset("cb-long").unwrap();
    cfg.phase = PhaseSelection::Sse;
    let r = run_experiment(&cfg).unwrap().report;
    assert!(matches!(r.reconstruction, Reconstruction::Unavailable { .. }));
    assert!(r.profiles.iter().all(|p| p.phase == Phase::Sse));
}

#[test]
fn report_json_round_trip_and_version_check() {
    let r = run_experiment(&preset("throttle").unwrap()).unwrap().report;
    let text = r.to_json().unwrap();
    assert!(text.ends_with('\n'));
    assert!(text.contains(REPORT_VERSION));
    assert_eq!(ExperimentReport::from_json(&text).unwrap(), r);
    let bumped = text.replace(REPORT_VERSION, "fingrav-report/999");
    assert!(ExperimentReport::from_json(&bumped).is_err());
}

#[test]
fn imported_logs_reproduce_simulated_profile() {
    let mut cfg = preset("ramp").unwrap();
    cfg.runs = Some(60);
    let sim = run_experiment(&cfg).unwrap();
    let mut power = Vec::new();
    let mut meta = Vec::new();
    write_power_log(&mut power, &sim.runs).unwrap();
    write_run_meta(&mut meta, &sim.runs).unwrap();
    let runs = import_logs(power.as_slice(), meta.as_slice()).unwrap();

    let imported = analyze_runs("ramp-import", runs, &cfg.analysis_options()).unwrap();
    let r = &imported.report;
    assert_eq!(r.source, InputSource::Imported);
    assert_eq!(r.seed, None);
    assert!(matches!(r.reconstruction, Reconstruction::Unavailable { .. }));
    assert_eq!(r.plan.ssp_execs_total, sim.report.plan.passes_per_run);
    assert_eq!(r.phase_boundaries, sim.report.phase_boundaries);

    let a = sim.report.profile(Phase::Ssp, Component::Total).unwrap().mean_power().unwrap();
    let b = r.profile(Phase::Ssp, Component::Total).unwrap().mean_power().unwrap();
    assert!((a - b).abs() / a < 0.02, "{a} vs {b}");
}

#[test]
fn strict_mode_beats_lenient_on_gapped_runs() {
    let strict = run_experiment(&preset("straddle").unwrap()).unwrap();
    let mut cfg = preset("straddle").unwrap();
    cfg.loi.mode = LoiMode::Lenient;
    let lenient = run_experiment(&cfg).unwrap();
    let err = |r: &ExperimentReport| match &r.reconstruction {
        Reconstruction::Available { ssp, .. } => ssp[&Component::Total].rms_w,
        _ => panic!(),
    };
    assert!(err(&strict.report) < err(&lenient.report));
    let mixed = |r: &ExperimentReport| r.lois.per_phase[&Phase::Ssp].mixed;
    assert_eq!(mixed(&strict.report), 0);
    assert!(mixed(&lenient.report) > 0);
}

#[test]
fn interleaved_short_kernel_reads_high() {
    let exp = run_experiment(&preset("interleaved").unwrap()).unwrap();
    let cfg = preset("interleaved").unwrap();
    let isolated = cfg.kernels[1].steady_mean_power().total;
    let measured = exp.report.profile(Phase::Ssp, Component::Total).unwrap().mean_power().unwrap();
    assert_eq!(exp.report.kernel_id, "light");
    assert!(measured > isolated * 1.2, "{measured} vs {isolated}");
}

#[test]
fn interleaved_strict_mode_has_nothing_to_stitch() {
    let mut cfg = preset("interleaved").unwrap();
    cfg.loi.mode = LoiMode::Strict;
    cfg.top_up = false;
    let err = run_experiment(&cfg).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("stitching"), "{text}");
    assert!(matches!(err, Error::AtStage { .. }));
}

#[test]
fn unsynchronized_baseline_misses_the_ramp() {
    let mut cfg = preset("ramp").unwrap();
    cfg.clock.cpu_gpu_offset = 3 * NS_PER_MS + 123_457;
    let exp = run_experiment(&cfg).unwrap();
    let synced = exp.report.profile(Phase::Ssp, Component::Total).unwrap();

    let opts = cfg.analysis_options().loi;
    let raw: Vec<_> = exp
        .runs
        .iter()
        .filter(|r| exp.golden_bounds.contains_key(&r.run_id))
        .flat_map(|r| identify_loi_unsynchronized(r, &opts).unwrap())
        .collect();
    let first = *exp.golden_bounds.keys().next().unwrap();
    let truth = &exp.truths[exp.runs.iter().position(|r| r.run_id == first).unwrap()];
    let good = reconstruction_error(synced, truth).unwrap();
    match stitch(&raw, &exp.golden_bounds, Phase::Ssp, Component::Total, &synced.kernel_id, synced.exec_time_anchor) {
        Ok(unsynced) => {
            let bad = reconstruction_error(&unsynced, truth).unwrap();
            assert!(bad.rms_rel > 10.0 * good.rms_rel.max(0.005), "{bad:?} vs {good:?}");
        }
        Err(Error::EmptyProfile(_)) => {}
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn config_files_reject_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, "preset = \"constant\"\nsede = 3\n").unwrap();
    let err = ExperimentConfig::load(&path).unwrap_err().to_string();
    assert!(err.contains("sede"), "{err}");

    fs::write(&path, "preset = \"constant\"\nseed = 3\n[clock]\ndrift = 1\n").unwrap();
    assert!(ExperimentConfig::load(&path).is_err());

    fs::write(&path, "preset = \"constant\"\nseed = 3\n").unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap().seed, 3);
}

#[test]
fn different_seeds_give_different_runs() {
    let mut a = preset("ramp").unwrap();
    a.runs = Some(20);
    let mut b = a.clone();
    b.seed = 1;
    let (ra, rb) = (run_experiment(&a).unwrap(), run_experiment(&b).unwrap());
    assert_ne!(ra.runs, rb.runs);
    assert_eq!(ra.runs, run_experiment(&a).unwrap().runs);
}

#[test]
fn long_kernel_needs_four_ssp_executions() {
    let r = run_experiment(&preset("cb-long").unwrap()).unwrap().report;
    assert_eq!(r.plan.ssp_execs_total, 4);
    assert!(r.sse_ssp_error[&Component::Total] <= 1.0);
}

#[test]
fn constant_kernel_stitches_to_its_power() {
    let cfg = preset("constant").unwrap();
    let p = cfg.kernels[0].steady_mean_power();
    let r = run_experiment(&cfg).unwrap().report;
    for c in Component::ALL {
        let profile = r.profile(Phase::Ssp, c).unwrap();
        assert!(!profile.points.is_empty());
        for pt in &profile.points {
            assert!((pt.power - p.get(c)).abs() <= 1e-9, "{c}: {} vs {}", pt.power, p.get(c));
        }
    }
}
