//! CSV import/export of run logs, LOIs, and stitched profiles.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stitch::StitchedProfile;
use crate::telemetry::{
    Component, ComponentPower, ExecutionRecord, GpuTimestamp, LoiSample, Nanos, Phase, PhaseBoundaries,
    PowerLogEntry, RunId, RunRecord, DEFAULT_TICK_PERIOD_NS,
};

pub const POWER_LOG_COLUMNS: [&str; 8] = [
    "run_id",
    "sample_idx",
    "gpu_ts_ticks",
    "tick_period_ns",
    "p_total_w",
    "p_xcd_w",
    "p_iod_w",
    "p_hbm_w",
];

pub const RUN_META_COLUMNS: [&str; 8] = [
    "run_id",
    "t0_gpu_ticks",
    "tc_cpu_ns",
    "read_delay_ns",
    "exec_index",
    "kernel_id",
    "start_cpu_ns",
    "end_cpu_ns",
];

pub const PROFILE_COLUMNS: [&str; 6] = ["kernel_id", "phase", "component", "toi_ns", "power_w", "run_id"];

pub const LOI_COLUMNS: [&str; 10] = [
    "run_id",
    "exec_index",
    "kernel_id",
    "phase",
    "toi_ns",
    "p_total_w",
    "p_xcd_w",
    "p_iod_w",
    "p_hbm_w",
    "mixed",
];

#[derive(Debug, Serialize, Deserialize)]
struct PowerRow {
    run_id: RunId,
    sample_idx: u64,
    gpu_ts_ticks: i64,
    tick_period_ns: Nanos,
    p_total_w: f64,
    p_xcd_w: f64,
    p_iod_w: f64,
    p_hbm_w: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaRow {
    run_id: RunId,
    t0_gpu_ticks: i64,
    tc_cpu_ns: Nanos,
    read_delay_ns: Nanos,
    exec_index: u32,
    kernel_id: String,
    start_cpu_ns: Nanos,
    end_cpu_ns: Nanos,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    kernel_id: String,
    phase: Phase,
    component: Component,
    toi_ns: Nanos,
    power_w: f64,
    run_id: RunId,
}

/// Which phase execution a LOI came from, as written to LOI CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoiPhase {
    Sse,
    Ssp,
    /// SSE and SSP are the same execution.
    Both,
    /// Neither, or the run was discarded.
    None,
}

impl LoiPhase {
    fn of(sample: &LoiSample, bounds: Option<&PhaseBoundaries>) -> Self {
        let Some(b) = bounds else {
            return LoiPhase::None;
        };
        match (sample.exec_index == b.sse_index, sample.exec_index == b.ssp_index) {
            (true, true) => LoiPhase::Both,
            (true, false) => LoiPhase::Sse,
            (false, true) => LoiPhase::Ssp,
            (false, false) => LoiPhase::None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LoiRow {
    run_id: RunId,
    exec_index: u32,
    kernel_id: String,
    phase: LoiPhase,
    toi_ns: Nanos,
    p_total_w: f64,
    p_xcd_w: f64,
    p_iod_w: f64,
    p_hbm_w: f64,
    mixed: bool,
}

fn schema(file: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Schema {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

/// Reads `file` (named `name` in errors) as CSV rows of `T`, checking the header first.
fn read_rows<T, R>(name: &str, reader: R, columns: &[&str]) -> Result<Vec<(u64, T)>>
where
    T: for<'de> Deserialize<'de>,
    R: Read,
{
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| schema(name, 1, e.to_string()))?.clone();
    for col in columns {
        if !headers.iter().any(|h| h == *col) {
            return Err(schema(name, 1, format!("missing column '{col}'")));
        }
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            schema(name, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: T = record
            .deserialize(Some(&headers))
            .map_err(|e| schema(name, line, e.to_string()))?;
        rows.push((line, row));
    }
    Ok(rows)
}

pub fn write_power_log<W: Write>(out: W, runs: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for run in runs {
        for (i, e) in run.log.iter().enumerate() {
            w.serialize(PowerRow {
                run_id: run.run_id,
                sample_idx: i as u64,
                gpu_ts_ticks: e.gpu_ts.ticks,
                tick_period_ns: e.gpu_ts.tick_period,
                p_total_w: e.power.total,
                p_xcd_w: e.power.xcd,
                p_iod_w: e.power.iod,
                p_hbm_w: e.power.hbm,
            })?;
        }
    }
    if runs.iter().all(|r| r.log.is_empty()) {
        w.write_record(POWER_LOG_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_run_meta<W: Write>(out: W, runs: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for run in runs {
        for e in &run.executions {
            w.serialize(MetaRow {
                run_id: run.run_id,
                t0_gpu_ticks: run.t0_gpu.ticks,
                tc_cpu_ns: run.tc_cpu,
                read_delay_ns: run.read_delay,
                exec_index: e.exec_index,
                kernel_id: e.kernel_id.clone(),
                start_cpu_ns: e.start_cpu,
                end_cpu_ns: e.end_cpu,
            })?;
        }
    }
    if runs.iter().all(|r| r.executions.is_empty()) {
        w.write_record(RUN_META_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a power log and run metadata into run records, ordered by run id.
pub fn import_logs<P: Read, M: Read>(power: P, meta: M) -> Result<Vec<RunRecord>> {
    import_named(("power_log.csv", power), ("run_meta.csv", meta))
}

pub fn import_log_files(power: &Path, meta: &Path) -> Result<Vec<RunRecord>> {
    import_named(
        (&power.display().to_string(), std::fs::File::open(power)?),
        (&meta.display().to_string(), std::fs::File::open(meta)?),
    )
}

fn import_named<P: Read, M: Read>(power: (&str, P), meta: (&str, M)) -> Result<Vec<RunRecord>> {
    let (pname, meta_name) = (power.0, meta.0);
    let mut logs: BTreeMap<RunId, Vec<PowerLogEntry>> = BTreeMap::new();
    for (line, row) in read_rows::<PowerRow, _>(pname, power.1, &POWER_LOG_COLUMNS)? {
        let log = logs.entry(row.run_id).or_default();
        if row.sample_idx != log.len() as u64 {
            return Err(schema(
                pname,
                line,
                format!("run {}: expected sample_idx {}, got {}", row.run_id, log.len(), row.sample_idx),
            ));
        }
        if row.tick_period_ns <= 0 {
            return Err(schema(pname, line, "tick_period_ns must be > 0"));
        }
        if let Some(prev) = log.last() {
            if row.gpu_ts_ticks < prev.gpu_ts.ticks {
                return Err(schema(
                    pname,
                    line,
                    format!("run {}: gpu_ts_ticks out of order", row.run_id),
                ));
            }
            if row.tick_period_ns != prev.gpu_ts.tick_period {
                return Err(schema(pname, line, "tick_period_ns changes within a run"));
            }
        }
        log.push(PowerLogEntry {
            gpu_ts: GpuTimestamp::new(row.gpu_ts_ticks, row.tick_period_ns),
            power: ComponentPower {
                total: row.p_total_w,
                xcd: row.p_xcd_w,
                iod: row.p_iod_w,
                hbm: row.p_hbm_w,
            },
        });
    }

    let mut runs: BTreeMap<RunId, RunRecord> = BTreeMap::new();
    for (line, row) in read_rows::<MetaRow, _>(meta_name, meta.1, &RUN_META_COLUMNS)? {
        let run = runs.entry(row.run_id).or_insert_with(|| RunRecord {
            run_id: row.run_id,
            t0_gpu: GpuTimestamp::new(row.t0_gpu_ticks, DEFAULT_TICK_PERIOD_NS),
            tc_cpu: row.tc_cpu_ns,
            read_delay: row.read_delay_ns,
            pre_delay: row.start_cpu_ns - row.tc_cpu_ns,
            executions: Vec::new(),
            log: Vec::new(),
        });
        if (run.t0_gpu.ticks, run.tc_cpu, run.read_delay) != (row.t0_gpu_ticks, row.tc_cpu_ns, row.read_delay_ns) {
            return Err(schema(
                meta_name,
                line,
                format!("run {}: sync anchor differs between rows", row.run_id),
            ));
        }
        if row.exec_index as usize != run.executions.len() {
            return Err(schema(
                meta_name,
                line,
                format!(
                    "run {}: expected exec_index {}, got {}",
                    row.run_id,
                    run.executions.len(),
                    row.exec_index
                ),
            ));
        }
        if row.end_cpu_ns <= row.start_cpu_ns {
            return Err(schema(meta_name, line, "end_cpu_ns must be after start_cpu_ns"));
        }
        if let Some(prev) = run.executions.last() {
            if row.start_cpu_ns < prev.end_cpu {
                return Err(schema(meta_name, line, "executions overlap or are out of order"));
            }
        }
        run.executions.push(ExecutionRecord {
            exec_index: row.exec_index,
            kernel_id: row.kernel_id,
            start_cpu: row.start_cpu_ns,
            end_cpu: row.end_cpu_ns,
        });
    }

    if let Some(orphan) = logs.keys().find(|r| !runs.contains_key(r)) {
        return Err(schema(pname, 0, format!("run {orphan} has power samples but no metadata")));
    }
    for (id, run) in runs.iter_mut() {
        if let Some(log) = logs.remove(id) {
            run.t0_gpu.tick_period = log[0].gpu_ts.tick_period;
            run.log = log;
        }
    }
    Ok(runs.into_values().collect())
}

pub fn write_lois<W: Write>(out: W, lois: &[LoiSample], bounds: &BTreeMap<RunId, PhaseBoundaries>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for l in lois {
        w.serialize(LoiRow {
            run_id: l.run_id,
            exec_index: l.exec_index,
            kernel_id: l.kernel_id.clone(),
            phase: LoiPhase::of(l, bounds.get(&l.run_id)),
            toi_ns: l.toi,
            p_total_w: l.power.total,
            p_xcd_w: l.power.xcd,
            p_iod_w: l.power.iod,
            p_hbm_w: l.power.hbm,
            mixed: l.mixed,
        })?;
    }
    if lois.is_empty() {
        w.write_record(LOI_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a LOI CSV back, rebuilding per-run phase boundaries from the `phase` column.
///
/// Runs without SSE (or SSP) rows get an index no execution has.
pub fn read_lois<R: Read>(name: &str, input: R) -> Result<(Vec<LoiSample>, BTreeMap<RunId, PhaseBoundaries>)> {
    let mut lois = Vec::new();
    let mut bounds: BTreeMap<RunId, PhaseBoundaries> = BTreeMap::new();
    for (line, row) in read_rows::<LoiRow, _>(name, input, &LOI_COLUMNS)? {
        if row.toi_ns < 0 {
            return Err(schema(name, line, "toi_ns must be >= 0"));
        }
        if row.phase != LoiPhase::None {
            let b = bounds.entry(row.run_id).or_insert(PhaseBoundaries {
                warmup_count: 0,
                sse_index: u32::MAX,
                ssp_index: u32::MAX,
            });
            if matches!(row.phase, LoiPhase::Sse | LoiPhase::Both) {
                set_index(&mut b.sse_index, row.exec_index).map_err(|m| schema(name, line, m))?;
            }
            if matches!(row.phase, LoiPhase::Ssp | LoiPhase::Both) {
                set_index(&mut b.ssp_index, row.exec_index).map_err(|m| schema(name, line, m))?;
            }
        }
        lois.push(LoiSample {
            run_id: row.run_id,
            exec_index: row.exec_index,
            kernel_id: row.kernel_id,
            toi: row.toi_ns,
            power: ComponentPower {
                total: row.p_total_w,
                xcd: row.p_xcd_w,
                iod: row.p_iod_w,
                hbm: row.p_hbm_w,
            },
            mixed: row.mixed,
        });
    }
    Ok((lois, bounds))
}

fn set_index(slot: &mut u32, exec_index: u32) -> std::result::Result<(), String> {
    if *slot != u32::MAX && *slot != exec_index {
        return Err(format!("phase assigned to executions {} and {exec_index}", *slot));
    }
    *slot = exec_index;
    Ok(())
}

pub fn write_profiles<W: Write>(out: W, profiles: &[StitchedProfile]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in profiles {
        for pt in &p.points {
            w.serialize(ProfileRow {
                kernel_id: p.kernel_id.clone(),
                phase: p.phase,
                component: p.component,
                toi_ns: pt.toi,
                power_w: pt.power,
                run_id: pt.run_id,
            })?;
        }
    }
    if profiles.iter().all(|p| p.points.is_empty()) {
        w.write_record(PROFILE_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const POWER: &str = "run_id,sample_idx,gpu_ts_ticks,tick_period_ns,p_total_w,p_xcd_w,p_iod_w,p_hbm_w
0,0,100000,10,100,40,30,20
0,1,200000,10,300.5,200,50,25
";
    const META: &str = "run_id,t0_gpu_ticks,tc_cpu_ns,read_delay_ns,exec_index,kernel_id,start_cpu_ns,end_cpu_ns
0,100000,5001500,1500,0,k,5100000,5400000
0,100000,5001500,1500,1,k,5400000,5700000
";

    #[test]
    fn parses_minimal_logs() {
        let runs = import_logs(POWER.as_bytes(), META.as_bytes()).unwrap();
        assert_eq!(runs.len(), 1);
        let r = &runs[0];
        assert_eq!(r.pre_delay, 98_500);
        assert_eq!(r.t0_gpu, GpuTimestamp::new(100_000, 10));
        assert_eq!(r.log[1].power.total, 300.5);
        assert_eq!(r.executions[1].duration(), 300_000);
    }

    #[test]
    fn missing_column_is_named() {
        let bad = POWER.replace("p_iod_w", "p_io_w");
        let err = import_logs(bad.as_bytes(), META.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("missing column 'p_iod_w'"), "{err}");
    }

    #[test]
    fn out_of_order_timestamps_rejected() {
        let bad = POWER.replace("0,1,200000", "0,1,90000");
        let err = import_logs(bad.as_bytes(), META.as_bytes()).unwrap_err();
        match err {
            Error::Schema { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("out of order"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_value_reports_line() {
        let bad = META.replace("1,k,5400000", "1,k,abc");
        match import_logs(POWER.as_bytes(), bad.as_bytes()).unwrap_err() {
            Error::Schema { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn orphan_power_rows_rejected() {
        let extra = format!("{POWER}7,0,1,10,1,1,0,0\n");
        assert!(import_logs(extra.as_bytes(), META.as_bytes()).is_err());
    }
}
