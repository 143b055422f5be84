//! The user-facing pipeline: configuration, orchestration, reports, and file formats.

pub mod config;
pub mod experiment;
pub mod io;
pub mod plot;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, Stage, StageExt};

pub use config::{preset, ExperimentConfig, LoiSettings, PhaseSelection, WorkloadMode, PRESETS};
pub use experiment::{analyze_runs, run_experiment, AnalysisOptions, Experiment};
pub use io::{import_log_files, import_logs};
pub use plot::emit_plot_data;
pub use report::{ExperimentReport, InputSource, Reconstruction, REPORT_VERSION};

/// Writes every artifact of an experiment into `out_dir`.
pub fn write_artifacts(exp: &Experiment, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let inner = || -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir)?;
        let path = |name: &str| out_dir.join(name);
        let mut written = Vec::new();

        io::write_power_log(fs::File::create(path("power_log.csv"))?, &exp.runs)?;
        written.push(path("power_log.csv"));
        io::write_run_meta(fs::File::create(path("run_meta.csv"))?, &exp.runs)?;
        written.push(path("run_meta.csv"));
        io::write_lois(fs::File::create(path("lois.csv"))?, &exp.lois, &exp.golden_bounds)?;
        written.push(path("lois.csv"));
        io::write_profiles(fs::File::create(path("profile.csv"))?, &exp.report.profiles)?;
        written.push(path("profile.csv"));

        let mut fits = serde_json::to_string_pretty(&exp.report.fits)?;
        fits.push('\n');
        fs::write(path("fits.json"), fits)?;
        written.push(path("fits.json"));
        fs::write(path("report.json"), exp.report.to_json()?)?;
        written.push(path("report.json"));

        written.extend(emit_plot_data(&exp.report, out_dir)?);
        Ok(written)
    };
    inner().at(Stage::Output)
}
