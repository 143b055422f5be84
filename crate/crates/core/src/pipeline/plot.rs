//! Plot-ready files: one profile CSV per phase and component, and a two-column
//! gnuplot series of total power per phase.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::telemetry::{Component, NS_PER_US};

use super::io::write_profiles;
use super::report::ExperimentReport;

pub fn emit_plot_data(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for profile in &report.profiles {
        let path = out_dir.join(format!("profile_{}_{}.csv", profile.phase, profile.component));
        write_profiles(fs::File::create(&path)?, std::slice::from_ref(profile))?;
        written.push(path);

        if profile.component == Component::Total {
            let mut text = format!("# {} {} total power\n# toi_us power_w\n", profile.kernel_id, profile.phase);
            for p in &profile.points {
                let _ = writeln!(text, "{} {}", p.toi as f64 / NS_PER_US as f64, p.power);
            }
            let path = out_dir.join(format!("series_{}_total.dat", profile.phase));
            fs::write(&path, text)?;
            written.push(path);
        }
    }
    Ok(written)
}
