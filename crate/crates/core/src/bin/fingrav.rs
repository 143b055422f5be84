use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fingrav_core::binning::lookup_guidance;
use fingrav_core::pipeline::io::{read_lois, write_profiles};
use fingrav_core::pipeline::report::FitEntry;
use fingrav_core::pipeline::{
    analyze_runs, import_log_files, preset, run_experiment, write_artifacts, AnalysisOptions, Experiment,
    ExperimentConfig, PhaseSelection, PRESETS,
};
use fingrav_core::stitch::{fit_poly, stitch, DEFAULT_FIT_DEGREE};
use fingrav_core::sync::{LoiMode, LoiOptions};
use fingrav_core::telemetry::{Component, Nanos, NS_PER_MS};
use fingrav_core::{Error, Result};

#[derive(Parser)]
#[command(name = "fingrav", version, about = "Fine-grain GPU power profiles from averaged power logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an experiment and reconstruct the kernel's power profile.
    Simulate(SimulateArgs),
    /// Reconstruct a profile from captured power_log.csv and run_meta.csv.
    Analyze(AnalyzeArgs),
    /// Print the profiling guidance row for an execution time.
    Guidance(GuidanceArgs),
    /// Stitch a LOI CSV into profile CSVs and polynomial fits.
    Stitch(StitchArgs),
}

#[derive(Args)]
struct LoiFlags {
    /// Drop samples whose averaging window reaches into idle gaps or other kernels.
    #[arg(long, conflicts_with = "lenient_loi")]
    strict_loi: bool,
    /// Keep such samples, tagged as mixed.
    #[arg(long)]
    lenient_loi: bool,
}

impl LoiFlags {
    fn mode(&self) -> Option<LoiMode> {
        match (self.strict_loi, self.lenient_loi) {
            (true, _) => Some(LoiMode::Strict),
            (_, true) => Some(LoiMode::Lenient),
            _ => None,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment configuration (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    phase: Option<PhaseSelection>,
    #[command(flatten)]
    loi: LoiFlags,
    /// Override the guidance run count.
    #[arg(long)]
    runs: Option<u32>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    power_log: PathBuf,
    #[arg(long)]
    run_meta: PathBuf,
    /// Analysis settings (TOML); logger window, margins, and LOI mode are read from it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Kernel to profile; defaults to the last kernel of the first run.
    #[arg(long)]
    kernel: Option<String>,
    /// Logger averaging window in nanoseconds when no config is given.
    #[arg(long, default_value_t = NS_PER_MS)]
    window_ns: Nanos,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    phase: Option<PhaseSelection>,
    #[command(flatten)]
    loi: LoiFlags,
}

#[derive(Args)]
struct GuidanceArgs {
    /// Kernel execution time in nanoseconds.
    #[arg(long)]
    exec_time_ns: Nanos,
}

#[derive(Args)]
struct StitchArgs {
    /// LOI CSV as written by `simulate` or `analyze`.
    #[arg(long)]
    lois: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value = "both")]
    phase: PhaseSelection,
    #[arg(long)]
    kernel: Option<String>,
    /// Execution time the TOI axis is normalized by; defaults to the largest TOI.
    #[arg(long)]
    anchor_ns: Option<Nanos>,
    #[arg(long, default_value_t = DEFAULT_FIT_DEGREE)]
    degree: usize,
}

fn load_config(path: Option<&Path>, preset_name: Option<&str>) -> Result<ExperimentConfig> {
    match (path, preset_name) {
        (Some(p), _) => ExperimentConfig::load(p),
        (None, Some(name)) => preset(name),
        (None, None) => Err(Error::InvalidConfig(format!(
            "give --config PATH or --preset NAME (presets: {})",
            PRESETS.join(", ")
        ))),
    }
}

fn summarize(exp: &Experiment, out: &Path) {
    let r = &exp.report;
    println!("kernel {}: exec time {} ns, {} runs executed ({} top-up), {} golden", r.kernel_id, r.timing.exec_time_ns, r.runs.executed, r.runs.top_up, r.runs.golden);
    println!(
        "executions per run: {} (SSE at {}, SSP at {})",
        r.plan.passes_per_run, r.phase_boundaries.sse_index, r.phase_boundaries.ssp_index
    );
    if let Some(e) = r.sse_ssp_error.get(&Component::Total) {
        println!("SSE vs SSP total power error: {e:.2}%");
    }
    println!("artifacts in {}", out.display());
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref(), args.preset.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(phase) = args.phase {
        cfg.phase = phase;
    }
    if let Some(mode) = args.loi.mode() {
        cfg.loi.mode = mode;
    }
    if args.runs.is_some() {
        cfg.runs = args.runs;
    }
    cfg.validate()?;
    if args.print_config {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    let exp = run_experiment(&cfg)?;
    write_artifacts(&exp, &args.out)?;
    summarize(&exp, &args.out);
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let mut opts = match &args.config {
        Some(p) => ExperimentConfig::load(p)?.analysis_options(),
        None => AnalysisOptions {
            phase: PhaseSelection::Both,
            loi: LoiOptions::new(args.window_ns, LoiMode::Strict),
            target_kernel: None,
            margin_rel: None,
            loi_density: None,
            warmup_execs: 3,
            sse_execs: 4,
            stability_rel: fingrav_core::phase::DEFAULT_STABILITY_REL,
            fit_degree: DEFAULT_FIT_DEGREE,
        },
    };
    if args.kernel.is_some() {
        opts.target_kernel = args.kernel.clone();
    }
    if let Some(phase) = args.phase {
        opts.phase = phase;
    }
    if let Some(mode) = args.loi.mode() {
        opts.loi.mode = mode;
    }
    let runs = import_log_files(&args.power_log, &args.run_meta)?;
    let exp = analyze_runs("imported", runs, &opts)?;
    write_artifacts(&exp, &args.out)?;
    summarize(&exp, &args.out);
    Ok(())
}

fn stitch_cmd(args: StitchArgs) -> Result<()> {
    let name = args.lois.display().to_string();
    let (lois, bounds) = read_lois(&name, fs::File::open(&args.lois)?)?;
    let kernel = match args.kernel {
        Some(k) => k,
        None => lois.first().ok_or(Error::EmptyInput("LOIs"))?.kernel_id.clone(),
    };
    let lois: Vec<_> = lois.into_iter().filter(|l| l.kernel_id == kernel).collect();
    let anchor = match args.anchor_ns {
        Some(a) => a,
        None => lois.iter().map(|l| l.toi + 1).max().ok_or(Error::EmptyInput("LOIs"))?,
    };
    let mut profiles = Vec::new();
    let mut fits = Vec::new();
    for &phase in args.phase.phases() {
        for component in Component::ALL {
            let profile = stitch(&lois, &bounds, phase, component, &kernel, anchor)?;
            let (fit, error) = match fit_poly(&profile, args.degree) {
                Ok(f) => (Some(f), None),
                Err(e @ Error::Underdetermined { .. }) => (None, Some(e.to_string())),
                Err(e) => return Err(e),
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
    fs::create_dir_all(&args.out)?;
    write_profiles(fs::File::create(args.out.join("profile.csv"))?, &profiles)?;
    let mut json = serde_json::to_string_pretty(&fits)?;
    json.push('\n');
    fs::write(args.out.join("fits.json"), json)?;
    for p in &profiles {
        if p.component == Component::Total {
            println!("{} {}: {} points", p.kernel_id, p.phase, p.points.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Guidance(a) => lookup_guidance(a.exec_time_ns).and_then(|g| {
            println!("{}", serde_json::to_string_pretty(&g)?);
            Ok(())
        }),
        Command::Stitch(a) => stitch_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
