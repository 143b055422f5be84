//! Experiment configuration: TOML files, built-in presets, and overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::DEFAULT_STABILITY_REL;
use crate::sim::{
    ClockSpec, KernelCurves, KernelSpec, LoggerSpec, PowerCurve, RunConfig, WarmupMode, WarmupModel,
};
use crate::stitch::DEFAULT_FIT_DEGREE;
use crate::sync::{LoiMode, LoiOptions};
use crate::telemetry::{ComponentPower, Nanos, Phase, NS_PER_MS, NS_PER_US};

pub const PRESETS: [&str; 8] = [
    "constant",
    "ramp",
    "hump",
    "throttle",
    "cb-short",
    "cb-long",
    "straddle",
    "interleaved",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadMode {
    /// One kernel executed back to back.
    #[default]
    Isolated,
    /// A sequence of different kernels repeated in passes.
    Interleaved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseSelection {
    Sse,
    Ssp,
    #[default]
    Both,
}

impl PhaseSelection {
    pub fn phases(&self) -> &'static [Phase] {
        match self {
            PhaseSelection::Sse => &[Phase::Sse],
            PhaseSelection::Ssp => &[Phase::Ssp],
            PhaseSelection::Both => &[Phase::Sse, Phase::Ssp],
        }
    }
}

impl std::str::FromStr for PhaseSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sse" => Ok(PhaseSelection::Sse),
            "ssp" => Ok(PhaseSelection::Ssp),
            "both" => Ok(PhaseSelection::Both),
            other => Err(Error::InvalidConfig(format!("unknown phase selection '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoiSettings {
    pub mode: LoiMode,
    pub gap_tolerance: Nanos,
}

impl Default for LoiSettings {
    fn default() -> Self {
        LoiSettings {
            mode: LoiMode::Strict,
            gap_tolerance: 0,
        }
    }
}

/// Everything needed to reproduce one experiment. Times are nanoseconds, power is watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Built-in preset the rest of the file overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: WorkloadMode,
    #[serde(default)]
    pub phase: PhaseSelection,
    pub kernels: Vec<KernelSpec>,
    /// Repetitions of each kernel per pass (interleaved mode); defaults to 1 each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repetitions: Vec<u32>,
    /// Kernel whose profile is reconstructed; defaults to the last kernel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_kernel: Option<String>,
    #[serde(default)]
    pub logger: LoggerSpec,
    #[serde(default)]
    pub clock: ClockSpec,
    #[serde(default)]
    pub loi: LoiSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loi_density: Option<Nanos>,
    #[serde(default = "default_warmup_execs")]
    pub warmup_execs: u32,
    #[serde(default = "default_sse_execs")]
    pub sse_execs: u32,
    #[serde(default = "default_stability")]
    pub stability_rel: f64,
    #[serde(default = "default_fit_degree")]
    pub fit_degree: usize,
    /// Run extra simulated runs once when LOIs are short of the guidance density.
    #[serde(default = "default_true")]
    pub top_up: bool,
    #[serde(default)]
    pub inter_exec_gap: Nanos,
    #[serde(default = "default_pre_delay")]
    pub pre_delay_range: (Nanos, Nanos),
}

fn default_name() -> String {
    "experiment".into()
}
fn default_warmup_execs() -> u32 {
    3
}
fn default_sse_execs() -> u32 {
    4
}
fn default_stability() -> f64 {
    DEFAULT_STABILITY_REL
}
fn default_fit_degree() -> usize {
    DEFAULT_FIT_DEGREE
}
fn default_true() -> bool {
    true
}
fn default_pre_delay() -> (Nanos, Nanos) {
    (50 * NS_PER_US, 50 * NS_PER_US + NS_PER_MS)
}

impl ExperimentConfig {
    /// Parses a TOML document. A `preset` key seeds every field the document leaves out.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: toml::Table = text.parse()?;
        let merged = match doc.get("preset") {
            Some(toml::Value::String(name)) => {
                let base = toml::Value::try_from(preset(name)?)
                    .map_err(|e| Error::InvalidConfig(format!("preset serialization: {e}")))?;
                let mut base = match base {
                    toml::Value::Table(t) => t,
                    _ => unreachable!("config serializes to a table"),
                };
                merge(&mut base, doc);
                base
            }
            Some(_) => return Err(Error::InvalidConfig("preset must be a string".into())),
            None => doc,
        };
        let cfg: ExperimentConfig = toml::Value::Table(merged).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("config serialization: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(Error::InvalidConfig("no kernels configured".into()));
        }
        match self.mode {
            WorkloadMode::Isolated if self.kernels.len() != 1 => {
                return Err(Error::InvalidConfig(
                    "isolated mode takes exactly one kernel".into(),
                ))
            }
            WorkloadMode::Interleaved if self.kernels.len() < 2 => {
                return Err(Error::InvalidConfig(
                    "interleaved mode needs at least two kernels".into(),
                ))
            }
            _ => {}
        }
        if !self.repetitions.is_empty() && self.repetitions.len() != self.kernels.len() {
            return Err(Error::InvalidConfig(
                "repetitions must list one count per kernel".into(),
            ));
        }
        if let Some(target) = &self.target_kernel {
            if !self.kernels.iter().any(|k| &k.kernel_id == target) {
                return Err(Error::InvalidConfig(format!("target_kernel '{target}' not configured")));
            }
        }
        if self.runs == Some(0) {
            return Err(Error::InvalidConfig("runs must be >= 1".into()));
        }
        if self.margin_rel.is_some_and(|m| !(m > 0.0)) || self.loi_density.is_some_and(|d| d <= 0) {
            return Err(Error::InvalidConfig("margin_rel and loi_density must be > 0".into()));
        }
        if self.sse_execs < self.warmup_execs + 1 {
            return Err(Error::InvalidConfig("sse_execs must be >= warmup_execs + 1".into()));
        }
        self.logger.validate()?;
        self.clock.validate()?;
        self.run_config(1).validate()
    }

    pub fn target_kernel_id(&self) -> &str {
        self.target_kernel
            .as_deref()
            .unwrap_or_else(|| &self.kernels.last().expect("validated non-empty").kernel_id)
    }

    pub fn loi_options(&self) -> LoiOptions {
        LoiOptions {
            averaging_window: self.logger.averaging_window,
            mode: self.loi.mode,
            gap_tolerance: self.loi.gap_tolerance,
        }
    }

    /// Run description with `passes` passes over the kernel sequence.
    pub fn run_config(&self, passes: u32) -> RunConfig {
        RunConfig {
            executions: passes,
            pre_delay_range: self.pre_delay_range,
            inter_exec_gap: self.inter_exec_gap,
            kernel_sequence: self
                .kernels
                .iter()
                .enumerate()
                .map(|(i, k)| (k.clone(), self.repetitions.get(i).copied().unwrap_or(1)))
                .collect(),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn constant_kernel(id: &str, exec_time: Nanos, power: ComponentPower) -> KernelSpec {
    KernelSpec {
        kernel_id: id.into(),
        nominal_exec_time: exec_time,
        exec_time_jitter_rel: 0.005,
        outlier_prob: 0.0,
        outlier_scale: 1.5,
        curve: KernelCurves::constant(power),
        warmup: WarmupModel::default(),
    }
}

fn ramp_kernel() -> KernelSpec {
    KernelSpec {
        kernel_id: "ramp".into(),
        nominal_exec_time: 1_500 * NS_PER_US,
        exec_time_jitter_rel: 0.005,
        outlier_prob: 0.0,
        outlier_scale: 1.5,
        curve: KernelCurves {
            xcd: PowerCurve::LinearRamp { start: 200.0, end: 500.0 },
            iod: PowerCurve::LinearRamp { start: 80.0, end: 100.0 },
            hbm: PowerCurve::LinearRamp { start: 40.0, end: 80.0 },
            other: PowerCurve::Constant { watts: 20.0 },
        },
        warmup: WarmupModel {
            mode: WarmupMode::Settle,
            warmup_execs: 3,
            slowdown: vec![1.2, 1.05, 1.01],
            power_scale: vec![0.85, 0.95, 1.0],
        },
    }
}

/// Built-in experiment by name (see [`PRESETS`]).
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = |kernels: Vec<KernelSpec>| ExperimentConfig {
        name: name.to_string(),
        preset: None,
        seed: 0,
        mode: WorkloadMode::Isolated,
        phase: PhaseSelection::Both,
        kernels,
        repetitions: Vec::new(),
        target_kernel: None,
        logger: LoggerSpec::default(),
        clock: ClockSpec::default(),
        loi: LoiSettings::default(),
        runs: None,
        margin_rel: None,
        loi_density: None,
        warmup_execs: default_warmup_execs(),
        sse_execs: default_sse_execs(),
        stability_rel: DEFAULT_STABILITY_REL,
        fit_degree: DEFAULT_FIT_DEGREE,
        top_up: true,
        inter_exec_gap: 0,
        pre_delay_range: default_pre_delay(),
    };
    let cfg = match name {
        "constant" => {
            let mut k = constant_kernel("constant", 300 * NS_PER_US, ComponentPower::from_parts(420.0, 90.0, 60.0, 30.0));
            k.exec_time_jitter_rel = 0.01;
            k.outlier_prob = 0.02;
            k.outlier_scale = 1.3;
            base(vec![k])
        }
        "ramp" => base(vec![ramp_kernel()]),
        "hump" => base(vec![KernelSpec {
            kernel_id: "hump".into(),
            nominal_exec_time: 800 * NS_PER_US,
            exec_time_jitter_rel: 0.005,
            outlier_prob: 0.0,
            outlier_scale: 1.5,
            curve: KernelCurves {
                xcd: PowerCurve::PiecewiseLinear {
                    knots: vec![(0.0, 260.0), (0.25, 400.0), (0.5, 480.0), (0.75, 400.0), (1.0, 260.0)],
                },
                iod: PowerCurve::Constant { watts: 90.0 },
                hbm: PowerCurve::PiecewiseLinear {
                    knots: vec![(0.0, 50.0), (0.5, 75.0), (1.0, 50.0)],
                },
                other: PowerCurve::Constant { watts: 25.0 },
            },
            warmup: WarmupModel {
                mode: WarmupMode::Settle,
                warmup_execs: 3,
                slowdown: vec![1.2, 1.05, 1.01],
                power_scale: vec![0.85, 0.95, 1.0],
            },
        }]),
        "throttle" => base(vec![KernelSpec {
            kernel_id: "throttle".into(),
            nominal_exec_time: 1_200 * NS_PER_US,
            exec_time_jitter_rel: 0.005,
            outlier_prob: 0.0,
            outlier_scale: 1.5,
            curve: KernelCurves {
                xcd: PowerCurve::PiecewiseLinear {
                    knots: vec![(0.0, 250.0), (0.3, 520.0), (1.0, 460.0)],
                },
                iod: PowerCurve::Constant { watts: 90.0 },
                hbm: PowerCurve::LinearRamp { start: 50.0, end: 70.0 },
                other: PowerCurve::Constant { watts: 25.0 },
            },
            warmup: WarmupModel {
                mode: WarmupMode::Throttle,
                warmup_execs: 3,
                slowdown: vec![1.15, 1.08, 1.04],
                power_scale: vec![1.35, 1.2, 1.1],
            },
        }]),
        "cb-short" => {
            let mut cfg = base(vec![constant_kernel(
                "cb-short",
                50 * NS_PER_US,
                ComponentPower::from_parts(450.0, 80.0, 50.0, 20.0),
            )]);
            cfg.logger.idle_power = ComponentPower::ZERO;
            cfg
        }
        "cb-long" => base(vec![constant_kernel(
            "cb-long",
            1_200 * NS_PER_US,
            ComponentPower::from_parts(450.0, 80.0, 50.0, 20.0),
        )]),
        "straddle" => {
            let mut cfg = base(vec![ramp_kernel()]);
            cfg.inter_exec_gap = 400 * NS_PER_US;
            cfg
        }
        "interleaved" => {
            let mut heavy = constant_kernel("heavy", 300 * NS_PER_US, ComponentPower::from_parts(560.0, 100.0, 60.0, 30.0));
            let mut light = constant_kernel("light", 100 * NS_PER_US, ComponentPower::from_parts(150.0, 90.0, 80.0, 30.0));
            for k in [&mut heavy, &mut light] {
                k.exec_time_jitter_rel = 0.002;
                k.warmup = WarmupModel::none();
            }
            let mut cfg = base(vec![heavy, light]);
            cfg.mode = WorkloadMode::Interleaved;
            cfg.loi.mode = LoiMode::Lenient;
            cfg
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset '{other}' (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn preset_overrides() {
        let cfg = ExperimentConfig::from_toml_str(
            "preset = \"ramp\"\nseed = 9\nruns = 50\n[logger]\nsample_interval = 500000\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.runs, Some(50));
        assert_eq!(cfg.logger.sample_interval, 500_000);
        assert_eq!(cfg.logger.averaging_window, NS_PER_MS);
        assert_eq!(cfg.kernels[0].kernel_id, "ramp");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str("preset = \"ramp\"\nrunz = 5\n").is_err());
        assert!(ExperimentConfig::from_toml_str("preset = \"ramp\"\n[clock]\noffset = 5\n").is_err());
        assert!(ExperimentConfig::from_toml_str("preset = \"nope\"\n").is_err());
    }

    #[test]
    fn inline_kernel() {
        let text = r#"
seed = 3
[[kernels]]
kernel_id = "k"
nominal_exec_time = 400000
[kernels.curve]
xcd = { shape = "constant", watts = 300.0 }
iod = { shape = "linear-ramp", start = 50.0, end = 60.0 }
hbm = { shape = "piecewise-linear", knots = [[0.0, 20.0], [1.0, 40.0]] }
other = { shape = "constant", watts = 10.0 }
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.kernels[0].warmup, WarmupModel::default());
        assert_eq!(cfg.target_kernel_id(), "k");
        assert_eq!(cfg.loi.mode, LoiMode::Strict);
    }

    #[test]
    fn mode_kernel_count_checked() {
        let mut cfg = preset("interleaved").unwrap();
        cfg.mode = WorkloadMode::Isolated;
        assert!(cfg.validate().is_err());
        let mut cfg = preset("ramp").unwrap();
        cfg.mode = WorkloadMode::Interleaved;
        assert!(cfg.validate().is_err());
    }
}
