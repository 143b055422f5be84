//! Fine-grain GPU power profiling from coarse, averaged power logs.
//!
//! A kernel is run many times; each run contributes a few power samples taken at
//! different offsets into the kernel. Synchronizing GPU and CPU clocks places every
//! sample on the kernel's timeline, and stitching samples from runs that executed
//! consistently yields a profile far finer than the logger's sampling interval.

pub mod binning;
pub mod error;
pub mod phase;
pub mod pipeline;
pub mod sim;
pub mod stitch;
pub mod sync;
pub mod telemetry;

pub use error::{Error, Result, Stage};
pub use telemetry::{
    Component, ComponentPower, ExecutionRecord, GpuTimestamp, LoiSample, Nanos, Phase, PhaseBoundaries,
    PowerLogEntry, RunId, RunRecord,
};
