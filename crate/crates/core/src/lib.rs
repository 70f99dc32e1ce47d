//! Approximate per-process resource accounting with a multi-stage HashPipe
//! sketch.
//!
//! Memory allocations and scheduler switches are replayed from a trace into
//! two pipelines: a signed sketch for net allocated bytes and a monotonic
//! sketch for on-CPU nanoseconds. Selected pids bypass the sketches and are
//! counted exactly. An exact oracle and an evaluation harness measure top-k
//! precision and sampling responsiveness against the same traces.

pub mod cpu;
pub mod error;
pub mod eval;
pub mod event;
pub mod memory;
pub mod oracle;
pub mod replay;
pub mod sketch;
pub mod trace;
pub mod workload;

pub type Pid = u32;
pub type Tid = u32;

pub use cpu::{CpuStats, CpuTracker};
pub use error::{Error, Result};
pub use eval::{
    dominant_frequency, periodogram, precision_at_k, resolution_ratio, snapshot_replay, Metric,
    Pipeline, PrecisionResult, SnapshotSeries, SnapshotValue,
};
pub use event::{MemoryEvent, MemoryKind, ResourceEvent, SchedEvent};
pub use memory::{MemoryStats, MemoryTracker};
pub use oracle::{ground_truth, OracleState};
pub use replay::Replay;
pub use sketch::{
    stage_hash, HashFamily, HashPipeSketch, SketchConfig, SketchEntry, SketchStats,
    StageHashParams, TopKReport, UpdateMode,
};
pub use workload::{generate, WorkloadKind, WorkloadSpec};
