//! JSON and CSV result schemas.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use pipesketch::oracle::ground_truth;
use pipesketch::{
    precision_at_k, CpuStats, HashPipeSketch, MemoryStats, Pid, ResourceEvent, SketchConfig,
    SketchEntry, SketchStats, SnapshotSeries, SnapshotValue,
};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct ReplayReport {
    pub config: SketchConfig,
    pub priority_pids: Vec<Pid>,
    pub k: usize,
    pub events: u64,
    pub skipped_lines: u64,
    pub memory: MemoryReport,
    pub cpu: CpuReport,
}

#[derive(Debug, Serialize)]
pub struct MemoryReport {
    pub top_k: Vec<SketchEntry>,
    pub timestamp: u64,
    pub priority: BTreeMap<Pid, i64>,
    pub live_allocations: usize,
    pub footprint_bytes: u64,
    pub stats: MemoryStats,
    pub sketch: SketchStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<Vec<Vec<Option<SketchEntry>>>>,
}

#[derive(Debug, Serialize)]
pub struct CpuReport {
    pub top_k: Vec<SketchEntry>,
    pub timestamp: u64,
    pub priority: BTreeMap<Pid, u64>,
    pub footprint_bytes: u64,
    pub stats: CpuStats,
    pub sketch: SketchStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<Vec<Vec<Option<SketchEntry>>>>,
}

fn slot_dump(sketch: &HashPipeSketch) -> Vec<Vec<Option<SketchEntry>>> {
    (0..sketch.stage_count())
        .map(|i| sketch.stage(i).to_vec())
        .collect()
}

pub fn replay_report(
    events: &[ResourceEvent],
    skipped_lines: u64,
    config: &SketchConfig,
    priority: &BTreeSet<Pid>,
    k: usize,
    dump_slots: bool,
) -> pipesketch::Result<ReplayReport> {
    let replay = pipesketch::Replay::run(config, priority, events)?;
    let mem = &replay.memory;
    let cpu = &replay.cpu;
    let mem_top = mem.top_k(k)?;
    let cpu_top = cpu.top_k(k)?;
    Ok(ReplayReport {
        config: *config,
        priority_pids: priority.iter().copied().collect(),
        k,
        events: replay.events,
        skipped_lines,
        memory: MemoryReport {
            top_k: mem_top.entries,
            timestamp: mem_top.timestamp,
            priority: mem.priority_counters().clone(),
            live_allocations: mem.live_allocations(),
            footprint_bytes: mem.sketch().footprint_bytes(),
            stats: *mem.stats(),
            sketch: *mem.sketch().stats(),
            slots: dump_slots.then(|| slot_dump(mem.sketch())),
        },
        cpu: CpuReport {
            top_k: cpu_top.entries,
            timestamp: cpu_top.timestamp,
            priority: cpu.priority_counters().clone(),
            footprint_bytes: cpu.sketch().footprint_bytes(),
            stats: *cpu.stats(),
            sketch: *cpu.sketch().stats(),
            slots: dump_slots.then(|| slot_dump(cpu.sketch())),
        },
    })
}

#[derive(Debug, Serialize)]
pub struct PrecisionRow {
    pub k: usize,
    /// `None` when the trace has no activity for that pipeline.
    pub cpu_accuracy_pct: Option<f64>,
    pub mem_accuracy_pct: Option<f64>,
    pub cpu_truncated: bool,
    pub mem_truncated: bool,
}

#[derive(Debug, Serialize)]
pub struct PrecisionTable {
    pub config: SketchConfig,
    pub events: u64,
    pub rows: Vec<PrecisionRow>,
}

pub fn precision_table(
    events: &[ResourceEvent],
    config: &SketchConfig,
    priority: &BTreeSet<Pid>,
    ks: &[usize],
) -> pipesketch::Result<PrecisionTable> {
    let replay = pipesketch::Replay::run(config, priority, events)?;
    let oracle = ground_truth(events, None);
    let max_k = ks.iter().copied().max().unwrap_or(1);
    let mem_exact = oracle.mem_ranked(priority);
    let cpu_exact = oracle.cpu_ranked(priority);
    let mem = precision_at_k(&replay.memory.top_k(max_k)?, &mem_exact, ks)?;
    let cpu = precision_at_k(&replay.cpu.top_k(max_k)?, &cpu_exact, ks)?;
    let rows = ks
        .iter()
        .zip(mem.iter().zip(&cpu))
        .map(|(&k, (m, c))| PrecisionRow {
            k,
            cpu_accuracy_pct: (!cpu_exact.is_empty()).then_some(c.overlap_pct),
            mem_accuracy_pct: (!mem_exact.is_empty()).then_some(m.overlap_pct),
            cpu_truncated: c.truncated,
            mem_truncated: m.truncated,
        })
        .collect();
    Ok(PrecisionTable {
        config: *config,
        events: replay.events,
        rows,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map(|p| format!("{p:.1}")).unwrap_or_default()
}

pub fn write_precision_csv<W: Write>(table: &PrecisionTable, out: &mut W) -> io::Result<()> {
    writeln!(out, "k,cpu_accuracy_pct,mem_accuracy_pct")?;
    for row in &table.rows {
        writeln!(
            out,
            "{},{},{}",
            row.k,
            pct(row.cpu_accuracy_pct),
            pct(row.mem_accuracy_pct)
        )?;
    }
    Ok(())
}

/// `timestamp_ns,value`; a top-k value is written as `pid:value` pairs
/// joined by `;`.
pub fn write_series_csv<W: Write>(series: &SnapshotSeries, out: &mut W) -> io::Result<()> {
    writeln!(out, "timestamp_ns,value")?;
    for (ts, value) in &series.points {
        match value {
            SnapshotValue::Usage(v) => writeln!(out, "{ts},{v}")?,
            SnapshotValue::TopK(report) => {
                let cells: Vec<String> = report
                    .entries
                    .iter()
                    .map(|e| format!("{}:{}", e.pid, e.value))
                    .collect();
                writeln!(out, "{ts},{}", cells.join(";"))?;
            }
        }
    }
    Ok(())
}
