//! Browser demo for the `pipesketch` crate.
//!
//! Each operation is a plain Rust function returning a serializable struct,
//! plus a `#[wasm_bindgen]` wrapper that hands the page a JSON string.

use std::collections::BTreeSet;

use pipesketch::workload::rank_pids;
use pipesketch::{
    dominant_frequency, generate, ground_truth, precision_at_k, snapshot_replay, HashFamily,
    HashPipeSketch, Metric, Pid, Pipeline, Replay, SketchConfig, SketchEntry, UpdateMode,
    WorkloadKind, WorkloadSpec,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest sketch the walkthrough will draw.
pub const MAX_GRID_CELLS: usize = 4096;
/// Event budget per generated trace in the sweep.
pub const MAX_SWEEP_EVENTS: u64 = 400_000;

#[derive(Debug, Clone, Serialize)]
pub struct Step {
    pub pid: Pid,
    pub amount: i64,
    /// `grid[stage][slot]`
    pub grid: Vec<Vec<Option<SketchEntry>>>,
    pub discarded: Option<SketchEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Walkthrough {
    pub stages: usize,
    pub slots: usize,
    pub steps: Vec<Step>,
}

/// Parses `pid:amount` pairs separated by commas or whitespace.
pub fn parse_inserts(text: &str) -> Result<Vec<(Pid, i64)>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|token| {
            let (pid, amount) = token
                .split_once(':')
                .ok_or_else(|| format!("expected pid:amount, got {token:?}"))?;
            let pid = pid
                .trim()
                .parse::<Pid>()
                .map_err(|e| format!("pid {pid:?}: {e}"))?;
            let amount = amount
                .trim()
                .parse::<i64>()
                .map_err(|e| format!("amount {amount:?}: {e}"))?;
            if amount < 1 {
                return Err(format!("amount for pid {pid} must be positive"));
            }
            Ok((pid, amount))
        })
        .collect()
}

/// Feeds `inserts` one at a time into a fresh sketch and records the grid
/// after every insert.
pub fn walkthrough(
    stages: usize,
    slots: usize,
    identity_hash: bool,
    seed: u64,
    inserts: &[(Pid, i64)],
) -> Result<Walkthrough, String> {
    if stages.saturating_mul(slots) > MAX_GRID_CELLS {
        return Err(format!("at most {MAX_GRID_CELLS} cells can be drawn"));
    }
    let config = SketchConfig {
        stages,
        slots,
        seed,
        hash: if identity_hash {
            HashFamily::Identity
        } else {
            HashFamily::Seeded
        },
    };
    let mut sketch =
        HashPipeSketch::from_config(&config, UpdateMode::Signed).map_err(|e| e.to_string())?;
    let mut steps = Vec::with_capacity(inserts.len());
    for &(pid, amount) in inserts {
        let discarded = sketch
            .insert_positive(pid, amount)
            .map_err(|e| e.to_string())?;
        steps.push(Step {
            pid,
            amount,
            grid: (0..stages).map(|i| sketch.stage(i).to_vec()).collect(),
            discarded,
        });
    }
    Ok(Walkthrough {
        stages,
        slots,
        steps,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub mem_pct: f64,
    pub cpu_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Sweep {
    pub stages: usize,
    pub slots: usize,
    pub pids: u32,
    pub events: u64,
    pub footprint_bytes: u64,
    pub mem_evictions: u64,
    pub cpu_evictions: u64,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_KS: [usize; 5] = [1, 5, 10, 20, 30];

/// Top-k precision of both pipelines on a zipf allocation trace plus a
/// scheduler trace over the same pids.
pub fn precision_sweep(
    stages: usize,
    slots: usize,
    pids: u32,
    events: u64,
    zipf_s: f64,
    seed: u64,
) -> Result<Sweep, String> {
    if events > MAX_SWEEP_EVENTS {
        return Err(format!("at most {MAX_SWEEP_EVENTS} events per trace"));
    }
    let mem_spec = WorkloadSpec {
        zipf_s,
        ..WorkloadSpec::new(WorkloadKind::ZipfAlloc, pids, events, seed)
    };
    let sched_spec = WorkloadSpec {
        kind: WorkloadKind::SchedMix,
        ..mem_spec
    };
    let mut trace = generate(&mem_spec).map_err(|e| e.to_string())?;
    trace.extend(generate(&sched_spec).map_err(|e| e.to_string())?);

    let config = SketchConfig::new(stages, slots, seed);
    let none = BTreeSet::new();
    let replay = Replay::run(&config, &none, &trace).map_err(|e| e.to_string())?;
    let oracle = ground_truth(&trace, None);
    let max_k = SWEEP_KS[SWEEP_KS.len() - 1];
    let score = |report, exact: Vec<SketchEntry>| {
        precision_at_k(&report, &exact, &SWEEP_KS).map_err(|e| e.to_string())
    };
    let mem = score(
        replay.memory.top_k(max_k).map_err(|e| e.to_string())?,
        oracle.mem_ranked(&none),
    )?;
    let cpu = score(
        replay.cpu.top_k(max_k).map_err(|e| e.to_string())?,
        oracle.cpu_ranked(&none),
    )?;
    Ok(Sweep {
        stages,
        slots,
        pids,
        events: replay.events,
        footprint_bytes: replay.memory.sketch().footprint_bytes(),
        mem_evictions: replay.memory.sketch().stats().evictions,
        cpu_evictions: replay.cpu.sketch().stats().evictions,
        rows: mem
            .iter()
            .zip(&cpu)
            .map(|(m, c)| SweepRow {
                k: m.k,
                mem_pct: m.overlap_pct,
                cpu_pct: c.overlap_pct,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SampledSeries {
    pub interval_ns: u64,
    pub values: Vec<f64>,
    /// `None` for a flat or too-short series.
    pub dominant_period_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Responsiveness {
    pub pid: Pid,
    pub period_ns: u64,
    pub fine: SampledSeries,
    pub coarse: SampledSeries,
}

/// Samples the training pid's sketched memory on a cyclic trace at two
/// cadences.
pub fn responsiveness(fine_ns: u64, coarse_ns: u64, seed: u64) -> Result<Responsiveness, String> {
    if fine_ns == 0 || coarse_ns == 0 {
        return Err("intervals must be positive".into());
    }
    let spec = WorkloadSpec {
        zipf_s: 1.0,
        ..WorkloadSpec::new(WorkloadKind::CyclicTrain, 50, 200_000, seed)
    };
    let trace = generate(&spec).map_err(|e| e.to_string())?;
    let pid = rank_pids(&spec)[0];
    let config = SketchConfig::new(5, 2000, seed);
    let metric = Metric::PidUsage {
        pipeline: Pipeline::Memory,
        pid,
    };
    let sample = |interval_ns| -> Result<SampledSeries, String> {
        let values = snapshot_replay(&trace, &config, &BTreeSet::new(), interval_ns, metric)
            .map_err(|e| e.to_string())?
            .usage_values();
        let dominant_period_s = dominant_frequency(&values, interval_ns).map(|f| 1.0 / f);
        Ok(SampledSeries {
            interval_ns,
            values,
            dominant_period_s,
        })
    };
    Ok(Responsiveness {
        pid,
        period_ns: spec.period_ns,
        fine: sample(fine_ns)?,
        coarse: sample(coarse_ns)?,
    })
}

fn to_json<T: Serialize>(value: Result<T, String>) -> Result<String, String> {
    value.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
}

#[wasm_bindgen(js_name = walkthrough)]
pub fn walkthrough_json(
    stages: usize,
    slots: usize,
    identity_hash: bool,
    seed: u32,
    inserts: &str,
) -> Result<String, String> {
    to_json(
        parse_inserts(inserts)
            .and_then(|i| walkthrough(stages, slots, identity_hash, seed.into(), &i)),
    )
}

#[wasm_bindgen(js_name = precisionSweep)]
pub fn precision_sweep_json(
    stages: usize,
    slots: usize,
    pids: u32,
    events: u32,
    zipf_s: f64,
    seed: u32,
) -> Result<String, String> {
    to_json(precision_sweep(
        stages,
        slots,
        pids,
        events.into(),
        zipf_s,
        seed.into(),
    ))
}

/// Intervals are in milliseconds here; JS numbers do not hold u64.
#[wasm_bindgen(js_name = responsiveness)]
pub fn responsiveness_json(fine_ms: f64, coarse_ms: f64, seed: u32) -> Result<String, String> {
    let ns = |ms: f64| (ms * 1e6).round().max(0.0) as u64;
    to_json(responsiveness(ns(fine_ms), ns(coarse_ms), seed.into()))
}
