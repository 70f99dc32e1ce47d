//! Top-k precision against the oracle and fixed-cadence snapshot replay.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::ResourceEvent;
use crate::replay::Replay;
use crate::sketch::{SketchConfig, SketchEntry, TopKReport};
use crate::Pid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Memory,
    Cpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionResult {
    pub k: usize,
    /// `min(k, distinct oracle pids)`, the denominator actually used.
    pub effective_k: usize,
    pub overlap_pct: f64,
    pub timestamp: u64,
    /// Set when the oracle had fewer than `k` pids.
    pub truncated: bool,
}

/// Unordered overlap between the leading entries of `report` and of the
/// exact ranking, for each `k` in `ks`. `report` must hold at least
/// `max(ks)` entries' worth of ranking (`report.k >= max(ks)`).
pub fn precision_at_k(
    report: &TopKReport,
    exact_ranked: &[SketchEntry],
    ks: &[usize],
) -> Result<Vec<PrecisionResult>> {
    if ks.is_empty() {
        return Err(Error::Argument("at least one k is required".into()));
    }
    if ks.contains(&0) {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let max_k = ks.iter().copied().max().unwrap_or(0);
    if report.k < max_k {
        return Err(Error::Argument(format!(
            "report ranks {} entries but k = {max_k} was requested",
            report.k
        )));
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let effective_k = k.min(exact_ranked.len());
            let exact: HashSet<Pid> = exact_ranked[..effective_k].iter().map(|e| e.pid).collect();
            let hits = report
                .entries
                .iter()
                .take(k)
                .filter(|e| exact.contains(&e.pid))
                .count();
            let overlap_pct = if effective_k == 0 {
                100.0
            } else {
                hits as f64 / effective_k as f64 * 100.0
            };
            PrecisionResult {
                k,
                effective_k,
                overlap_pct,
                timestamp: report.timestamp,
                truncated: effective_k < k,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Metric {
    TopK { pipeline: Pipeline, k: usize },
    PidUsage { pipeline: Pipeline, pid: Pid },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SnapshotValue {
    TopK(TopKReport),
    Usage(i64),
}

impl SnapshotValue {
    pub fn as_usage(&self) -> Option<i64> {
        match self {
            SnapshotValue::Usage(v) => Some(*v),
            SnapshotValue::TopK(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotSeries {
    pub interval_ns: u64,
    pub points: Vec<(u64, SnapshotValue)>,
}

impl SnapshotSeries {
    /// Scalar values, for `PidUsage` series.
    pub fn usage_values(&self) -> Vec<f64> {
        self.points
            .iter()
            .filter_map(|(_, v)| v.as_usage())
            .map(|v| v as f64)
            .collect()
    }
}

/// Replays `events` and samples `metric` at `0, interval, 2*interval, ...`
/// up to the last event's timestamp. A sample at time `t` reflects every
/// event with `ts <= t`. Only the replay clock is used.
pub fn snapshot_replay(
    events: &[ResourceEvent],
    config: &SketchConfig,
    priority: &BTreeSet<Pid>,
    interval_ns: u64,
    metric: Metric,
) -> Result<SnapshotSeries> {
    if interval_ns == 0 {
        return Err(Error::Argument(
            "snapshot interval must be at least 1 ns".into(),
        ));
    }
    if let Metric::TopK { k: 0, .. } = metric {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let mut replay = Replay::new(config, priority)?;
    let mut series = SnapshotSeries {
        interval_ns,
        points: Vec::new(),
    };
    let events: Cow<[ResourceEvent]> = if events.windows(2).all(|w| w[0].ts() <= w[1].ts()) {
        Cow::Borrowed(events)
    } else {
        let mut sorted = events.to_vec();
        sorted.sort_by_key(ResourceEvent::ts);
        Cow::Owned(sorted)
    };
    let Some(last) = events.last().map(ResourceEvent::ts) else {
        return Ok(series);
    };

    let mut next = 0;
    for j in 0..=last / interval_ns {
        let t = j * interval_ns;
        while next < events.len() && events[next].ts() <= t {
            replay.apply(&events[next]);
            next += 1;
        }
        let value = match metric {
            Metric::TopK { pipeline, k } => {
                let mut report = match pipeline {
                    Pipeline::Memory => replay.memory.top_k(k)?,
                    Pipeline::Cpu => replay.cpu.top_k(k)?,
                };
                report.timestamp = t;
                SnapshotValue::TopK(report)
            }
            Metric::PidUsage { pipeline, pid } => SnapshotValue::Usage(match pipeline {
                Pipeline::Memory => replay.memory.usage(pid),
                Pipeline::Cpu => replay.cpu.usage(pid),
            }),
        };
        series.points.push((t, value));
    }
    Ok(series)
}

/// How many times finer the fine cadence is.
pub fn resolution_ratio(fine_interval_ns: u64, coarse_interval_ns: u64) -> Result<f64> {
    if fine_interval_ns == 0 || coarse_interval_ns == 0 {
        return Err(Error::Argument("intervals must be positive".into()));
    }
    Ok(coarse_interval_ns as f64 / fine_interval_ns as f64)
}

/// Squared DFT magnitude of the mean-removed series for bins `1..=N/2`,
/// as `(frequency_hz, power)`.
pub fn periodogram(series: &[f64], sample_interval_ns: u64) -> Vec<(f64, f64)> {
    let n = series.len();
    if n < 2 || sample_interval_ns == 0 {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let span_s = n as f64 * sample_interval_ns as f64 * 1e-9;
    (1..=n / 2)
        .map(|bin| {
            let w = 2.0 * std::f64::consts::PI * bin as f64 / n as f64;
            let (re, im) = series
                .iter()
                .enumerate()
                .fold((0.0, 0.0), |(re, im), (t, &x)| {
                    let phase = w * t as f64;
                    (re + (x - mean) * phase.cos(), im - (x - mean) * phase.sin())
                });
            (bin as f64 / span_s, re * re + im * im)
        })
        .collect()
}

/// Frequency of the strongest non-DC bin, if the series has any variation.
pub fn dominant_frequency(series: &[f64], sample_interval_ns: u64) -> Option<f64> {
    periodogram(series, sample_interval_ns)
        .into_iter()
        .filter(|&(_, p)| p > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(f, _)| f)
}
