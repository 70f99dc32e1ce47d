//! Exact per-pid accounting used as ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::event::{MemoryKind, ResourceEvent};
use crate::sketch::{rank_entries, SketchEntry};
use crate::trace::read_trace;
use crate::{Pid, Tid};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleBucket {
    pub mem: BTreeMap<Pid, i64>,
    pub cpu: BTreeMap<Pid, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleState {
    /// Net allocated bytes per owner pid.
    pub mem: BTreeMap<Pid, i64>,
    /// On-CPU nanoseconds per pid, idle excluded.
    pub cpu: BTreeMap<Pid, u64>,
    pub bucket_ns: Option<u64>,
    /// Per-bucket deltas keyed by bucket index (`ts / bucket_ns`).
    pub buckets: BTreeMap<u64, OracleBucket>,
    pub last_ts: u64,
}

/// Replays `events` exactly. With `bucket_ns`, also records per-bucket
/// deltas for time series.
pub fn ground_truth(events: &[ResourceEvent], bucket_ns: Option<u64>) -> OracleState {
    let bucket_ns = bucket_ns.filter(|&w| w > 0);
    let mut state = OracleState {
        bucket_ns,
        ..Default::default()
    };
    let mut live: HashMap<u64, (Pid, i64)> = HashMap::new();
    let mut running: HashMap<Tid, (u64, Pid)> = HashMap::new();
    let mut idle_since: HashMap<u32, u64> = HashMap::new();
    let mut cpu_clock: HashMap<u32, u64> = HashMap::new();

    for event in events {
        let ts = event.ts();
        state.last_ts = state.last_ts.max(ts);
        let bucket = bucket_ns.map(|w| ts / w);
        match event {
            ResourceEvent::Memory(e) => {
                let delta = match e.kind {
                    MemoryKind::Alloc => match e.size {
                        Some(size) if size > 0 => {
                            live.insert(e.ptr, (e.pid, size as i64));
                            Some((e.pid, size as i64))
                        }
                        _ => None,
                    },
                    MemoryKind::Dealloc => live.remove(&e.ptr).map(|(owner, size)| (owner, -size)),
                };
                if let Some((pid, bytes)) = delta {
                    *state.mem.entry(pid).or_default() += bytes;
                    if let Some(b) = bucket {
                        *state
                            .buckets
                            .entry(b)
                            .or_default()
                            .mem
                            .entry(pid)
                            .or_default() += bytes;
                    }
                }
            }
            ResourceEvent::Sched(e) => {
                if cpu_clock.get(&e.cpu).is_some_and(|&last| ts < last) {
                    continue;
                }
                let start = if e.prev_tid == 0 {
                    idle_since.get(&e.cpu).map(|&t| (t, 0))
                } else {
                    running.get(&e.prev_tid).copied()
                };
                if start.is_some_and(|(t, _)| ts < t) {
                    continue;
                }
                cpu_clock.insert(e.cpu, ts);
                if e.prev_tid == 0 {
                    idle_since.remove(&e.cpu);
                } else {
                    running.remove(&e.prev_tid);
                }
                if let Some((t, pid)) = start {
                    let slice = ts - t;
                    if pid != 0 && slice > 0 {
                        *state.cpu.entry(pid).or_default() += slice;
                        if let Some(b) = bucket {
                            *state
                                .buckets
                                .entry(b)
                                .or_default()
                                .cpu
                                .entry(pid)
                                .or_default() += slice;
                        }
                    }
                }
                if e.next_pid == 0 {
                    idle_since.insert(e.cpu, ts);
                } else {
                    running.insert(e.next_tid, (ts, e.next_pid));
                }
            }
        }
    }
    state
}

impl OracleState {
    pub fn from_reader<R: BufRead>(
        reader: R,
        strict: bool,
        bucket_ns: Option<u64>,
    ) -> Result<Self> {
        let parsed = read_trace(reader, strict)?;
        Ok(ground_truth(&parsed.events, bucket_ns))
    }

    /// Exact memory ranking, value descending then pid ascending.
    pub fn mem_ranked(&self, exclude: &BTreeSet<Pid>) -> Vec<SketchEntry> {
        let mut v: Vec<SketchEntry> = self
            .mem
            .iter()
            .filter(|(pid, _)| !exclude.contains(pid))
            .map(|(&pid, &value)| SketchEntry::new(pid, value))
            .collect();
        rank_entries(&mut v);
        v
    }

    pub fn cpu_ranked(&self, exclude: &BTreeSet<Pid>) -> Vec<SketchEntry> {
        let mut v: Vec<SketchEntry> = self
            .cpu
            .iter()
            .filter(|(pid, _)| !exclude.contains(pid))
            .map(|(&pid, &ns)| SketchEntry::new(pid, ns as i64))
            .collect();
        rank_entries(&mut v);
        v
    }

    pub fn mem_of(&self, pid: Pid) -> i64 {
        self.mem.get(&pid).copied().unwrap_or(0)
    }

    pub fn cpu_of(&self, pid: Pid) -> u64 {
        self.cpu.get(&pid).copied().unwrap_or(0)
    }

    fn bucket_count(&self) -> u64 {
        match self.bucket_ns {
            Some(w) => self.last_ts / w + 1,
            None => 0,
        }
    }

    /// Net bytes of `pid` at the end of each bucket, as `(bucket_end_ts, bytes)`.
    pub fn mem_series(&self, pid: Pid) -> Vec<(u64, i64)> {
        let Some(w) = self.bucket_ns else {
            return Vec::new();
        };
        let mut acc = 0i64;
        (0..self.bucket_count())
            .map(|b| {
                if let Some(bucket) = self.buckets.get(&b) {
                    acc += bucket.mem.get(&pid).copied().unwrap_or(0);
                }
                ((b + 1) * w, acc)
            })
            .collect()
    }

    /// On-CPU nanoseconds of `pid` inside each bucket.
    pub fn cpu_series(&self, pid: Pid) -> Vec<(u64, u64)> {
        let Some(w) = self.bucket_ns else {
            return Vec::new();
        };
        (0..self.bucket_count())
            .map(|b| {
                let ns = self
                    .buckets
                    .get(&b)
                    .and_then(|bucket| bucket.cpu.get(&pid).copied())
                    .unwrap_or(0);
                ((b + 1) * w, ns)
            })
            .collect()
    }
}
