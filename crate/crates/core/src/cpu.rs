//! On-CPU time accounting from scheduler switches.
//!
//! Each switch closes the outgoing thread's slice (if we saw it start) and
//! opens one for the incoming thread. Slice lengths go to the owning pid:
//! exact counters for priority pids, a monotonic sketch for everyone else.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::SchedEvent;
use crate::sketch::{HashPipeSketch, SketchConfig, TopKReport, UpdateMode};
use crate::{Pid, Tid};

pub const IDLE_PID: Pid = 0;
pub const IDLE_TID: Tid = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ScheduledIn {
    ts: u64,
    pid: Pid,
    cpu: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpuStats {
    pub switches: u64,
    /// Switch-outs of threads with no scheduled-in record.
    pub missed_switch_outs: u64,
    /// Switch-ins of threads that already had a record.
    pub reschedule_anomalies: u64,
    /// Events rejected for going back in time.
    pub clock_anomalies: u64,
    pub zero_slices: u64,
    /// Sum of every closed slice, idle included.
    pub measured_ns: u64,
    pub idle_ns: u64,
    pub priority_ns: u64,
    pub sketch_ns: u64,
}

#[derive(Debug, Clone)]
pub struct CpuTracker {
    sketch: HashPipeSketch,
    running: HashMap<Tid, ScheduledIn>,
    // idle tasks share tid 0 across cpus, so they are keyed by cpu
    idle_since: HashMap<u32, u64>,
    last_ts: HashMap<u32, u64>,
    priority: BTreeMap<Pid, u64>,
    stats: CpuStats,
    clock: u64,
}

impl CpuTracker {
    pub fn new(
        config: &SketchConfig,
        priority_pids: impl IntoIterator<Item = Pid>,
    ) -> Result<Self> {
        Ok(Self {
            sketch: HashPipeSketch::from_config(config, UpdateMode::Monotonic)?,
            running: HashMap::new(),
            idle_since: HashMap::new(),
            last_ts: HashMap::new(),
            priority: priority_pids.into_iter().map(|pid| (pid, 0)).collect(),
            stats: CpuStats::default(),
            clock: 0,
        })
    }

    pub fn on_sched(&mut self, e: &SchedEvent) {
        if let Some(&last) = self.last_ts.get(&e.cpu) {
            if e.ts < last {
                self.stats.clock_anomalies += 1;
                return;
            }
        }
        let prev_start = if e.prev_tid == IDLE_TID {
            self.idle_since.get(&e.cpu).copied()
        } else {
            self.running.get(&e.prev_tid).map(|r| r.ts)
        };
        if matches!(prev_start, Some(start) if e.ts < start) {
            // slice began after this switch; the stream is inconsistent
            self.stats.clock_anomalies += 1;
            return;
        }
        self.last_ts.insert(e.cpu, e.ts);
        self.clock = self.clock.max(e.ts);
        self.stats.switches += 1;

        if e.prev_tid == IDLE_TID {
            if let Some(start) = self.idle_since.remove(&e.cpu) {
                self.attribute(IDLE_PID, e.ts - start);
            }
        } else {
            match self.running.remove(&e.prev_tid) {
                Some(record) => self.attribute(record.pid, e.ts - record.ts),
                None => self.stats.missed_switch_outs += 1,
            }
        }

        if e.next_pid == IDLE_PID {
            self.idle_since.insert(e.cpu, e.ts);
            return;
        }
        let previous = self.running.insert(
            e.next_tid,
            ScheduledIn {
                ts: e.ts,
                pid: e.next_pid,
                cpu: e.cpu,
            },
        );
        if previous.is_some() {
            self.stats.reschedule_anomalies += 1;
        }
    }

    fn attribute(&mut self, pid: Pid, delta: u64) {
        if delta == 0 {
            self.stats.zero_slices += 1;
            return;
        }
        self.stats.measured_ns += delta;
        if pid == IDLE_PID {
            self.stats.idle_ns += delta;
        } else if let Some(counter) = self.priority.get_mut(&pid) {
            *counter += delta;
            self.stats.priority_ns += delta;
        } else {
            self.stats.sketch_ns += delta;
            self.sketch
                .insert_positive(pid, delta.min(i64::MAX as u64) as i64)
                .expect("delta is positive");
        }
    }

    pub fn top_k(&self, k: usize) -> Result<TopKReport> {
        let mut report = self.sketch.top_k(k)?;
        report.timestamp = self.clock;
        Ok(report)
    }

    pub fn priority_oncpu(&self, pid: Pid) -> Result<u64> {
        self.priority
            .get(&pid)
            .copied()
            .ok_or(Error::NotTracked(pid))
    }

    pub fn priority_counters(&self) -> &BTreeMap<Pid, u64> {
        &self.priority
    }

    pub fn is_priority(&self, pid: Pid) -> bool {
        self.priority.contains_key(&pid)
    }

    /// Exact counter for priority pids, sketch estimate otherwise.
    pub fn usage(&self, pid: Pid) -> i64 {
        match self.priority.get(&pid) {
            Some(&ns) => ns as i64,
            None => self.sketch.query(pid),
        }
    }

    /// cpu the thread was scheduled in on, if it is currently running.
    pub fn running_on(&self, tid: Tid) -> Option<u32> {
        self.running.get(&tid).map(|r| r.cpu)
    }

    pub fn sketch(&self) -> &HashPipeSketch {
        &self.sketch
    }

    pub fn stats(&self) -> &CpuStats {
        &self.stats
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }
}
