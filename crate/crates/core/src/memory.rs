//! Net-allocated-bytes accounting.
//!
//! Allocations record `ptr -> (size, owner)` and feed `(pid, size)` into a
//! signed sketch. Deallocations look the pointer up, forget it, and decrement
//! the owner's slot if the sketch still holds it. Priority pids skip the
//! sketch entirely and keep exact counters.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{MemoryEvent, MemoryKind};
use crate::sketch::{HashPipeSketch, SketchConfig, TopKReport, UpdateMode};
use crate::Pid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LiveAllocation {
    size: i64,
    owner: Pid,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryStats {
    pub allocs: u64,
    pub deallocs: u64,
    /// Deallocations whose pointer was never seen (or already freed).
    pub dropped_deallocs: u64,
    /// Allocations that reused a pointer that was still live.
    pub double_allocs: u64,
    /// Matched deallocations whose owner no longer had a sketch slot.
    pub unmatched_decrements: u64,
    /// Allocations rejected for a missing or zero size.
    pub invalid_events: u64,
}

#[derive(Debug, Clone)]
pub struct MemoryTracker {
    sketch: HashPipeSketch,
    ptr_sizes: HashMap<u64, LiveAllocation>,
    priority: BTreeMap<Pid, i64>,
    stats: MemoryStats,
    clock: u64,
}

impl MemoryTracker {
    pub fn new(
        config: &SketchConfig,
        priority_pids: impl IntoIterator<Item = Pid>,
    ) -> Result<Self> {
        Ok(Self {
            sketch: HashPipeSketch::from_config(config, UpdateMode::Signed)?,
            ptr_sizes: HashMap::new(),
            priority: priority_pids.into_iter().map(|pid| (pid, 0)).collect(),
            stats: MemoryStats::default(),
            clock: 0,
        })
    }

    pub fn on_event(&mut self, e: &MemoryEvent) {
        self.clock = self.clock.max(e.ts);
        match e.kind {
            MemoryKind::Alloc => self.on_alloc(e),
            MemoryKind::Dealloc => self.on_dealloc(e),
        }
    }

    fn on_alloc(&mut self, e: &MemoryEvent) {
        let size = match e.size {
            Some(size) if size > 0 && size <= i64::MAX as u64 => size as i64,
            _ => {
                self.stats.invalid_events += 1;
                return;
            }
        };
        self.stats.allocs += 1;
        let previous = self
            .ptr_sizes
            .insert(e.ptr, LiveAllocation { size, owner: e.pid });
        if previous.is_some() {
            self.stats.double_allocs += 1;
        }
        if let Some(counter) = self.priority.get_mut(&e.pid) {
            *counter += size;
        } else {
            self.sketch
                .insert_positive(e.pid, size)
                .expect("size checked positive");
        }
    }

    fn on_dealloc(&mut self, e: &MemoryEvent) {
        let Some(live) = self.ptr_sizes.remove(&e.ptr) else {
            self.stats.dropped_deallocs += 1;
            return;
        };
        self.stats.deallocs += 1;
        // attributed to whoever allocated, not to the freeing pid
        if let Some(counter) = self.priority.get_mut(&live.owner) {
            *counter -= live.size;
        } else if !self
            .sketch
            .apply_decrement(live.owner, live.size)
            .expect("signed sketch, positive size")
        {
            self.stats.unmatched_decrements += 1;
        }
    }

    pub fn top_k(&self, k: usize) -> Result<TopKReport> {
        let mut report = self.sketch.top_k(k)?;
        report.timestamp = self.clock;
        Ok(report)
    }

    pub fn priority_usage(&self, pid: Pid) -> Result<i64> {
        self.priority
            .get(&pid)
            .copied()
            .ok_or(Error::NotTracked(pid))
    }

    pub fn priority_counters(&self) -> &BTreeMap<Pid, i64> {
        &self.priority
    }

    pub fn priority_pids(&self) -> BTreeSet<Pid> {
        self.priority.keys().copied().collect()
    }

    pub fn is_priority(&self, pid: Pid) -> bool {
        self.priority.contains_key(&pid)
    }

    /// Exact counter for priority pids, sketch estimate otherwise.
    pub fn usage(&self, pid: Pid) -> i64 {
        self.priority
            .get(&pid)
            .copied()
            .unwrap_or_else(|| self.sketch.query(pid))
    }

    pub fn live_allocations(&self) -> usize {
        self.ptr_sizes.len()
    }

    pub fn sketch(&self) -> &HashPipeSketch {
        &self.sketch
    }

    pub fn stats(&self) -> &MemoryStats {
        &self.stats
    }

    /// Latest event timestamp seen.
    pub fn clock(&self) -> u64 {
        self.clock
    }
}
