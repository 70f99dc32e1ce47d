use std::collections::BTreeSet;

use crate::cpu::CpuTracker;
use crate::error::Result;
use crate::event::ResourceEvent;
use crate::memory::MemoryTracker;
use crate::sketch::SketchConfig;
use crate::Pid;

/// Both trackers fed from one event stream.
#[derive(Debug, Clone)]
pub struct Replay {
    pub memory: MemoryTracker,
    pub cpu: CpuTracker,
    pub events: u64,
}

impl Replay {
    pub fn new(config: &SketchConfig, priority: &BTreeSet<Pid>) -> Result<Self> {
        Ok(Self {
            memory: MemoryTracker::new(config, priority.iter().copied())?,
            cpu: CpuTracker::new(config, priority.iter().copied())?,
            events: 0,
        })
    }

    pub fn apply(&mut self, event: &ResourceEvent) {
        self.events += 1;
        match event {
            ResourceEvent::Memory(e) => self.memory.on_event(e),
            ResourceEvent::Sched(e) => self.cpu.on_sched(e),
        }
    }

    pub fn apply_all<'a>(&mut self, events: impl IntoIterator<Item = &'a ResourceEvent>) {
        for e in events {
            self.apply(e);
        }
    }

    pub fn run(
        config: &SketchConfig,
        priority: &BTreeSet<Pid>,
        events: &[ResourceEvent],
    ) -> Result<Self> {
        let mut replay = Self::new(config, priority)?;
        replay.apply_all(events);
        Ok(replay)
    }
}
