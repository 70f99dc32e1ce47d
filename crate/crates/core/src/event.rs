use serde::{Deserialize, Serialize};

use crate::{Pid, Tid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryKind {
    Alloc,
    Dealloc,
}

/// One allocation or deallocation. `size` is only present on allocations;
/// a deallocation's size is resolved through the pointer table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemoryEvent {
    pub ts: u64,
    pub kind: MemoryKind,
    pub pid: Pid,
    pub tid: Tid,
    pub ptr: u64,
    pub size: Option<u64>,
}

impl MemoryEvent {
    pub fn alloc(ts: u64, pid: Pid, tid: Tid, ptr: u64, size: u64) -> Self {
        Self {
            ts,
            kind: MemoryKind::Alloc,
            pid,
            tid,
            ptr,
            size: Some(size),
        }
    }

    pub fn dealloc(ts: u64, pid: Pid, tid: Tid, ptr: u64) -> Self {
        Self {
            ts,
            kind: MemoryKind::Dealloc,
            pid,
            tid,
            ptr,
            size: None,
        }
    }
}

/// A context switch on `cpu`: `prev_tid` leaves, `next_tid` of `next_pid`
/// starts running. `next_pid == 0` is the idle task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchedEvent {
    pub ts: u64,
    pub cpu: u32,
    pub prev_tid: Tid,
    pub next_tid: Tid,
    pub next_pid: Pid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResourceEvent {
    Memory(MemoryEvent),
    Sched(SchedEvent),
}

impl ResourceEvent {
    pub fn ts(&self) -> u64 {
        match self {
            ResourceEvent::Memory(e) => e.ts,
            ResourceEvent::Sched(e) => e.ts,
        }
    }
}

impl From<MemoryEvent> for ResourceEvent {
    fn from(e: MemoryEvent) -> Self {
        ResourceEvent::Memory(e)
    }
}

impl From<SchedEvent> for ResourceEvent {
    fn from(e: SchedEvent) -> Self {
        ResourceEvent::Sched(e)
    }
}
