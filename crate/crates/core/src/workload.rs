//! Deterministic synthetic traces.
//!
//! Every generator is a pure function of its [`WorkloadSpec`]: the same spec
//! always yields the same event list. Timestamps advance by a fixed tick per
//! event so they are strictly increasing, pointer tokens are sequential, and
//! pids are never reused within a trace.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{MemoryEvent, ResourceEvent, SchedEvent};
use crate::{Pid, Tid};

pub const CPUS: usize = 4;
pub const THREADS_PER_PID: u32 = 4;
/// Microsecond spacing for the non-cyclic kinds.
pub const DEFAULT_TICK_NS: u64 = 1_000;
/// Events per cycle for `cyclic_train`.
pub const EVENTS_PER_PERIOD: u64 = 10_000;

// long-lived pids are scattered over [FIRST_PID, FIRST_PID + PID_SPAN)
const FIRST_PID: Pid = 300;
const PID_SPAN: usize = 65_536;
pub const MAX_PIDS: u32 = 1_000_000;
const FORK_PID_BASE: Pid = 100_000;
const TID_BASE: Tid = 1 << 22;
const FIRST_PTR: u64 = 0x1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    /// Zipf-popular allocations with randomly interleaved frees.
    ZipfAlloc,
    /// Background zipf allocations plus bursts of short-lived processes.
    ForkBomb,
    /// One process alternating allocate-heavy and free-heavy phases.
    CyclicTrain,
    /// Context switches over 4 cpus with zipf-popular threads.
    SchedMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub pid_count: u32,
    pub event_count: u64,
    pub zipf_s: f64,
    pub free_ratio: f64,
    pub period_ns: u64,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, pid_count: u32, event_count: u64, seed: u64) -> Self {
        Self {
            kind,
            pid_count,
            event_count,
            zipf_s: 1.2,
            free_ratio: 0.5,
            period_ns: 1_000_000_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.event_count == 0 {
            return Err(Error::Config("event count must be at least 1".into()));
        }
        if self.pid_count == 0 {
            return Err(Error::Config("pid count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.free_ratio) {
            return Err(Error::Config(format!(
                "free ratio must be in [0, 1], got {}",
                self.free_ratio
            )));
        }
        let needs_zipf = !matches!(self.kind, WorkloadKind::CyclicTrain);
        if needs_zipf && !(self.zipf_s > 0.0 && self.zipf_s.is_finite()) {
            return Err(Error::Config(format!(
                "zipf exponent must be positive, got {}",
                self.zipf_s
            )));
        }
        if self.kind == WorkloadKind::CyclicTrain && self.period_ns < EVENTS_PER_PERIOD {
            return Err(Error::Config(format!(
                "period must be at least {EVENTS_PER_PERIOD} ns"
            )));
        }
        if self.pid_count > MAX_PIDS {
            return Err(Error::Config(format!(
                "pid count must be at most {MAX_PIDS}"
            )));
        }
        if self.kind == WorkloadKind::ForkBomb
            && FIRST_PID as usize + 4 * self.pid_count as usize > FORK_PID_BASE as usize
        {
            return Err(Error::Config(
                "too many long-lived pids for a fork bomb trace".into(),
            ));
        }
        if self.kind == WorkloadKind::ForkBomb
            && u64::from(FORK_PID_BASE) + self.event_count > u64::from(TID_BASE / THREADS_PER_PID)
        {
            return Err(Error::Config(
                "too many events for the fork pid range".into(),
            ));
        }
        Ok(())
    }

    pub fn tick_ns(&self) -> u64 {
        match self.kind {
            WorkloadKind::CyclicTrain => self.period_ns / EVENTS_PER_PERIOD,
            _ => DEFAULT_TICK_NS,
        }
    }
}

/// Inverse-CDF sampler over ranks `0..n` with weight `(rank + 1)^-s`.
#[derive(Debug, Clone)]
pub struct ZipfTable {
    cdf: Vec<f64>,
    exponent: f64,
}

impl ZipfTable {
    pub fn new(n: usize, s: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=n)
            .map(|rank| {
                acc += (rank as f64).powf(-s);
                acc
            })
            .collect();
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { cdf, exponent: s }
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    pub fn probability(&self, rank: usize) -> f64 {
        let below = if rank == 0 { 0.0 } else { self.cdf[rank - 1] };
        self.cdf[rank] - below
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }
}

/// Thread `j` of `pid`; thread 0 is the main thread and shares the pid.
pub fn thread_id(pid: Pid, j: u32) -> Tid {
    if j == 0 {
        pid
    } else {
        TID_BASE + pid * THREADS_PER_PID + j
    }
}

/// Generates the trace described by `spec`.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<ResourceEvent>> {
    spec.validate()?;
    let mut g = Generator::new(spec);
    let events = match spec.kind {
        WorkloadKind::ZipfAlloc => g.zipf_alloc(),
        WorkloadKind::SchedMix => g.sched_mix(),
        WorkloadKind::ForkBomb => g.fork_bomb(),
        WorkloadKind::CyclicTrain => g.cyclic_train(),
    };
    debug_assert_eq!(events.len() as u64, spec.event_count);
    Ok(events)
}

/// Distinct pids in zipf rank order (index 0 is the most popular).
pub fn rank_pids(spec: &WorkloadSpec) -> Vec<Pid> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_F00D);
    let span = (4 * spec.pid_count as usize).max(PID_SPAN);
    rand::seq::index::sample(&mut rng, span, spec.pid_count as usize)
        .into_iter()
        .map(|i| FIRST_PID + i as Pid)
        .collect()
}

struct Scheduler {
    current: [Tid; CPUS],
    running: HashMap<Tid, usize>,
}

impl Scheduler {
    fn new() -> Self {
        Self {
            current: [0; CPUS],
            running: HashMap::new(),
        }
    }

    fn is_free(&self, tid: Tid) -> bool {
        !self.running.contains_key(&tid)
    }

    fn switch(&mut self, ts: u64, cpu: usize, next_tid: Tid, next_pid: Pid) -> SchedEvent {
        let prev_tid = self.current[cpu];
        if prev_tid != 0 {
            self.running.remove(&prev_tid);
        }
        if next_tid != 0 {
            self.running.insert(next_tid, cpu);
        }
        self.current[cpu] = next_tid;
        SchedEvent {
            ts,
            cpu: cpu as u32,
            prev_tid,
            next_tid,
            next_pid,
        }
    }
}

struct Generator {
    rng: ChaCha8Rng,
    spec: WorkloadSpec,
    zipf: ZipfTable,
    pids: Vec<Pid>,
    next_ptr: u64,
    /// Allocations that will be freed later, as `(ptr, owner)`.
    pending_frees: Vec<(u64, Pid)>,
    sched: Scheduler,
}

impl Generator {
    fn new(spec: &WorkloadSpec) -> Self {
        let pids = rank_pids(spec);
        let s = if spec.zipf_s > 0.0 { spec.zipf_s } else { 1.0 };
        Self {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            spec: *spec,
            zipf: ZipfTable::new(pids.len(), s),
            pids,
            next_ptr: FIRST_PTR,
            pending_frees: Vec::new(),
            sched: Scheduler::new(),
        }
    }

    fn ts(&self, i: u64) -> u64 {
        i * self.spec.tick_ns()
    }

    fn alloc_size(&mut self) -> u64 {
        let base = 1u64 << self.rng.gen_range(4..=16);
        base + self.rng.gen_range(0..base)
    }

    fn alloc(&mut self, ts: u64, pid: Pid, size: u64) -> MemoryEvent {
        let tid = thread_id(pid, self.rng.gen_range(0..THREADS_PER_PID));
        let ptr = self.next_ptr;
        self.next_ptr += 1;
        MemoryEvent::alloc(ts, pid, tid, ptr, size)
    }

    fn zipf_pid(&mut self) -> Pid {
        let rank = self.zipf.sample(&mut self.rng);
        self.pids[rank]
    }

    /// A zipf-popular allocation or, with the steady-state probability that
    /// matches `free_ratio`, a free of an earlier one.
    fn background_memory(&mut self, ts: u64) -> MemoryEvent {
        let f = self.spec.free_ratio;
        let p_free = f / (1.0 + f);
        if !self.pending_frees.is_empty() && self.rng.gen_bool(p_free) {
            let idx = self.rng.gen_range(0..self.pending_frees.len());
            let (ptr, owner) = self.pending_frees.swap_remove(idx);
            let tid = thread_id(owner, self.rng.gen_range(0..THREADS_PER_PID));
            return MemoryEvent::dealloc(ts, owner, tid, ptr);
        }
        let pid = self.zipf_pid();
        let size = self.alloc_size();
        let e = self.alloc(ts, pid, size);
        if self.rng.gen_bool(f) {
            self.pending_frees.push((e.ptr, pid));
        }
        e
    }

    /// Switches a random cpu to a zipf-popular free thread, or to idle.
    fn background_switch(&mut self, ts: u64, idle_prob: f64) -> SchedEvent {
        let cpu = self.rng.gen_range(0..CPUS);
        let prev = self.sched.current[cpu];
        for _ in 0..8 {
            if prev != 0 && self.rng.gen_bool(idle_prob) {
                return self.sched.switch(ts, cpu, 0, 0);
            }
            let pid = self.zipf_pid();
            let tid = thread_id(pid, self.rng.gen_range(0..THREADS_PER_PID));
            if tid != prev && self.sched.is_free(tid) {
                return self.sched.switch(ts, cpu, tid, pid);
            }
        }
        if prev != 0 {
            return self.sched.switch(ts, cpu, 0, 0);
        }
        // at most CPUS - 1 threads are busy, so some thread is free
        let (pid, tid) = self
            .pids
            .iter()
            .flat_map(|&p| (0..THREADS_PER_PID).map(move |j| (p, thread_id(p, j))))
            .find(|&(_, tid)| self.sched.is_free(tid))
            .expect("a free thread exists");
        self.sched.switch(ts, cpu, tid, pid)
    }

    fn zipf_alloc(&mut self) -> Vec<ResourceEvent> {
        (0..self.spec.event_count)
            .map(|i| {
                let ts = self.ts(i);
                self.background_memory(ts).into()
            })
            .collect()
    }

    fn sched_mix(&mut self) -> Vec<ResourceEvent> {
        (0..self.spec.event_count)
            .map(|i| {
                let ts = self.ts(i);
                self.background_switch(ts, 0.05).into()
            })
            .collect()
    }

    fn fork_bomb(&mut self) -> Vec<ResourceEvent> {
        const BURST_EVERY: u64 = 2_000;
        const BURST_SIZE: u32 = 16;
        const CHILD_ALLOCS: u32 = 4;

        struct Child {
            pid: Pid,
            allocs_left: u32,
            scheduled: bool,
            live: Vec<u64>,
        }

        let mut next_child_pid = FORK_PID_BASE;
        let mut children: Vec<Child> = Vec::new();
        let mut events = Vec::with_capacity(self.spec.event_count as usize);
        for i in 0..self.spec.event_count {
            let ts = self.ts(i);
            if i % BURST_EVERY == 0 {
                for _ in 0..BURST_SIZE {
                    children.push(Child {
                        pid: next_child_pid,
                        allocs_left: CHILD_ALLOCS,
                        scheduled: false,
                        live: Vec::new(),
                    });
                    next_child_pid += 1;
                }
            }
            if children.is_empty() || self.rng.gen_bool(0.5) {
                let e: ResourceEvent = if self.rng.gen_bool(0.5) {
                    self.background_memory(ts).into()
                } else {
                    self.background_switch(ts, 0.05).into()
                };
                events.push(e);
                continue;
            }
            let idx = self.rng.gen_range(0..children.len());
            let child = &mut children[idx];
            let pid = child.pid;
            let e: ResourceEvent = if child.allocs_left > 0 {
                child.allocs_left -= 1;
                let size = 4096 * self.rng.gen_range(1..=16);
                let ptr = self.next_ptr;
                self.next_ptr += 1;
                child.live.push(ptr);
                MemoryEvent::alloc(ts, pid, pid, ptr, size).into()
            } else if !child.scheduled && self.sched.is_free(pid) {
                child.scheduled = true;
                let cpu = self.rng.gen_range(0..CPUS);
                self.sched.switch(ts, cpu, pid, pid).into()
            } else if let Some(ptr) = child.live.pop() {
                MemoryEvent::dealloc(ts, pid, pid, ptr).into()
            } else {
                children.swap_remove(idx);
                match self.sched.running.get(&pid) {
                    Some(&cpu) => self.sched.switch(ts, cpu, 0, 0).into(),
                    // already switched out by background traffic
                    None => self.background_memory(ts).into(),
                }
            };
            events.push(e);
        }
        events
    }

    fn cyclic_train(&mut self) -> Vec<ResourceEvent> {
        let period = self.spec.period_ns;
        // background traffic is drawn from every pid but the trainer
        let trainer = self.pids.remove(0);
        let background = !self.pids.is_empty();
        if background {
            self.zipf = ZipfTable::new(self.pids.len(), self.zipf.exponent);
        }
        let mut tensors: Vec<u64> = Vec::new();
        let mut events = Vec::with_capacity(self.spec.event_count as usize);
        for i in 0..self.spec.event_count {
            let ts = self.ts(i);
            let alloc_phase = (ts % period) < period / 2;
            let e: ResourceEvent = if self.rng.gen_bool(0.5) {
                let trainer_turn = !background || self.rng.gen_bool(0.8);
                if trainer_turn && alloc_phase {
                    let size = 32 * 1024 + self.rng.gen_range(0..32 * 1024);
                    let e = self.alloc(ts, trainer, size);
                    tensors.push(e.ptr);
                    e.into()
                } else if trainer_turn && !tensors.is_empty() {
                    let idx = self.rng.gen_range(0..tensors.len());
                    let ptr = tensors.swap_remove(idx);
                    let tid = thread_id(trainer, self.rng.gen_range(0..THREADS_PER_PID));
                    MemoryEvent::dealloc(ts, trainer, tid, ptr).into()
                } else if background {
                    self.background_memory(ts).into()
                } else {
                    self.alloc(ts, trainer, 4096).into()
                }
            } else {
                let share = if alloc_phase { 0.7 } else { 0.2 };
                self.cyclic_switch(ts, trainer, share, background).into()
            };
            events.push(e);
        }
        events
    }

    fn cyclic_switch(&mut self, ts: u64, trainer: Pid, share: f64, background: bool) -> SchedEvent {
        let cpu = self.rng.gen_range(0..CPUS);
        let prev = self.sched.current[cpu];
        if !background || self.rng.gen_bool(share) {
            for j in 0..THREADS_PER_PID {
                let tid = thread_id(trainer, j);
                if tid != prev && self.sched.is_free(tid) {
                    return self.sched.switch(ts, cpu, tid, trainer);
                }
            }
        }
        if background {
            self.background_switch(ts, 0.05)
        } else {
            // every other trainer thread is busy, so prev is one of them
            self.sched.switch(ts, cpu, 0, 0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::MemoryKind;
    use std::collections::{BTreeMap, HashSet};

    fn memory_events(events: &[ResourceEvent]) -> impl Iterator<Item = &MemoryEvent> {
        events.iter().filter_map(|e| match e {
            ResourceEvent::Memory(m) => Some(m),
            _ => None,
        })
    }

    fn check_integrity(events: &[ResourceEvent]) {
        let mut live = HashSet::new();
        let mut freed = HashSet::new();
        let mut last = None;
        for e in events {
            if let Some(prev) = last {
                assert!(e.ts() > prev, "timestamps must strictly increase");
            }
            last = Some(e.ts());
            if let ResourceEvent::Memory(m) = e {
                match m.kind {
                    MemoryKind::Alloc => assert!(live.insert(m.ptr), "ptr reused"),
                    MemoryKind::Dealloc => {
                        assert!(live.remove(&m.ptr), "free of unknown ptr {}", m.ptr);
                        assert!(freed.insert(m.ptr), "double free");
                    }
                }
            }
        }
    }

    fn spec(kind: WorkloadKind, events: u64, seed: u64) -> WorkloadSpec {
        WorkloadSpec::new(kind, 200, events, seed)
    }

    #[test]
    fn validation() {
        let ok = spec(WorkloadKind::ZipfAlloc, 10, 1);
        assert!(ok.validate().is_ok());
        assert!(generate(&WorkloadSpec {
            event_count: 0,
            ..ok
        })
        .is_err());
        assert!(generate(&WorkloadSpec { pid_count: 0, ..ok }).is_err());
        assert!(generate(&WorkloadSpec {
            free_ratio: 1.5,
            ..ok
        })
        .is_err());
        assert!(generate(&WorkloadSpec { zipf_s: 0.0, ..ok }).is_err());
        let cyc = spec(WorkloadKind::CyclicTrain, 10, 1);
        assert!(generate(&WorkloadSpec {
            period_ns: 10,
            ..cyc
        })
        .is_err());
        assert!(generate(&WorkloadSpec { zipf_s: 0.0, ..cyc }).is_ok());
    }

    #[test]
    fn single_event_trace() {
        let s = WorkloadSpec {
            free_ratio: 0.0,
            ..WorkloadSpec::new(WorkloadKind::ZipfAlloc, 500, 1, 7)
        };
        let events = generate(&s).unwrap();
        assert_eq!(events.len(), 1);
        assert!(matches!(
            events[0],
            ResourceEvent::Memory(MemoryEvent {
                kind: MemoryKind::Alloc,
                ..
            })
        ));
    }

    #[test]
    fn every_kind_is_deterministic_and_well_formed() {
        for kind in [
            WorkloadKind::ZipfAlloc,
            WorkloadKind::ForkBomb,
            WorkloadKind::CyclicTrain,
            WorkloadKind::SchedMix,
        ] {
            let s = spec(kind, 20_000, 3);
            let a = generate(&s).unwrap();
            let b = generate(&s).unwrap();
            assert_eq!(a, b, "{kind:?}");
            assert_eq!(a.len(), 20_000);
            check_integrity(&a);
            let c = generate(&WorkloadSpec { seed: 4, ..s }).unwrap();
            assert_ne!(a, c, "{kind:?}");
        }
    }

    #[test]
    fn sched_streams_never_run_a_thread_twice() {
        for kind in [
            WorkloadKind::SchedMix,
            WorkloadKind::ForkBomb,
            WorkloadKind::CyclicTrain,
        ] {
            let events = generate(&spec(kind, 20_000, 11)).unwrap();
            let mut current = [0u32; CPUS];
            for e in &events {
                if let ResourceEvent::Sched(s) = e {
                    let cpu = s.cpu as usize;
                    assert_eq!(s.prev_tid, current[cpu], "{kind:?}");
                    assert_ne!(s.prev_tid, s.next_tid, "{kind:?}");
                    if s.next_tid != 0 {
                        assert!(!current.contains(&s.next_tid), "{kind:?}");
                    }
                    current[cpu] = s.next_tid;
                }
            }
        }
    }

    #[test]
    fn zipf_table_matches_weights() {
        let t = ZipfTable::new(4, 1.0);
        let h = 1.0 + 0.5 + 1.0 / 3.0 + 0.25;
        for rank in 0..4 {
            let expected = 1.0 / (rank as f64 + 1.0) / h;
            assert!((t.probability(rank) - expected).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[t.sample(&mut rng)] += 1;
        }
        for (rank, &count) in counts.iter().enumerate() {
            let freq = count as f64 / 100_000.0;
            assert!((freq - t.probability(rank)).abs() < 0.01);
        }
    }

    #[test]
    fn zipf_rank_one_allocates_most() {
        let s = WorkloadSpec::new(WorkloadKind::ZipfAlloc, 500, 200_000, 7);
        let events = generate(&s).unwrap();
        let mut bytes: BTreeMap<Pid, u64> = BTreeMap::new();
        for m in memory_events(&events) {
            if let Some(size) = m.size {
                *bytes.entry(m.pid).or_default() += size;
            }
        }
        let top = bytes
            .iter()
            .max_by_key(|(_, &b)| b)
            .map(|(&p, _)| p)
            .unwrap();
        assert_eq!(top, rank_pids(&s)[0]);
    }

    #[test]
    fn fork_pids_are_never_reused() {
        let events = generate(&spec(WorkloadKind::ForkBomb, 50_000, 5)).unwrap();
        let mut first_seen: BTreeMap<Pid, usize> = BTreeMap::new();
        let mut last_seen: BTreeMap<Pid, usize> = BTreeMap::new();
        for (i, m) in memory_events(&events).enumerate() {
            if m.pid >= FORK_PID_BASE {
                first_seen.entry(m.pid).or_insert(i);
                last_seen.insert(m.pid, i);
            }
        }
        assert!(first_seen.len() >= 16 * 20);
        // children are born in increasing pid order
        let births: Vec<usize> = first_seen.values().copied().collect();
        let burst_starts: Vec<usize> = births
            .chunks(16)
            .map(|c| *c.iter().min().unwrap())
            .collect();
        assert!(burst_starts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn cyclic_trainer_memory_rises_and_falls() {
        let s = WorkloadSpec::new(WorkloadKind::CyclicTrain, 20, 40_000, 9);
        let events = generate(&s).unwrap();
        let trainer = rank_pids(&s)[0];
        let period = s.period_ns;
        let mut net = 0i64;
        let mut sizes = HashMap::new();
        let mut at_mid = Vec::new();
        let mut at_end = Vec::new();
        let mut last_phase = 0;
        for e in &events {
            if let ResourceEvent::Memory(m) = e {
                if m.pid == trainer {
                    match m.kind {
                        MemoryKind::Alloc => {
                            sizes.insert(m.ptr, m.size.unwrap() as i64);
                            net += m.size.unwrap() as i64;
                        }
                        MemoryKind::Dealloc => net -= sizes[&m.ptr],
                    }
                }
            }
            let phase = (e.ts() % period) / (period / 2);
            if phase != last_phase {
                if phase == 1 {
                    at_mid.push(net)
                } else {
                    at_end.push(net)
                }
                last_phase = phase;
            }
        }
        assert!(at_mid.len() >= 3);
        for (mid, end) in at_mid.iter().zip(&at_end) {
            assert!(mid > &(10 * end.max(&1)), "mid {mid} end {end}");
        }
    }
}
