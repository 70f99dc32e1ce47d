//! The multi-stage HashPipe sketch.
//!
//! A sketch is `d` hash tables ("stages") of `n` slots each. A new entry
//! always claims its stage-0 slot, pushing out whatever was there. The pushed
//! out entry then walks the remaining stages, where a slot is only taken over
//! by a strictly larger value. Whatever is still being carried after the last
//! stage is dropped, and that dropped value is the only source of error.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Pid;

/// Bytes charged per slot by [`HashPipeSketch::footprint_bytes`]. This is an
/// accounting constant for kernel map entries, not `size_of::<SketchEntry>()`.
pub const ENTRY_ACCOUNTING_BYTES: u64 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SketchEntry {
    pub pid: Pid,
    pub value: i64,
}

impl SketchEntry {
    pub fn new(pid: Pid, value: i64) -> Self {
        Self { pid, value }
    }
}

/// Parameters of one stage's `(a * pid + b) mod n` hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageHashParams {
    a: u64,
    b: u64,
    n: usize,
}

impl StageHashParams {
    /// The multiplier is forced odd.
    pub fn new(a: u64, b: u64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("slots per stage must be at least 1".into()));
        }
        Ok(Self { a: a | 1, b, n })
    }

    /// `a = 1, b = 0`: the slot is `pid mod n`.
    pub fn identity(n: usize) -> Result<Self> {
        Self::new(1, 0, n)
    }

    pub fn a(&self) -> u64 {
        self.a
    }

    pub fn b(&self) -> u64 {
        self.b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn slot(&self, pid: Pid) -> usize {
        stage_hash(self, pid)
    }
}

/// `((a * pid + b) mod 2^64) mod n`.
#[inline]
pub fn stage_hash(params: &StageHashParams, pid: Pid) -> usize {
    let h = params.a.wrapping_mul(u64::from(pid)).wrapping_add(params.b);
    (h % params.n as u64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// Accepts matched decrements; slot values may go negative.
    Signed,
    /// Increments only.
    Monotonic,
}

/// How stage hash parameters are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashFamily {
    /// Multipliers and offsets drawn from a generator seeded with `seed`.
    #[default]
    Seeded,
    /// `a = 1, b = 0` on every stage.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchConfig {
    pub stages: usize,
    pub slots: usize,
    pub seed: u64,
    #[serde(default)]
    pub hash: HashFamily,
}

impl SketchConfig {
    pub fn new(stages: usize, slots: usize, seed: u64) -> Self {
        Self {
            stages,
            slots,
            seed,
            hash: HashFamily::Seeded,
        }
    }

    pub fn identity(stages: usize, slots: usize) -> Self {
        Self {
            stages,
            slots,
            seed: 0,
            hash: HashFamily::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("stage count must be at least 1".into()));
        }
        if self.slots == 0 {
            return Err(Error::Config("slots per stage must be at least 1".into()));
        }
        Ok(())
    }

    pub fn stage_params(&self) -> Result<Vec<StageHashParams>> {
        self.validate()?;
        match self.hash {
            HashFamily::Identity => (0..self.stages)
                .map(|_| StageHashParams::identity(self.slots))
                .collect(),
            HashFamily::Seeded => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..self.stages)
                    .map(|_| {
                        let a = rng.next_u64();
                        let b = rng.next_u64();
                        StageHashParams::new(a, b, self.slots)
                    })
                    .collect()
            }
        }
    }
}

/// Counters describing what the pipeline did with its input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchStats {
    pub inserts: u64,
    /// Occupied slots handed over to a carried entry.
    pub evictions: u64,
    /// Entries dropped after the last stage.
    pub discards: u64,
    pub discarded_value: i64,
    pub decrements_applied: u64,
    pub decrements_missed: u64,
}

/// Ranked `(pid, value)` list produced by [`HashPipeSketch::top_k`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKReport {
    pub k: usize,
    /// Replay-clock time of the snapshot in nanoseconds.
    pub timestamp: u64,
    pub entries: Vec<SketchEntry>,
}

impl TopKReport {
    pub fn pids(&self) -> impl Iterator<Item = Pid> + '_ {
        self.entries.iter().map(|e| e.pid)
    }
}

/// Sorts by value descending with ascending pid as the tie-break.
pub fn rank_entries(entries: &mut [SketchEntry]) {
    entries.sort_unstable_by(|x, y| y.value.cmp(&x.value).then(x.pid.cmp(&y.pid)));
}

#[derive(Debug, Clone)]
pub struct HashPipeSketch {
    params: Vec<StageHashParams>,
    slots_per_stage: usize,
    // Row-major: stage `i` occupies `[i * n, (i + 1) * n)`.
    slots: Vec<Option<SketchEntry>>,
    mode: UpdateMode,
    stats: SketchStats,
}

impl HashPipeSketch {
    pub fn new(stages: usize, slots: usize, seed: u64, mode: UpdateMode) -> Result<Self> {
        Self::from_config(&SketchConfig::new(stages, slots, seed), mode)
    }

    pub fn from_config(config: &SketchConfig, mode: UpdateMode) -> Result<Self> {
        Self::with_params(config.stage_params()?, mode)
    }

    /// Builds a sketch from explicit per-stage parameters, which must all
    /// share one slot count.
    pub fn with_params(params: Vec<StageHashParams>, mode: UpdateMode) -> Result<Self> {
        let Some(first) = params.first() else {
            return Err(Error::Config("stage count must be at least 1".into()));
        };
        let n = first.n();
        if params.iter().any(|p| p.n() != n) {
            return Err(Error::Config(
                "all stages must have the same slot count".into(),
            ));
        }
        Ok(Self {
            slots: vec![None; params.len() * n],
            slots_per_stage: n,
            params,
            mode,
            stats: SketchStats::default(),
        })
    }

    pub fn stage_count(&self) -> usize {
        self.params.len()
    }

    pub fn slots_per_stage(&self) -> usize {
        self.slots_per_stage
    }

    pub fn mode(&self) -> UpdateMode {
        self.mode
    }

    pub fn params(&self) -> &[StageHashParams] {
        &self.params
    }

    pub fn stats(&self) -> &SketchStats {
        &self.stats
    }

    pub fn stage(&self, index: usize) -> &[Option<SketchEntry>] {
        let n = self.slots_per_stage;
        &self.slots[index * n..(index + 1) * n]
    }

    pub fn occupied(&self) -> impl Iterator<Item = &SketchEntry> {
        self.slots.iter().flatten()
    }

    /// Sum of every stored slot value.
    pub fn stored_total(&self) -> i64 {
        self.occupied().map(|e| e.value).sum()
    }

    #[inline]
    fn slot_index(&self, stage: usize, pid: Pid) -> usize {
        stage * self.slots_per_stage + self.params[stage].slot(pid)
    }

    /// Pushes `(pid, amount)` through the pipeline. Returns the entry that
    /// fell off the end, if any.
    pub fn insert_positive(&mut self, pid: Pid, amount: i64) -> Result<Option<SketchEntry>> {
        if amount <= 0 {
            return Err(Error::Precondition(format!(
                "insert amount must be positive, got {amount}"
            )));
        }
        self.stats.inserts += 1;
        let mut carried = SketchEntry::new(pid, amount);
        for stage in 0..self.params.len() {
            let idx = self.slot_index(stage, carried.pid);
            match &mut self.slots[idx] {
                slot @ None => {
                    *slot = Some(carried);
                    return Ok(None);
                }
                Some(resident) if resident.pid == carried.pid => {
                    resident.value += carried.value;
                    return Ok(None);
                }
                Some(resident) => {
                    // stage 0 always kicks; later stages keep the larger value
                    if stage == 0 || carried.value > resident.value {
                        std::mem::swap(resident, &mut carried);
                        self.stats.evictions += 1;
                    }
                }
            }
        }
        self.stats.discards += 1;
        self.stats.discarded_value += carried.value;
        Ok(Some(carried))
    }

    /// Subtracts `amount` from the first stage slot holding `pid`. Never
    /// inserts or evicts; returns whether a slot matched.
    pub fn apply_decrement(&mut self, pid: Pid, amount: i64) -> Result<bool> {
        if self.mode != UpdateMode::Signed {
            return Err(Error::Mode);
        }
        if amount <= 0 {
            return Err(Error::Precondition(format!(
                "decrement amount must be positive, got {amount}"
            )));
        }
        for stage in 0..self.params.len() {
            let idx = self.slot_index(stage, pid);
            if let Some(resident) = &mut self.slots[idx] {
                if resident.pid == pid {
                    resident.value -= amount;
                    self.stats.decrements_applied += 1;
                    return Ok(true);
                }
            }
        }
        self.stats.decrements_missed += 1;
        Ok(false)
    }

    /// Sum over all stages whose hashed slot holds `pid`.
    pub fn query(&self, pid: Pid) -> i64 {
        (0..self.params.len())
            .filter_map(|stage| self.slots[self.slot_index(stage, pid)])
            .filter(|e| e.pid == pid)
            .map(|e| e.value)
            .sum()
    }

    /// Stage duplicates summed per pid, in ranked order.
    pub fn ranked(&self) -> Vec<SketchEntry> {
        let mut merged: Vec<SketchEntry> = self.occupied().copied().collect();
        merged.sort_unstable_by_key(|e| e.pid);
        merged.dedup_by(|later, kept| {
            if later.pid == kept.pid {
                kept.value += later.value;
                true
            } else {
                false
            }
        });
        rank_entries(&mut merged);
        merged
    }

    pub fn top_k(&self, k: usize) -> Result<TopKReport> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        let mut entries = self.ranked();
        entries.truncate(k);
        Ok(TopKReport {
            k,
            timestamp: 0,
            entries,
        })
    }

    pub fn footprint_bytes(&self) -> u64 {
        self.params.len() as u64 * self.slots_per_stage as u64 * ENTRY_ACCOUNTING_BYTES
    }

    pub fn clear(&mut self) {
        self.slots.fill(None);
        self.stats = SketchStats::default();
    }
}
