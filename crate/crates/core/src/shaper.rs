//! Per-egress-port cyclic shaper state: slot clocks, rotating queue rings,
//! the group/queue classifiers and queue capacity accounting.
//!
//! A group with `n` queues transmits queue `j mod n` during slot `j`. The
//! slot number `j` here is the absolute slot count since time zero, not the
//! index within the hypercycle: a hypercycle need not hold a multiple of `n`
//! slots, and the rotation must not stutter at the wrap.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Nanos;
use crate::traffic::QueueSelector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShaperKind {
    Cqf,
    #[serde(rename = "3q", alias = "three_queue_cqf")]
    ThreeQueueCqf,
    Mcqf,
}

impl fmt::Display for ShaperKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShaperKind::Cqf => "cqf",
            ShaperKind::ThreeQueueCqf => "3q",
            ShaperKind::Mcqf => "mcqf",
        })
    }
}

impl std::str::FromStr for ShaperKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "cqf" => Ok(ShaperKind::Cqf),
            "3q" | "3q-cqf" | "three_queue_cqf" | "csqf" => Ok(ShaperKind::ThreeQueueCqf),
            "mcqf" => Ok(ShaperKind::Mcqf),
            other => Err(format!("unknown shaper kind '{other}' (expected cqf, 3q or mcqf)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub gid: u8,
    pub slot_us: u64,
    pub queue_count: u8,
}

impl GroupConfig {
    pub fn slot_length(&self) -> Nanos {
        Nanos::from_us(self.slot_us as i64)
    }
}

/// Queue length limit, counted in frames or payload bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "limit", rename_all = "lowercase")]
pub enum CapacityMode {
    Frames(u64),
    Bytes(u64),
}

impl CapacityMode {
    pub fn limit(self) -> u64 {
        match self {
            CapacityMode::Frames(n) | CapacityMode::Bytes(n) => n,
        }
    }

    /// Occupancy cost of one frame with `payload` bytes.
    pub fn cost(self, payload: u32) -> u64 {
        match self {
            CapacityMode::Frames(_) => 1,
            CapacityMode::Bytes(_) => payload as u64,
        }
    }
}

impl Default for CapacityMode {
    fn default() -> Self {
        CapacityMode::Frames(32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShaperConfig {
    pub kind: ShaperKind,
    pub groups: Vec<GroupConfig>,
    pub capacity: CapacityMode,
}

pub const DEFAULT_SLOT_US: u64 = 50;
pub const DEFAULT_MCQF_SLOTS_US: [u64; 3] = [25, 50, 100];

impl ShaperConfig {
    pub fn cqf(slot_us: u64) -> Self {
        ShaperConfig {
            kind: ShaperKind::Cqf,
            groups: vec![GroupConfig { gid: 1, slot_us, queue_count: 2 }],
            capacity: CapacityMode::default(),
        }
    }

    pub fn three_queue(slot_us: u64) -> Self {
        ShaperConfig {
            kind: ShaperKind::ThreeQueueCqf,
            groups: vec![GroupConfig { gid: 1, slot_us, queue_count: 3 }],
            capacity: CapacityMode::default(),
        }
    }

    /// Three groups: G1 with three queues, G2 and G3 with two.
    pub fn mcqf(slots_us: [u64; 3]) -> Self {
        ShaperConfig {
            kind: ShaperKind::Mcqf,
            groups: vec![
                GroupConfig { gid: 1, slot_us: slots_us[0], queue_count: 3 },
                GroupConfig { gid: 2, slot_us: slots_us[1], queue_count: 2 },
                GroupConfig { gid: 3, slot_us: slots_us[2], queue_count: 2 },
            ],
            capacity: CapacityMode::default(),
        }
    }

    pub fn default_for(kind: ShaperKind) -> Self {
        match kind {
            ShaperKind::Cqf => Self::cqf(DEFAULT_SLOT_US),
            ShaperKind::ThreeQueueCqf => Self::three_queue(DEFAULT_SLOT_US),
            ShaperKind::Mcqf => Self::mcqf(DEFAULT_MCQF_SLOTS_US),
        }
    }

    pub fn with_capacity(mut self, capacity: CapacityMode) -> Self {
        self.capacity = capacity;
        self
    }

    /// Structural checks plus slot divisibility against `hypercycle_us`
    /// (skipped when it is zero, i.e. no flows).
    pub fn validate(&self, hypercycle_us: u64) -> Result<(), ShaperError> {
        let invalid = |m: String| Err(ShaperError::InvalidConfig(m));
        match self.kind {
            ShaperKind::Cqf if self.groups.len() != 1 || self.groups[0].queue_count != 2 => {
                return invalid("CQF needs exactly one group with 2 queues".into());
            }
            ShaperKind::ThreeQueueCqf if self.groups.len() != 1 || self.groups[0].queue_count != 3 => {
                return invalid("3-queue CQF needs exactly one group with 3 queues".into());
            }
            ShaperKind::Mcqf if self.groups.is_empty() => {
                return invalid("MCQF needs at least one group".into());
            }
            _ => {}
        }
        for (i, g) in self.groups.iter().enumerate() {
            if self.groups[..i].iter().any(|o| o.gid == g.gid) {
                return invalid(format!("duplicate gid {}", g.gid));
            }
            if g.slot_us == 0 {
                return invalid(format!("group {} has zero slot length", g.gid));
            }
            if !(2..=3).contains(&g.queue_count) {
                return invalid(format!("group {} has {} queues (must be 2 or 3)", g.gid, g.queue_count));
            }
            if hypercycle_us > 0 && !hypercycle_us.is_multiple_of(g.slot_us) {
                return Err(ShaperError::SlotNotDividingHypercycle { gid: g.gid, slot_us: g.slot_us, hypercycle_us });
            }
        }
        if self.capacity.limit() == 0 {
            return invalid("queue capacity must be positive".into());
        }
        Ok(())
    }

    /// Index of the group serving flows tagged `gid`. Single-group shapers
    /// ignore the tag.
    pub fn group_index(&self, gid: u8) -> Result<usize, ShaperError> {
        match self.kind {
            ShaperKind::Cqf | ShaperKind::ThreeQueueCqf => Ok(0),
            ShaperKind::Mcqf => {
                self.groups.iter().position(|g| g.gid == gid).ok_or(ShaperError::UnknownGroup(gid))
            }
        }
    }

    pub fn group_for(&self, gid: u8) -> Result<&GroupConfig, ShaperError> {
        self.group_index(gid).map(|i| &self.groups[i])
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShaperError {
    #[error("invalid shaper config: {0}")]
    InvalidConfig(String),
    #[error("group {gid} slot {slot_us}us does not divide the {hypercycle_us}us hypercycle")]
    SlotNotDividingHypercycle { gid: u8, slot_us: u64, hypercycle_us: u64 },
    #[error("no group with gid {0}")]
    UnknownGroup(u8),
    #[error("group {0} has three queues but the frame carries no qid")]
    MissingQid(u8),
    #[error("queue overflow: needs {needed}, {free} free of {limit}")]
    QueueOverflow { needed: u64, free: u64, limit: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotClock {
    pub slot_length: Nanos,
    pub hypercycle: Nanos,
}

impl SlotClock {
    pub fn new(slot_length: Nanos, hypercycle: Nanos) -> Self {
        SlotClock { slot_length, hypercycle }
    }

    pub fn slot_count(&self) -> i64 {
        self.hypercycle.0 / self.slot_length.0
    }

    /// Slots elapsed since time zero; slot `j` covers `[j*T, (j+1)*T)`.
    pub fn absolute_slot(&self, t: Nanos) -> i64 {
        t.slots(self.slot_length)
    }
}

/// Position of `t` within the hypercycle's slots, `0..m`.
pub fn slot_index(t: Nanos, clock: &SlotClock) -> i64 {
    Nanos(t.0.rem_euclid(clock.hypercycle.0)).slots(clock.slot_length)
}

/// The queue whose gate is open during slot `slot`.
pub fn transmitting_queue(queue_count: u8, slot: i64) -> usize {
    slot.rem_euclid(queue_count as i64) as usize
}

/// Receiving queue for a frame arriving during `slot`: the one that transmits
/// next, or the one after that for tolerating frames in 3-queue groups.
pub fn receiving_queue(queue_count: u8, slot: i64, qid: Option<QueueSelector>) -> Result<usize, ShaperError> {
    let ahead = match (queue_count, qid) {
        (2, _) => 1,
        (_, Some(QueueSelector::Normal)) => 1,
        (_, Some(QueueSelector::Tolerating)) => 2,
        (_, None) => return Err(ShaperError::MissingQid(0)),
    };
    Ok(transmitting_queue(queue_count, slot + ahead))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedFrame {
    /// Engine-side frame handle.
    pub frame: usize,
    pub payload: u32,
}

/// FIFO with a fixed capacity; `occupied + free == q_len` always.
#[derive(Debug, Clone)]
pub struct QueueState {
    frames: VecDeque<QueuedFrame>,
    capacity: CapacityMode,
    occupied: u64,
}

impl QueueState {
    pub fn new(capacity: CapacityMode) -> Self {
        QueueState { frames: VecDeque::new(), capacity, occupied: 0 }
    }

    pub fn q_len(&self) -> u64 {
        self.capacity.limit()
    }

    pub fn occupied(&self) -> u64 {
        self.occupied
    }

    pub fn free(&self) -> u64 {
        self.q_len() - self.occupied
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Accepts the frame iff the free space covers its cost.
    pub fn enqueue(&mut self, frame: QueuedFrame) -> Result<(), ShaperError> {
        let needed = self.capacity.cost(frame.payload);
        if self.free() < needed {
            return Err(ShaperError::QueueOverflow { needed, free: self.free(), limit: self.q_len() });
        }
        self.occupied += needed;
        self.frames.push_back(frame);
        Ok(())
    }

    pub fn dequeue(&mut self) -> Option<QueuedFrame> {
        let f = self.frames.pop_front()?;
        self.occupied -= self.capacity.cost(f.payload);
        Some(f)
    }

    pub fn drain(&mut self) -> Vec<QueuedFrame> {
        self.occupied = 0;
        self.frames.drain(..).collect()
    }

    /// Puts previously drained frames back at the head, order preserved.
    /// Only valid on a queue that has received nothing since the drain.
    fn restore_front(&mut self, frames: impl DoubleEndedIterator<Item = QueuedFrame>) {
        for f in frames.rev() {
            self.occupied += self.capacity.cost(f.payload);
            self.frames.push_front(f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupState {
    pub config: GroupConfig,
    pub clock: SlotClock,
    queues: Vec<QueueState>,
    transmitting: usize,
    slot: i64,
    max_occupied: u64,
}

impl GroupState {
    pub fn transmitting(&self) -> usize {
        self.transmitting
    }

    pub fn current_slot(&self) -> i64 {
        self.slot
    }

    pub fn queue(&self, idx: usize) -> &QueueState {
        &self.queues[idx]
    }

    /// Largest occupancy any single queue of the group reached.
    pub fn max_occupied(&self) -> u64 {
        self.max_occupied
    }
}

/// Shaper state of one egress port.
#[derive(Debug, Clone)]
pub struct PortShaper {
    kind: ShaperKind,
    groups: Vec<GroupState>,
}

impl PortShaper {
    /// All groups start in `start_slot(group)`; queues are empty.
    pub fn new(config: &ShaperConfig, hypercycle: Nanos, start_slot: impl Fn(&GroupConfig) -> i64) -> Self {
        let groups = config
            .groups
            .iter()
            .map(|g| {
                let slot = start_slot(g);
                GroupState {
                    config: *g,
                    clock: SlotClock::new(g.slot_length(), hypercycle),
                    queues: (0..g.queue_count).map(|_| QueueState::new(config.capacity)).collect(),
                    transmitting: transmitting_queue(g.queue_count, slot),
                    slot,
                    max_occupied: 0,
                }
            })
            .collect();
        PortShaper { kind: config.kind, groups }
    }

    pub fn groups(&self) -> &[GroupState] {
        &self.groups
    }

    pub fn group(&self, idx: usize) -> &GroupState {
        &self.groups[idx]
    }

    /// Picks (group index, queue index) for a frame arriving at local time `t_local`.
    pub fn classify(&self, gid: u8, qid: Option<QueueSelector>, t_local: Nanos) -> Result<(usize, usize), ShaperError> {
        let gi = match self.kind {
            ShaperKind::Cqf | ShaperKind::ThreeQueueCqf => 0,
            ShaperKind::Mcqf => {
                self.groups.iter().position(|g| g.config.gid == gid).ok_or(ShaperError::UnknownGroup(gid))?
            }
        };
        let group = &self.groups[gi];
        let slot = group.clock.absolute_slot(t_local);
        let qi = receiving_queue(group.config.queue_count, slot, qid).map_err(|e| match e {
            ShaperError::MissingQid(_) => ShaperError::MissingQid(group.config.gid),
            other => other,
        })?;
        Ok((gi, qi))
    }

    pub fn enqueue(&mut self, group: usize, queue: usize, frame: QueuedFrame) -> Result<(), ShaperError> {
        let g = &mut self.groups[group];
        g.queues[queue].enqueue(frame)?;
        g.max_occupied = g.max_occupied.max(g.queues[queue].occupied());
        Ok(())
    }

    /// Advances `group` to `new_slot` and hands back everything in the queue
    /// that now transmits, in FIFO order.
    pub fn rotate(&mut self, group: usize, new_slot: i64) -> Vec<QueuedFrame> {
        let g = &mut self.groups[group];
        g.slot = new_slot;
        g.transmitting = transmitting_queue(g.config.queue_count, new_slot);
        g.queues[g.transmitting].drain()
    }

    /// Returns frames that could not be sent during the slot that just closed
    /// to the head of the queue they were drained from.
    pub fn restore(&mut self, group: usize, queue: usize, frames: Vec<QueuedFrame>) {
        let g = &mut self.groups[group];
        g.queues[queue].restore_front(frames.into_iter());
        g.max_occupied = g.max_occupied.max(g.queues[queue].occupied());
    }

    pub fn is_idle(&self) -> bool {
        self.groups.iter().all(|g| g.queues.iter().all(|q| q.is_empty()))
    }
}
