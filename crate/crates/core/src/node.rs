//! Per-node receive machinery: hardware-style acceptance filtering and a
//! bounded mailbox.
//!
//! Each attached node owns exactly one mask+match filter, the way low-end CAN
//! controllers do. A node that needs several IDs picks a mask that spans
//! them and sorts out the spillover in software.

use std::collections::VecDeque;

use crate::bus::Tick;
use crate::frame::{DataFrame, FrameId, MAX_FRAME_ID};

/// Default mailbox depth for newly attached nodes.
pub const DEFAULT_MAILBOX_CAPACITY: usize = 64;

/// A mask+match pair over 11-bit identifiers.
///
/// A frame is accepted when `id & mask == pattern & mask`. A zero mask
/// accepts everything.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AcceptanceFilter {
    mask: u16,
    pattern: u16,
}

impl AcceptanceFilter {
    #[must_use]
    pub fn new(mask: u16, pattern: u16) -> Self {
        Self { mask: mask & MAX_FRAME_ID, pattern: pattern & MAX_FRAME_ID }
    }

    /// Accepts every identifier.
    #[must_use]
    pub fn promiscuous() -> Self {
        Self::new(0, 0)
    }

    /// Accepts exactly one identifier.
    #[must_use]
    pub fn exact(id: FrameId) -> Self {
        Self::new(MAX_FRAME_ID, id.raw())
    }

    /// The tightest mask+match filter that accepts every listed identifier.
    /// Masks out exactly the bit positions on which the ids disagree, so
    /// other identifiers sharing the remaining bits are accepted too.
    ///
    /// Panics if `ids` is empty: a filter accepting nothing has no mask+match
    /// encoding here and would be a configuration bug.
    #[must_use]
    pub fn spanning(ids: &[FrameId]) -> Self {
        let first = ids.first().expect("spanning filter needs at least one id").raw();
        let mut differing = 0u16;
        for id in ids {
            differing |= id.raw() ^ first;
        }
        let mask = MAX_FRAME_ID & !differing;
        Self::new(mask, first & mask)
    }

    #[must_use]
    pub fn accepts(&self, id: FrameId) -> bool {
        id.raw() & self.mask == self.pattern & self.mask
    }

    #[must_use]
    pub fn mask(&self) -> u16 {
        self.mask
    }

    #[must_use]
    pub fn pattern(&self) -> u16 {
        self.pattern
    }
}

/// Bounded FIFO of received frames with their delivery times.
///
/// When full, the oldest entry is dropped to make room and the overflow
/// counter increments; the newest traffic is what a controller acts on.
#[derive(Clone, Debug)]
pub struct Mailbox {
    queue: VecDeque<(Tick, DataFrame)>,
    capacity: usize,
    overflow_count: u64,
}

impl Mailbox {
    #[must_use]
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "a zero-capacity mailbox would drop everything");
        Self { queue: VecDeque::with_capacity(capacity), capacity, overflow_count: 0 }
    }

    pub fn push(&mut self, time: Tick, frame: DataFrame) {
        if self.queue.len() == self.capacity {
            self.queue.pop_front();
            self.overflow_count += 1;
        }
        self.queue.push_back((time, frame));
    }

    #[must_use = "popping removes the frame; ignoring it loses traffic"]
    pub fn pop(&mut self) -> Option<(Tick, DataFrame)> {
        self.queue.pop_front()
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.queue.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    #[must_use]
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total frames dropped to overflow since attachment.
    #[must_use]
    pub fn overflow_count(&self) -> u64 {
        self.overflow_count
    }
}

impl Default for Mailbox {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_MAILBOX_CAPACITY)
    }
}
