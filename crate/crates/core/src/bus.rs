//! Virtual CAN bus: a shared medium simulated one frame slot at a time.
//!
//! Every call to [`VirtualBus::step`] resolves one arbitration round among
//! the attached nodes' pending transmissions. The lowest arbitration value
//! (identifier then RTR bit) wins, exactly as dominant bits beat recessive
//! ones on a real wire; losers stay queued and contend again. Time is counted
//! in bit-times: a delivered frame occupies its encoded length plus a
//! three-bit interframe space, and error handling occupies a fixed short slot.
//!
//! Fault confinement is deliberately simplified: a destroyed frame costs its
//! transmitter 8 transmit-error points, a successful one refunds 1, and a
//! node whose counter saturates at 256 goes bus-off permanently: it
//! transmits nothing (frames, acknowledgments, or error flags) from then on.

use thiserror::Error;

use crate::frame::{encode_frame, Bit, DataFrame, FrameId};
use crate::node::{AcceptanceFilter, Mailbox};

/// Simulation time in bit-times on the wire.
pub type Tick = u64;

/// Idle gap between a frame's last bit and the next arbitration round.
pub const INTERFRAME_BITS: Tick = 3;
/// Bits already on the wire when an error flag interrupts a frame:
/// start-of-frame, eleven identifier bits, and RTR.
pub const ERROR_SIGNAL_OFFSET: Tick = 13;
/// Total length of a slot that ends in frame destruction: the interrupted
/// header, a six-bit error flag, an eight-bit error delimiter, and the
/// three-bit intermission.
pub const ERROR_SLOT_BITS: Tick = ERROR_SIGNAL_OFFSET + 6 + 8 + INTERFRAME_BITS;
/// How far a bare [`VirtualBus::step`] advances when nothing is pending: the
/// eleven recessive bits a controller needs to call the bus idle.
pub const IDLE_STEP_BITS: Tick = 11;

/// Transmit-error points added per destroyed frame.
pub const TX_ERROR_PENALTY: u16 = 8;
/// Counter value at which a node goes bus-off; the counter saturates here.
pub const BUS_OFF_THRESHOLD: u16 = 256;
const ERROR_PASSIVE_THRESHOLD: u16 = 128;

/// Identifies an attached node. Handles are dense indices assigned in
/// attachment order, starting at zero.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeHandle(pub usize);

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NodeState {
    ErrorActive,
    ErrorPassive,
    BusOff,
}

/// Per-node fault-confinement counters.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct ErrorCounters {
    pub transmit_errors: u16,
    pub receive_errors: u16,
}

impl ErrorCounters {
    #[must_use]
    pub fn state(&self) -> NodeState {
        if self.transmit_errors >= BUS_OFF_THRESHOLD {
            NodeState::BusOff
        } else if self.transmit_errors >= ERROR_PASSIVE_THRESHOLD
            || self.receive_errors >= ERROR_PASSIVE_THRESHOLD
        {
            NodeState::ErrorPassive
        } else {
            NodeState::ErrorActive
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BusEventKind {
    /// A node won arbitration and started transmitting.
    ArbitrationWon,
    /// The frame reached every listening node intact.
    FrameDelivered,
    /// The transmission was destroyed (error flag, collision, or missing
    /// acknowledgment); the transmitter re-queues unless it went bus-off.
    FrameDestroyed,
    /// An injected error flag hit the wire.
    ErrorFrame,
    /// Nothing was pending this step.
    BusIdle,
    /// Two transmitters sent the same identifier with differing bits, a
    /// configuration or spoofing artifact a real bus turns into bit errors.
    ProtocolViolation,
}

/// One entry in the bus's event timeline.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BusEvent {
    pub time: Tick,
    pub kind: BusEventKind,
    pub frame: Option<DataFrame>,
    pub source: Option<NodeHandle>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("node {node:?} is bus-off and cannot transmit")]
    BusOff { node: NodeHandle },
}

struct NodeSlot {
    filter: AcceptanceFilter,
    mailbox: Mailbox,
    /// Pending transmissions, each stamped with the tick it was handed to
    /// the controller. Arrival order decides who owns the wire when two
    /// nodes contend with the same identifier: the earlier one had already
    /// started, the later one sees a busy bus and holds off.
    tx_queue: std::collections::VecDeque<(Tick, DataFrame)>,
    counters: ErrorCounters,
}

impl NodeSlot {
    fn is_active(&self) -> bool {
        self.counters.state() != NodeState::BusOff
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Injection {
    injector: NodeHandle,
    target: FrameId,
}

/// The shared medium. All attached nodes see every delivered frame (subject
/// to their acceptance filters); transmission order is decided purely by
/// arbitration, so runs are deterministic.
#[derive(Default)]
pub struct VirtualBus {
    now: Tick,
    slots: Vec<NodeSlot>,
    injections: Vec<Injection>,
}

impl VirtualBus {
    #[must_use]
    pub fn new() -> Self {
        Self::default()
    }

    /// Attaches a node with the default mailbox capacity and returns its
    /// handle. Handles are assigned sequentially from zero.
    pub fn attach(&mut self, filter: AcceptanceFilter) -> NodeHandle {
        self.attach_with_mailbox(filter, Mailbox::default())
    }

    pub fn attach_with_mailbox(&mut self, filter: AcceptanceFilter, mailbox: Mailbox) -> NodeHandle {
        self.slots.push(NodeSlot {
            filter,
            mailbox,
            tx_queue: std::collections::VecDeque::new(),
            counters: ErrorCounters::default(),
        });
        NodeHandle(self.slots.len() - 1)
    }

    #[must_use]
    pub fn now(&self) -> Tick {
        self.now
    }

    #[must_use]
    pub fn node_count(&self) -> usize {
        self.slots.len()
    }

    /// Queues a frame for transmission. The node's queue drains in FIFO
    /// order; a frame that loses arbitration or gets destroyed stays at the
    /// front and recontends until delivered or the node goes bus-off.
    pub fn queue_tx(&mut self, node: NodeHandle, frame: DataFrame) -> Result<(), BusError> {
        if !self.slots[node.0].is_active() {
            return Err(BusError::BusOff { node });
        }
        let arrival = self.now;
        self.slots[node.0].tx_queue.push_back((arrival, frame));
        Ok(())
    }

    #[must_use]
    pub fn pending_tx(&self, node: NodeHandle) -> usize {
        self.slots[node.0].tx_queue.len()
    }

    /// Drops everything `node` still has queued, modeling a controller's
    /// transmit-abort command. Returns how many frames were flushed.
    pub fn abort_tx(&mut self, node: NodeHandle) -> usize {
        let flushed = self.slots[node.0].tx_queue.len();
        self.slots[node.0].tx_queue.clear();
        flushed
    }

    /// Oldest undelivered frame for `node`, if any.
    pub fn poll_rx(&mut self, node: NodeHandle) -> Option<(Tick, DataFrame)> {
        self.slots[node.0].mailbox.pop()
    }

    #[must_use]
    pub fn counters(&self, node: NodeHandle) -> ErrorCounters {
        self.slots[node.0].counters
    }

    #[must_use]
    pub fn node_state(&self, node: NodeHandle) -> NodeState {
        self.slots[node.0].counters.state()
    }

    #[must_use]
    pub fn overflow_count(&self, node: NodeHandle) -> u64 {
        self.slots[node.0].mailbox.overflow_count()
    }

    /// Arms a one-shot error injection: the next transmission of `target` by
    /// any node *other than* `injector` is destroyed mid-frame. Arming the
    /// same pair twice is a no-op; the injection stays armed until it fires
    /// or is disarmed.
    pub fn inject_error(&mut self, injector: NodeHandle, target: FrameId) {
        assert!(injector.0 < self.slots.len(), "inject_error from unattached handle");
        let injection = Injection { injector, target };
        if !self.injections.contains(&injection) {
            self.injections.push(injection);
        }
    }

    /// Removes a previously armed injection, if present.
    pub fn disarm_error(&mut self, injector: NodeHandle, target: FrameId) {
        self.injections.retain(|i| !(i.injector == injector && i.target == target));
    }

    #[must_use]
    pub fn armed_injections(&self, injector: NodeHandle) -> Vec<FrameId> {
        self.injections
            .iter()
            .filter(|i| i.injector == injector)
            .map(|i| i.target)
            .collect()
    }

    /// One frame slot with the default idle advance.
    pub fn step(&mut self) -> Vec<BusEvent> {
        self.step_deadline(self.now + IDLE_STEP_BITS)
    }

    /// One frame slot. If nothing is pending the clock jumps straight to
    /// `deadline` (never backwards) and a single `BusIdle` event is emitted;
    /// otherwise the slot runs to completion even past the deadline.
    pub fn step_deadline(&mut self, deadline: Tick) -> Vec<BusEvent> {
        let mut events = Vec::new();
        let slot_start = self.now;

        let contenders: Vec<(usize, Tick, DataFrame)> = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, slot)| slot.is_active())
            .filter_map(|(i, slot)| slot.tx_queue.front().map(|&(arrival, f)| (i, arrival, f)))
            .collect();

        if contenders.is_empty() {
            if deadline > self.now {
                self.now = deadline;
            }
            events.push(BusEvent {
                time: self.now,
                kind: BusEventKind::BusIdle,
                frame: None,
                source: None,
            });
            return events;
        }

        let min_arb = contenders
            .iter()
            .map(|(_, _, f)| f.arbitration_value())
            .min()
            .expect("contenders is non-empty");
        let mut winners: Vec<(usize, Tick, DataFrame)> = contenders
            .into_iter()
            .filter(|(_, _, f)| f.arbitration_value() == min_arb)
            .collect();

        // Equal identifiers cannot be told apart by arbitration. Whoever
        // queued first had already driven its start bit; later arrivals see
        // a busy wire and hold off (no error, no penalty, they simply wait
        // their turn as receivers of this slot). Only frames handed over at
        // the same tick truly start together.
        if winners.len() > 1 {
            let earliest = winners
                .iter()
                .map(|&(_, arrival, _)| arrival)
                .min()
                .expect("winners is non-empty");
            winners.retain(|&(_, arrival, _)| arrival == earliest);
        }
        let mut winners: Vec<(usize, DataFrame)> =
            winners.into_iter().map(|(i, _, f)| (i, f)).collect();

        let identical = winners.windows(2).all(|pair| pair[0].1 == pair[1].1);
        let mut late_backoffs: Vec<(usize, DataFrame)> = Vec::new();
        if winners.len() > 1 && !identical {
            let any_active_flag = winners
                .iter()
                .any(|&(i, _)| self.slots[i].counters.state() == NodeState::ErrorActive);
            if any_active_flag {
                // Same arbitration field, different bodies: every transmitter
                // sees bit errors once the payloads diverge, and at least one
                // answers with an active (dominant) error flag that wrecks
                // the slot for all of them. Nobody drops its frame, so this
                // repeats until the flag senders turn error-passive.
                let time = slot_start + ERROR_SIGNAL_OFFSET;
                events.push(BusEvent {
                    time,
                    kind: BusEventKind::ProtocolViolation,
                    frame: None,
                    source: None,
                });
                for &(i, frame) in &winners {
                    events.push(BusEvent {
                        time,
                        kind: BusEventKind::FrameDestroyed,
                        frame: Some(frame),
                        source: Some(NodeHandle(i)),
                    });
                    self.penalize_transmitter(i);
                }
                self.bump_receive_errors(&winners);
                self.now = slot_start + ERROR_SLOT_BITS;
                return events;
            }
            // Every collider is error-passive: passive error flags are
            // recessive and cannot corrupt the wire anymore, so the frame
            // whose first differing bit is dominant completes while the
            // others back off mid-frame, keeping their frames queued like
            // any other lost arbitration. This is how a duplicate-identifier
            // standoff settles on a real wire instead of looping forever.
            let dominant = winners
                .iter()
                .copied()
                .min_by_key(|&(i, f)| {
                    let image: Vec<u8> = encode_frame(&f)
                        .iter()
                        .map(|b| u8::from(b == Bit::Recessive))
                        .collect();
                    (image, i)
                })
                .expect("winners is non-empty");
            late_backoffs = winners
                .iter()
                .copied()
                .filter(|&(i, _)| i != dominant.0)
                .collect();
            winners = vec![dominant];
        }

        let (lead, frame) = winners[0];
        events.push(BusEvent {
            time: slot_start,
            kind: BusEventKind::ArbitrationWon,
            frame: Some(frame),
            source: Some(NodeHandle(lead)),
        });
        for &(i, lost) in &late_backoffs {
            events.push(BusEvent {
                time: slot_start + ERROR_SIGNAL_OFFSET,
                kind: BusEventKind::FrameDestroyed,
                frame: Some(lost),
                source: Some(NodeHandle(i)),
            });
            self.penalize_transmitter(i);
        }

        let is_winner = |i: usize| winners.iter().any(|&(w, _)| w == i);
        let fired: Vec<Injection> = self
            .injections
            .iter()
            .copied()
            .filter(|inj| {
                inj.target == frame.id()
                    && !is_winner(inj.injector.0)
                    && self.slots[inj.injector.0].is_active()
            })
            .collect();

        if !fired.is_empty() {
            let time = slot_start + ERROR_SIGNAL_OFFSET;
            for inj in &fired {
                events.push(BusEvent {
                    time,
                    kind: BusEventKind::ErrorFrame,
                    frame: None,
                    source: Some(inj.injector),
                });
            }
            events.push(BusEvent {
                time,
                kind: BusEventKind::FrameDestroyed,
                frame: Some(frame),
                source: Some(NodeHandle(lead)),
            });
            self.injections.retain(|i| !fired.contains(i));
            for &(i, _) in &winners {
                self.penalize_transmitter(i);
            }
            self.bump_receive_errors(&winners);
            self.now = slot_start + ERROR_SLOT_BITS;
            return events;
        }

        let image_len = encode_frame(&frame).len() as Tick;
        let acknowledged = self
            .slots
            .iter()
            .enumerate()
            .any(|(i, slot)| !is_winner(i) && slot.is_active());

        if acknowledged {
            let delivered_at = slot_start + image_len;
            events.push(BusEvent {
                time: delivered_at,
                kind: BusEventKind::FrameDelivered,
                frame: Some(frame),
                source: Some(NodeHandle(lead)),
            });
            for (i, slot) in self.slots.iter_mut().enumerate() {
                if is_winner(i) || !slot.is_active() {
                    continue;
                }
                slot.counters.receive_errors = slot.counters.receive_errors.saturating_sub(1);
                if slot.filter.accepts(frame.id()) {
                    slot.mailbox.push(delivered_at, frame);
                }
            }
            for &(i, _) in &winners {
                self.slots[i].tx_queue.pop_front();
                self.slots[i].counters.transmit_errors =
                    self.slots[i].counters.transmit_errors.saturating_sub(1);
            }
            self.now = delivered_at + INTERFRAME_BITS;
        } else {
            // No other active node: nothing drives the ACK slot dominant, so
            // the transmitter treats the attempt as failed and will retry.
            events.push(BusEvent {
                time: slot_start + image_len,
                kind: BusEventKind::FrameDestroyed,
                frame: Some(frame),
                source: Some(NodeHandle(lead)),
            });
            for &(i, _) in &winners {
                self.penalize_transmitter(i);
            }
            self.now = slot_start + image_len + INTERFRAME_BITS;
        }
        events
    }

    fn penalize_transmitter(&mut self, index: usize) {
        let counters = &mut self.slots[index].counters;
        counters.transmit_errors =
            (counters.transmit_errors + TX_ERROR_PENALTY).min(BUS_OFF_THRESHOLD);
        if counters.state() == NodeState::BusOff {
            // A bus-off node abandons everything it had queued.
            self.slots[index].tx_queue.clear();
        }
    }

    fn bump_receive_errors(&mut self, winners: &[(usize, DataFrame)]) {
        for (i, slot) in self.slots.iter_mut().enumerate() {
            if winners.iter().any(|&(w, _)| w == i) || !slot.is_active() {
                continue;
            }
            slot.counters.receive_errors = slot.counters.receive_errors.saturating_add(1).min(255);
        }
    }
}
