//! Attack toolkit: a single promiscuous bus attachment that can listen,
//! inject, destroy, and replay traffic inside scheduled time windows.
//!
//! The attacker is just another node; everything it does rides the same
//! arbitration, acknowledgment, and fault-confinement rules as the genuine
//! modules. Its one structural advantage is a promiscuous acceptance filter,
//! so its capture log sees every delivered frame.
//!
//! Primitives:
//! - **eavesdrop**: pure capture inside a window (capture actually runs
//!   continuously; the window just scopes what gets reported),
//! - **spoof**: emit a fixed frame on a fixed period,
//! - **flood**: saturate the wire with the highest-priority identifier,
//! - **targeted block**: destroy every transmission of chosen identifiers
//!   with injected error flags, re-armed until the window closes,
//! - **replay**: re-send previously captured traffic, time-compressed to
//!   fit the window,
//! - **block-and-spoof**: infer the identifier map, jam the board's command
//!   channels, and issue forged commands in its place,
//! - **sensor spoof**: infer where a sensor reports, measure its genuine
//!   cadence, and overwrite its readings several times per genuine beat.
//!
//! Everything is deterministic given the seed: the only randomness is a
//! small per-run emission phase offset drawn once at attach time.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bus::{NodeHandle, Tick, VirtualBus};
use crate::frame::{DataFrame, FrameId};
use crate::node::{AcceptanceFilter, Mailbox};
use crate::plant::wire::{self, Command, RegistrationResponse};
use crate::plant::{Direction, ModuleKind, Topology, REGISTRATION_WINDOW_TICKS};

/// Largest emission phase offset (in bit-times) the seed can produce.
pub const MAX_PHASE_JITTER: Tick = 64;

/// Everything the attacker has overheard, in delivery order.
#[derive(Clone, Debug, Default)]
pub struct TrafficLog {
    pub records: Vec<(Tick, DataFrame)>,
}

impl TrafficLog {
    #[must_use]
    pub fn len(&self) -> usize {
        self.records.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    #[must_use]
    pub fn distinct_ids(&self) -> BTreeSet<FrameId> {
        self.records.iter().map(|(_, f)| f.id()).collect()
    }

    /// Records whose delivery time falls inside `window`.
    #[must_use]
    pub fn in_window(&self, window: Window) -> TrafficLog {
        TrafficLog {
            records: self
                .records
                .iter()
                .filter(|(t, _)| window.contains(*t))
                .copied()
                .collect(),
        }
    }
}

/// Half-open activity interval in bit-times: active while
/// `start <= now < end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: Tick,
    pub end: Tick,
}

impl Window {
    #[must_use]
    pub fn new(start: Tick, end: Tick) -> Window {
        assert!(end > start, "window must have positive duration");
        Window { start, end }
    }

    #[must_use]
    pub fn contains(&self, t: Tick) -> bool {
        t >= self.start && t < self.end
    }

    #[must_use]
    pub fn duration(&self) -> Tick {
        self.end - self.start
    }
}

/// What the attacker believes one identifier is for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdMapEntry {
    /// `None` when only the traffic pattern is known, not the module class.
    pub kind: Option<ModuleKind>,
    pub direction: Direction,
    /// 1.0 for conclusions read straight out of a registration exchange,
    /// 0.5 for periodicity-based guesses.
    pub confidence: f64,
}

/// Inferred wiring of the bus: identifier to role.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMap {
    pub entries: BTreeMap<FrameId, IdMapEntry>,
}

impl IdMap {
    /// Identifier mapped to `kind` flowing in `direction`, if known.
    #[must_use]
    pub fn find(&self, kind: ModuleKind, direction: Direction) -> Option<FrameId> {
        self.entries.iter().find_map(|(id, e)| {
            (e.kind == Some(kind) && e.direction == direction).then_some(*id)
        })
    }

    /// What a perfect inference would produce for `topology`: every
    /// peripheral's two identifiers plus the board's command channel, all at
    /// full confidence. The board's own status identifier never carries
    /// traffic, so no observer could learn it and it is not included.
    #[must_use]
    pub fn ground_truth(topology: &Topology) -> IdMap {
        let mut entries = BTreeMap::new();
        entries.insert(
            topology.board().command_id,
            IdMapEntry {
                kind: Some(ModuleKind::MainBoard),
                direction: Direction::Command,
                confidence: 1.0,
            },
        );
        for desc in topology.peripherals() {
            entries.insert(
                desc.command_id,
                IdMapEntry { kind: Some(desc.kind), direction: Direction::Command, confidence: 1.0 },
            );
            entries.insert(
                desc.status_id,
                IdMapEntry { kind: Some(desc.kind), direction: Direction::Status, confidence: 1.0 },
            );
        }
        IdMap { entries }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InferError {
    #[error("capture contains no enumeration exchange to learn identifiers from")]
    IncompleteCapture,
}

/// Builds an identifier map from captured traffic.
///
/// The registration exchange is the jackpot: the enumeration broadcast
/// names the board's command channel, and every response names its sender's
/// class, command identifier, and (implicitly, by where it appears) status
/// identifier, all at confidence 1.0. Identifiers outside that exchange
/// are classified as periodic status sources at confidence 0.5 when at
/// least three observations tick with gaps within 10% of their mean.
pub fn infer_id_map(log: &TrafficLog) -> Result<IdMap, InferError> {
    let (request_index, request_time, request_id) = log
        .records
        .iter()
        .enumerate()
        .find_map(|(i, (t, f))| {
            (!f.is_remote() && f.payload() == [wire::op::ENUMERATE]).then_some((i, *t, f.id()))
        })
        .ok_or(InferError::IncompleteCapture)?;

    let mut entries = BTreeMap::new();
    entries.insert(
        request_id,
        IdMapEntry {
            kind: Some(ModuleKind::MainBoard),
            direction: Direction::Command,
            confidence: 1.0,
        },
    );

    for (t, frame) in &log.records[request_index + 1..] {
        if *t > request_time + REGISTRATION_WINDOW_TICKS {
            break;
        }
        if frame.is_remote() || !RegistrationResponse::looks_like(frame.payload()) {
            continue;
        }
        if let Ok(response) = RegistrationResponse::decode(frame.payload()) {
            entries.insert(
                frame.id(),
                IdMapEntry {
                    kind: Some(response.kind),
                    direction: Direction::Status,
                    confidence: 1.0,
                },
            );
            entries.insert(
                response.command_id,
                IdMapEntry {
                    kind: Some(response.kind),
                    direction: Direction::Command,
                    confidence: 1.0,
                },
            );
        }
    }

    let mut observations: BTreeMap<FrameId, Vec<Tick>> = BTreeMap::new();
    for (t, frame) in &log.records {
        observations.entry(frame.id()).or_default().push(*t);
    }
    for (id, times) in observations {
        if entries.contains_key(&id) || times.len() < 3 {
            continue;
        }
        let gaps: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        if mean > 0.0 && gaps.iter().all(|g| (g - mean).abs() <= 0.1 * mean) {
            entries.insert(
                id,
                IdMapEntry { kind: None, direction: Direction::Status, confidence: 0.5 },
            );
        }
    }

    Ok(IdMap { entries })
}

/// One scheduled action.
#[derive(Clone, Debug, PartialEq)]
pub enum AttackKind {
    Eavesdrop,
    /// Emit `frame` every `period` bit-times.
    Spoof { frame: DataFrame, period: Tick },
    /// Keep the wire saturated with minimum-length frames on `id`
    /// (conventionally 0x000, which outranks everything in arbitration).
    Flood { id: FrameId },
    /// Destroy every transmission of these identifiers by other nodes.
    Block { ids: Vec<FrameId> },
    /// Re-send everything captured before the window opens (optionally
    /// filtered to `ids`), time-compressed to fit the window.
    Replay { ids: Vec<FrameId> },
    /// Infer the identifier map, jam the board's command channels, and send
    /// each forged command once in the board's place.
    BlockAndSpoof { commands: Vec<(ModuleKind, Command)> },
    /// Infer where `kind` reports status, measure its genuine cadence, and
    /// overwrite the reading `rate_multiplier` times faster.
    SensorSpoof { kind: ModuleKind, celsius: f64, rate_multiplier: u32 },
}

impl AttackKind {
    #[must_use]
    pub fn primitive_name(&self) -> &'static str {
        match self {
            AttackKind::Eavesdrop => "eavesdrop",
            AttackKind::Spoof { .. } => "spoof",
            AttackKind::Flood { .. } => "flood",
            AttackKind::Block { .. } => "targeted_block",
            AttackKind::Replay { .. } => "replay",
            AttackKind::BlockAndSpoof { .. } => "block_and_spoof",
            AttackKind::SensorSpoof { .. } => "sensor_spoof",
        }
    }
}

/// Evidence about one scheduled attack after (or during) a run.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackExecution {
    pub primitive: &'static str,
    pub window: Window,
    /// Identifiers the attack ended up aimed at (resolved, not requested).
    pub targets: Vec<FrameId>,
    /// Frames this attack handed to the bus controller.
    pub frames_sent: u64,
    /// Why the attack under-delivered, when it did.
    pub note: Option<String>,
}

struct Scheduled {
    window: Window,
    kind: AttackKind,
    started: bool,
    finished: bool,
    next_emit: Tick,
    emit_frame: Option<DataFrame>,
    emit_period: Tick,
    armed: Vec<FrameId>,
    replay_queue: VecDeque<(Tick, DataFrame)>,
    targets: Vec<FrameId>,
    frames_sent: u64,
    note: Option<String>,
}

impl Scheduled {
    fn new(window: Window, kind: AttackKind) -> Scheduled {
        Scheduled {
            window,
            kind,
            started: false,
            finished: false,
            next_emit: 0,
            emit_frame: None,
            emit_period: 1,
            armed: Vec::new(),
            replay_queue: VecDeque::new(),
            targets: Vec::new(),
            frames_sent: 0,
            note: None,
        }
    }
}

/// The attacking node. Attach once, schedule any number of (possibly
/// overlapping) attacks, then let the driving loop call
/// [`Attacker::service`] after every bus step.
pub struct Attacker {
    handle: NodeHandle,
    log: TrafficLog,
    fallback_period: Tick,
    phase_jitter: Tick,
    attacks: Vec<Scheduled>,
}

impl Attacker {
    /// Attaches a promiscuous node. `seed` fixes the emission phase offset;
    /// `fallback_period` is the telemetry cadence assumed when a sensor
    /// spoof has not observed enough genuine traffic to measure one.
    pub fn attach(bus: &mut VirtualBus, seed: u64, fallback_period: Tick) -> Attacker {
        // A deep mailbox so a busy wire between services never costs capture.
        let handle = bus.attach_with_mailbox(
            AcceptanceFilter::promiscuous(),
            Mailbox::with_capacity(4_096),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase_jitter = 1 + (rng.next_u64() % MAX_PHASE_JITTER);
        Attacker {
            handle,
            log: TrafficLog::default(),
            fallback_period: fallback_period.max(1),
            phase_jitter,
            attacks: Vec::new(),
        }
    }

    #[must_use]
    pub fn handle(&self) -> NodeHandle {
        self.handle
    }

    #[must_use]
    pub fn log(&self) -> &TrafficLog {
        &self.log
    }

    /// Capture restricted to `window`, for reporting an eavesdrop result.
    #[must_use]
    pub fn eavesdrop(&self, window: Window) -> TrafficLog {
        self.log.in_window(window)
    }

    pub fn schedule(&mut self, window: Window, kind: AttackKind) {
        self.attacks.push(Scheduled::new(window, kind));
    }

    /// Post-hoc evidence for every scheduled attack.
    #[must_use]
    pub fn executions(&self) -> Vec<AttackExecution> {
        self.attacks
            .iter()
            .map(|a| AttackExecution {
                primitive: a.kind.primitive_name(),
                window: a.window,
                targets: a.targets.clone(),
                frames_sent: a.frames_sent,
                note: a.note.clone(),
            })
            .collect()
    }

    /// Next tick at which this attacker needs the clock to stop. `Tick::MAX`
    /// when it has nothing pending.
    #[must_use]
    pub fn next_due(&self, now: Tick) -> Tick {
        let mut due = Tick::MAX;
        for atk in &self.attacks {
            if atk.finished {
                continue;
            }
            if now < atk.window.start {
                due = due.min(atk.window.start);
                continue;
            }
            due = due.min(atk.window.end);
            if now >= atk.window.end {
                continue;
            }
            match atk.kind {
                AttackKind::Spoof { .. } | AttackKind::SensorSpoof { .. } => {
                    due = due.min(atk.next_emit);
                }
                AttackKind::Replay { .. } => {
                    if let Some((t, _)) = atk.replay_queue.front() {
                        due = due.min(*t);
                    }
                }
                // Flood re-queues on every service; block re-arms likewise.
                AttackKind::Flood { .. } => due = due.min(now + 1),
                AttackKind::Eavesdrop
                | AttackKind::Block { .. }
                | AttackKind::BlockAndSpoof { .. } => {}
            }
        }
        if due == Tick::MAX {
            Tick::MAX
        } else {
            due.max(now + 1)
        }
    }

    /// Catches the attacker up to the bus clock: drains the capture
    /// mailbox, opens/closes windows, and performs whatever each active
    /// attack owes the wire.
    pub fn service(&mut self, bus: &mut VirtualBus) {
        while let Some((t, frame)) = bus.poll_rx(self.handle) {
            self.log.records.push((t, frame));
        }
        let now = bus.now();
        for atk in &mut self.attacks {
            if atk.finished {
                continue;
            }
            if now >= atk.window.end {
                if atk.started {
                    for id in &atk.armed {
                        bus.disarm_error(self.handle, *id);
                    }
                    if matches!(atk.kind, AttackKind::Flood { .. }) {
                        bus.abort_tx(self.handle);
                    }
                }
                atk.finished = true;
                continue;
            }
            if now < atk.window.start {
                continue;
            }
            if !atk.started {
                atk.started = true;
                Self::start_attack(
                    atk,
                    &self.log,
                    self.phase_jitter,
                    self.fallback_period,
                    self.handle,
                    bus,
                );
            }
            Self::drive_attack(atk, self.handle, bus, now);
        }
    }

    fn start_attack(
        atk: &mut Scheduled,
        log: &TrafficLog,
        phase_jitter: Tick,
        fallback_period: Tick,
        handle: NodeHandle,
        bus: &mut VirtualBus,
    ) {
        match atk.kind.clone() {
            AttackKind::Eavesdrop => {}
            AttackKind::Spoof { frame, period } => {
                atk.emit_frame = Some(frame);
                atk.emit_period = period.max(1);
                atk.next_emit = atk.window.start + phase_jitter;
                atk.targets = vec![frame.id()];
            }
            AttackKind::Flood { id } => {
                match DataFrame::data(id, &[]) {
                    Ok(frame) => atk.emit_frame = Some(frame),
                    Err(e) => atk.note = Some(format!("cannot build flood frame: {e}")),
                }
                atk.targets = vec![id];
            }
            AttackKind::Block { ids } => {
                atk.armed = ids.clone();
                atk.targets = ids;
            }
            AttackKind::Replay { ids } => {
                let pool: Vec<(Tick, DataFrame)> = log
                    .records
                    .iter()
                    .filter(|(t, f)| {
                        *t < atk.window.start && (ids.is_empty() || ids.contains(&f.id()))
                    })
                    .copied()
                    .collect();
                if pool.is_empty() {
                    atk.note = Some("nothing captured to replay".to_string());
                    return;
                }
                let first = pool[0].0;
                let span = pool[pool.len() - 1].0 - first;
                let budget = atk.window.duration().saturating_sub(2);
                for (t, frame) in &pool {
                    let offset = if span == 0 {
                        0
                    } else {
                        (u128::from(*t - first) * u128::from(budget) / u128::from(span)) as Tick
                    };
                    atk.replay_queue.push_back((atk.window.start + 1 + offset, *frame));
                }
                atk.targets = pool
                    .iter()
                    .map(|(_, f)| f.id())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
            }
            AttackKind::BlockAndSpoof { commands } => {
                let map = match infer_id_map(log) {
                    Ok(map) => map,
                    Err(e) => {
                        atk.note = Some(format!("identifier inference failed: {e}"));
                        return;
                    }
                };
                let Some(board_cmd) = map.find(ModuleKind::MainBoard, Direction::Command) else {
                    atk.note = Some("board command channel not identified".to_string());
                    return;
                };
                let mut armed: BTreeSet<FrameId> = BTreeSet::new();
                armed.insert(board_cmd);
                let mut forged = Vec::new();
                let mut unresolved = Vec::new();
                for (kind, command) in &commands {
                    match map.find(*kind, Direction::Command) {
                        Some(id) => {
                            armed.insert(id);
                            forged.push((id, command.clone()));
                        }
                        None => unresolved.push(kind.label()),
                    }
                }
                if !unresolved.is_empty() {
                    atk.note =
                        Some(format!("no command channel found for: {}", unresolved.join(", ")));
                }
                atk.armed = armed.iter().copied().collect();
                atk.targets = atk.armed.clone();
                // Jam first, then speak with the board's voice. The
                // injections never fire on this node's own frames.
                for id in &atk.armed {
                    bus.inject_error(handle, *id);
                }
                for (id, command) in forged {
                    if let Ok(frame) = DataFrame::data(id, &wire::encode_command(&command)) {
                        if bus.queue_tx(handle, frame).is_ok() {
                            atk.frames_sent += 1;
                        }
                    }
                }
            }
            AttackKind::SensorSpoof { kind, celsius, rate_multiplier } => {
                let map = match infer_id_map(log) {
                    Ok(map) => map,
                    Err(e) => {
                        atk.note = Some(format!("identifier inference failed: {e}"));
                        return;
                    }
                };
                let Some(status_id) = map.find(kind, Direction::Status) else {
                    atk.note = Some(format!("no status channel found for {}", kind.label()));
                    return;
                };
                let seen: Vec<Tick> = log
                    .records
                    .iter()
                    .filter(|(t, f)| f.id() == status_id && *t < atk.window.start)
                    .map(|(t, _)| *t)
                    .collect();
                let genuine_period = if seen.len() >= 2 {
                    seen[seen.len() - 1] - seen[seen.len() - 2]
                } else {
                    fallback_period
                };
                atk.emit_period = (genuine_period / Tick::from(rate_multiplier.max(1))).max(1);
                let payload = wire::encode_status(&wire::Status::Temp { celsius });
                match DataFrame::data(status_id, &payload) {
                    Ok(frame) => atk.emit_frame = Some(frame),
                    Err(e) => atk.note = Some(format!("cannot build status frame: {e}")),
                }
                atk.next_emit = atk.window.start + phase_jitter;
                atk.targets = vec![status_id];
            }
        }
    }

    fn drive_attack(atk: &mut Scheduled, handle: NodeHandle, bus: &mut VirtualBus, now: Tick) {
        match &atk.kind {
            AttackKind::Eavesdrop => {}
            AttackKind::Spoof { .. } | AttackKind::SensorSpoof { .. } => {
                let Some(frame) = atk.emit_frame else { return };
                while atk.next_emit <= now {
                    if bus.queue_tx(handle, frame).is_ok() {
                        atk.frames_sent += 1;
                    }
                    atk.next_emit += atk.emit_period;
                }
            }
            AttackKind::Flood { .. } => {
                let Some(frame) = atk.emit_frame else { return };
                // Two in the queue guarantee back-to-back arbitration wins
                // with no idle bit between slots.
                while bus.pending_tx(handle) < 2 {
                    if bus.queue_tx(handle, frame).is_err() {
                        return;
                    }
                    atk.frames_sent += 1;
                }
            }
            AttackKind::Block { .. } | AttackKind::BlockAndSpoof { .. } => {
                // Injections are one-shot; re-arm whatever fired.
                for id in &atk.armed {
                    bus.inject_error(handle, *id);
                }
            }
            AttackKind::Replay { .. } => {
                while atk.replay_queue.front().is_some_and(|(t, _)| *t <= now) {
                    let (_, frame) = atk.replay_queue.pop_front().expect("front checked");
                    if bus.queue_tx(handle, frame).is_ok() {
                        atk.frames_sent += 1;
                    }
                }
            }
        }
    }
}
