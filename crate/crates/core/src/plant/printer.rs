//! The firmware side of the printer: one main board controller and one
//! controller per peripheral module, all talking over a [`VirtualBus`].
//!
//! Call [`Printer::service`] whenever the bus clock has moved: it catches up
//! physics, drains every node's mailbox, and queues whatever traffic is due.
//! [`Printer::next_due`] reports the next tick at which the printer wants to
//! act, so a driving loop can jump the bus clock straight there when the
//! wire is idle.
//!
//! Boot sequence: the board broadcasts an enumeration request; every module
//! answers with a registration response naming its kind and command
//! identifier; the board closes the registration window after a fixed wait
//! and logs a diagnostic for anyone missing. Steady state: modules emit
//! periodic status telemetry, the board displays the hotend temperature it
//! hears and trips a latched fault (plus a one-shot halt broadcast) if a
//! report leaves the plausible range. The board trusts the wire completely;
//! it has no way to tell a module's frame from anyone else's.

use std::collections::{BTreeMap, VecDeque};

use crate::bus::{NodeHandle, Tick, VirtualBus};
use crate::frame::{DataFrame, FrameId};
use crate::node::AcceptanceFilter;

use super::wire::{self, Command, RegistrationResponse, Status};
use super::{
    secs_to_ticks, ticks_to_secs, Axis, Direction, ModuleDescriptor, ModuleKind, PlantConfig,
    PlantWorld, Topology,
};

/// Reported hotend temperatures outside this range latch the board fault.
pub const SAFE_TEMP_MIN_C: f64 = 0.0;
pub const SAFE_TEMP_MAX_C: f64 = 300.0;

/// Conditions the main board records for the operator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    /// A registration response arrived for a kind already registered, or
    /// after the window closed.
    DuplicateRegistration { status_id: FrameId, at: Tick },
    /// The window closed with modules still unheard from.
    RegistrationTimeout { missing: Vec<ModuleKind>, at: Tick },
    /// A frame on a known status identifier failed to parse.
    MalformedStatus { id: FrameId, opcode: u8, at: Tick },
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnostic::DuplicateRegistration { status_id, at } => {
                write!(f, "duplicate registration response on {status_id} at tick {at}")
            }
            Diagnostic::RegistrationTimeout { missing, at } => {
                let names: Vec<&str> = missing.iter().map(|k| k.label()).collect();
                write!(f, "registration window closed at tick {at} missing: {}", names.join(", "))
            }
            Diagnostic::MalformedStatus { id, opcode, at } => {
                write!(f, "malformed status on {id} (opcode {opcode:#04x}) at tick {at}")
            }
        }
    }
}

/// Operator-visible state of the main board.
#[derive(Clone, Debug, Default)]
pub struct MainBoardState {
    /// Modules that answered enumeration, keyed by kind.
    pub registered: BTreeMap<ModuleKind, ModuleDescriptor>,
    /// The hotend temperature shown on the front panel: simply the last
    /// value heard on the wire.
    pub displayed_temp_c: f64,
    /// The target the board itself last commanded.
    pub commanded_target_c: f64,
    /// Latched safety fault. Never clears on its own.
    pub fault: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl MainBoardState {
    /// Screens one reported temperature. Out-of-range values latch the
    /// fault; the return value is the (possibly just-set) latch.
    pub fn fault_check(&mut self, reported_c: f64) -> bool {
        if !(SAFE_TEMP_MIN_C..=SAFE_TEMP_MAX_C).contains(&reported_c) {
            self.fault = true;
        }
        self.fault
    }
}

/// One peripheral module's controller-side state.
#[derive(Clone, Debug)]
pub struct Peripheral {
    pub descriptor: ModuleDescriptor,
    pub handle: NodeHandle,
    /// Set by a firmware push; nothing clears it.
    pub firmware_tainted: bool,
    /// Latched by a halt broadcast. Actuation commands are ignored while
    /// set; telemetry keeps flowing.
    pub halted: bool,
    /// Commands on this module's identifier that failed to parse.
    pub malformed_commands: u32,
    next_telemetry: Option<Tick>,
    camera_sequence: u8,
    last_limit_sent: Option<(bool, bool)>,
}

/// Out-of-band physical happenings a scenario can schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorldEvent {
    /// An operator slaps the physical kill switch on the safety module.
    PressKillSwitch,
}

/// The whole printer: world plus every controller on the bus.
pub struct Printer {
    config: PlantConfig,
    topology: Topology,
    world: PlantWorld,
    board_handle: NodeHandle,
    board: MainBoardState,
    peripherals: Vec<Peripheral>,
    enumerate_queued: bool,
    registration_closed: bool,
    registration_deadline: Tick,
    halt_broadcast_sent: bool,
    homing_axis: Option<Axis>,
    setup_queue: VecDeque<(Tick, ModuleKind, Command)>,
    world_events: VecDeque<(Tick, WorldEvent)>,
    next_plant_tick: Tick,
    last_plant_tick: Tick,
}

impl Printer {
    /// Attaches the board and every peripheral to `bus` (board first, then
    /// peripherals in topology order) and returns the assembled printer.
    pub fn new(topology: Topology, config: PlantConfig, bus: &mut VirtualBus) -> Printer {
        let world = PlantWorld::new(&config);
        let status_ids = topology.status_ids();
        let board_filter = if status_ids.is_empty() {
            AcceptanceFilter::exact(topology.board().status_id)
        } else {
            AcceptanceFilter::spanning(&status_ids)
        };
        let board_handle = bus.attach(board_filter);

        let broadcast_id = topology.board().command_id;
        let mut peripherals = Vec::new();
        for desc in topology.peripherals() {
            let filter = AcceptanceFilter::spanning(&[broadcast_id, desc.command_id]);
            let handle = bus.attach(filter);
            let wants_telemetry = !matches!(desc.kind, ModuleKind::LimitSwitch(_));
            let next_telemetry = wants_telemetry.then(|| {
                let mut t = config.telemetry_period;
                while t <= config.registration_window {
                    t += config.telemetry_period;
                }
                t
            });
            let initial_limits = match desc.kind {
                ModuleKind::LimitSwitch(axis) => {
                    let a = world.axis(axis);
                    Some((a.at_min_stop, a.at_max_stop))
                }
                _ => None,
            };
            peripherals.push(Peripheral {
                descriptor: *desc,
                handle,
                firmware_tainted: false,
                halted: false,
                malformed_commands: 0,
                next_telemetry,
                camera_sequence: 0,
                last_limit_sent: initial_limits,
            });
        }

        Printer {
            registration_deadline: config.registration_window,
            next_plant_tick: config.plant_step,
            last_plant_tick: 0,
            config,
            topology,
            world,
            board_handle,
            board: MainBoardState::default(),
            peripherals,
            enumerate_queued: false,
            registration_closed: false,
            halt_broadcast_sent: false,
            homing_axis: None,
            setup_queue: VecDeque::new(),
            world_events: VecDeque::new(),
        }
    }

    /// Queues a command the board will send to `target` once `at` is
    /// reached (and registration has closed).
    pub fn schedule_setup(&mut self, at: Tick, target: ModuleKind, command: Command) {
        let pos = self.setup_queue.partition_point(|(t, _, _)| *t <= at);
        self.setup_queue.insert(pos, (at, target, command));
    }

    /// Queues a physical event for `at`.
    pub fn schedule_world_event(&mut self, at: Tick, event: WorldEvent) {
        let pos = self.world_events.partition_point(|(t, _)| *t <= at);
        self.world_events.insert(pos, (at, event));
    }

    /// Catches every controller up to the bus clock: physics, mailboxes,
    /// then anything newly due. Safe to call repeatedly at the same tick.
    pub fn service(&mut self, bus: &mut VirtualBus) {
        let now = bus.now();
        self.advance_physics(now);
        self.apply_world_events(now);
        self.board_service(bus, now);
        self.peripheral_service(bus, now);
    }

    /// Next tick at which this printer has scheduled work. Always strictly
    /// after `now` once `service` has run at `now`.
    #[must_use]
    pub fn next_due(&self, now: Tick) -> Tick {
        let mut due = self.next_plant_tick;
        if !self.registration_closed {
            due = due.min(self.registration_deadline);
        }
        for p in &self.peripherals {
            if let Some(t) = p.next_telemetry {
                due = due.min(t);
            }
        }
        if self.registration_closed {
            if let Some((t, _, _)) = self.setup_queue.front() {
                due = due.min(*t);
            }
        }
        if let Some((t, _)) = self.world_events.front() {
            due = due.min(*t);
        }
        due.max(now + 1)
    }

    #[must_use]
    pub fn world(&self) -> &PlantWorld {
        &self.world
    }

    #[must_use]
    pub fn board(&self) -> &MainBoardState {
        &self.board
    }

    #[must_use]
    pub fn board_handle(&self) -> NodeHandle {
        self.board_handle
    }

    #[must_use]
    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    #[must_use]
    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    #[must_use]
    pub fn peripheral(&self, kind: ModuleKind) -> Option<&Peripheral> {
        self.peripherals.iter().find(|p| p.descriptor.kind == kind)
    }

    #[must_use]
    pub fn peripherals(&self) -> &[Peripheral] {
        &self.peripherals
    }

    /// True once the window has closed with every topology module heard.
    #[must_use]
    pub fn registration_complete(&self) -> bool {
        self.registration_closed
            && self
                .topology
                .peripherals()
                .all(|d| self.board.registered.contains_key(&d.kind))
    }

    /// Seconds of simulated time at `tick` under this printer's bitrate.
    #[must_use]
    pub fn tick_as_secs(&self, tick: Tick) -> f64 {
        ticks_to_secs(tick, self.config.bitrate)
    }

    /// Tick count for `secs` of simulated time under this printer's bitrate.
    #[must_use]
    pub fn secs_as_ticks(&self, secs: f64) -> Tick {
        secs_to_ticks(secs, self.config.bitrate)
    }

    fn advance_physics(&mut self, now: Tick) {
        while self.next_plant_tick <= now {
            let dt = ticks_to_secs(self.next_plant_tick - self.last_plant_tick, self.config.bitrate);
            self.world.step(dt, &self.config);
            self.last_plant_tick = self.next_plant_tick;
            self.next_plant_tick += self.config.plant_step;
        }
    }

    fn apply_world_events(&mut self, now: Tick) {
        while self.world_events.front().is_some_and(|(t, _)| *t <= now) {
            let (_, event) = self.world_events.pop_front().expect("front checked");
            match event {
                WorldEvent::PressKillSwitch => self.world.kill_switch_pressed = true,
            }
        }
    }

    fn board_send(&mut self, bus: &mut VirtualBus, id: FrameId, payload: &[u8]) {
        if let Ok(frame) = DataFrame::data(id, payload) {
            // A bus-off board drops its traffic; nothing to do about it here.
            let _ = bus.queue_tx(self.board_handle, frame);
        }
    }

    fn board_service(&mut self, bus: &mut VirtualBus, now: Tick) {
        if !self.enumerate_queued {
            let broadcast = self.topology.board().command_id;
            self.board_send(bus, broadcast, &wire::encode_command(&Command::Enumerate));
            self.enumerate_queued = true;
        }

        while let Some((t, frame)) = bus.poll_rx(self.board_handle) {
            self.board_handle_frame(bus, t, frame);
        }

        if !self.registration_closed && now >= self.registration_deadline {
            self.registration_closed = true;
            let missing: Vec<ModuleKind> = self
                .topology
                .peripherals()
                .map(|d| d.kind)
                .filter(|k| !self.board.registered.contains_key(k))
                .collect();
            if !missing.is_empty() {
                self.board
                    .diagnostics
                    .push(Diagnostic::RegistrationTimeout { missing, at: now });
            }
        }

        if self.registration_closed {
            while self.setup_queue.front().is_some_and(|(t, _, _)| *t <= now) {
                let (_, target, command) = self.setup_queue.pop_front().expect("front checked");
                self.board_dispatch(bus, target, command);
            }
        }

        if self.board.fault && !self.halt_broadcast_sent {
            let broadcast = self.topology.board().command_id;
            self.board_send(bus, broadcast, &wire::encode_command(&Command::Halt));
            self.halt_broadcast_sent = true;
        }
    }

    fn board_dispatch(&mut self, bus: &mut VirtualBus, target: ModuleKind, command: Command) {
        let Some(desc) = self.topology.descriptor(target) else {
            return;
        };
        let command_id = desc.command_id;
        match &command {
            Command::Home { axis } => self.homing_axis = Some(*axis),
            Command::SetTargetTemp { celsius } => self.board.commanded_target_c = *celsius,
            _ => {}
        }
        self.board_send(bus, command_id, &wire::encode_command(&command));
    }

    fn board_handle_frame(&mut self, bus: &mut VirtualBus, at: Tick, frame: DataFrame) {
        if frame.is_remote() {
            return;
        }
        // Only channels the board's configuration lists as module status
        // channels are interpreted; anything else the filter let through is
        // ignored as wire noise.
        let Some((_, Direction::Status)) = self.topology.id_role(frame.id()) else {
            return;
        };
        let payload = frame.payload();
        if payload.is_empty() {
            return;
        }

        if RegistrationResponse::looks_like(payload) {
            match RegistrationResponse::decode(payload) {
                Ok(response) => {
                    let fresh = !self.registration_closed
                        && !self.board.registered.contains_key(&response.kind);
                    if fresh {
                        self.board.registered.insert(
                            response.kind,
                            ModuleDescriptor {
                                kind: response.kind,
                                command_id: response.command_id,
                                status_id: frame.id(),
                            },
                        );
                    } else {
                        self.board.diagnostics.push(Diagnostic::DuplicateRegistration {
                            status_id: frame.id(),
                            at,
                        });
                    }
                }
                Err(_) => self.board.diagnostics.push(Diagnostic::MalformedStatus {
                    id: frame.id(),
                    opcode: payload[0],
                    at,
                }),
            }
            return;
        }

        match wire::decode_status(payload) {
            Ok(Status::Temp { celsius }) => {
                self.board.displayed_temp_c = celsius;
                self.board.fault_check(celsius);
            }
            Ok(Status::Limit { axis, at_min, .. }) => {
                if at_min && self.homing_axis == Some(axis) {
                    self.homing_axis = None;
                    self.board_dispatch(bus, ModuleKind::MotionAxis(axis), Command::EndHome { axis });
                }
            }
            Ok(Status::Safety { kill_pressed, .. }) => {
                if kill_pressed {
                    self.board.fault = true;
                }
            }
            Ok(Status::Position { .. }) | Ok(Status::Camera { .. }) => {}
            Err(_) => self.board.diagnostics.push(Diagnostic::MalformedStatus {
                id: frame.id(),
                opcode: payload[0],
                at,
            }),
        }
    }

    fn peripheral_service(&mut self, bus: &mut VirtualBus, now: Tick) {
        for idx in 0..self.peripherals.len() {
            while let Some((_, frame)) = bus.poll_rx(self.peripherals[idx].handle) {
                self.peripheral_handle_frame(bus, idx, frame);
            }
            self.peripheral_emit_due(bus, idx, now);
        }
    }

    fn peripheral_handle_frame(&mut self, bus: &mut VirtualBus, idx: usize, frame: DataFrame) {
        if frame.is_remote() {
            return;
        }
        let desc = self.peripherals[idx].descriptor;
        let broadcast = frame.id() == self.topology.board().command_id;
        let unicast = frame.id() == desc.command_id;
        if !broadcast && !unicast {
            // Spanning filters over-approximate; drop the spillover.
            return;
        }
        match wire::decode_command(frame.payload()) {
            Err(_) => self.peripherals[idx].malformed_commands += 1,
            Ok(command) if broadcast => self.apply_broadcast(bus, idx, &command),
            Ok(command) => self.apply_unicast(idx, &command),
        }
    }

    fn apply_broadcast(&mut self, bus: &mut VirtualBus, idx: usize, command: &Command) {
        let desc = self.peripherals[idx].descriptor;
        match command {
            Command::Enumerate => {
                let response = RegistrationResponse {
                    kind: desc.kind,
                    command_id: desc.command_id,
                };
                let payload = response.encode();
                if let Ok(frame) = DataFrame::data(desc.status_id, &payload) {
                    let _ = bus.queue_tx(self.peripherals[idx].handle, frame);
                }
            }
            Command::Halt => {
                self.peripherals[idx].halted = true;
                match desc.kind {
                    // Heater off; the controller will coast the duty to zero.
                    ModuleKind::Hotend => self.world.hotend.target_c = 0.0,
                    ModuleKind::MotionAxis(axis) => {
                        self.world.axis_mut(axis).homing = false;
                    }
                    _ => {}
                }
            }
            // No other command is defined for the broadcast channel.
            _ => {}
        }
    }

    fn apply_unicast(&mut self, idx: usize, command: &Command) {
        let desc = self.peripherals[idx].descriptor;
        let halted = self.peripherals[idx].halted;
        match (desc.kind, command) {
            (ModuleKind::Hotend, Command::SetTargetTemp { celsius }) => {
                if !halted {
                    self.world.hotend.target_c = *celsius;
                }
            }
            (ModuleKind::Hotend, Command::SetFan { on }) => {
                self.world.hotend.fan_on = *on;
            }
            (ModuleKind::Hotend, Command::SetPid { kp, ki, kd }) => {
                self.world.hotend.params.kp = *kp;
                self.world.hotend.params.ki = *ki;
                self.world.hotend.params.kd = *kd;
            }
            (ModuleKind::MotionAxis(mine), Command::Move { axis, steps }) => {
                if mine == *axis && !halted {
                    let a = self.world.axis_mut(mine);
                    a.true_position =
                        (a.true_position + f64::from(*steps)).clamp(0.0, self.config.axis_travel);
                }
            }
            (ModuleKind::MotionAxis(mine), Command::Home { axis }) => {
                if mine == *axis && !halted {
                    let a = self.world.axis_mut(mine);
                    a.homing = true;
                    a.calibrated = false;
                }
            }
            (ModuleKind::MotionAxis(mine), Command::EndHome { axis }) => {
                if mine == *axis {
                    let a = self.world.axis_mut(mine);
                    a.homing = false;
                    a.origin_offset = a.true_position;
                    a.calibrated = true;
                }
            }
            (ModuleKind::SafetyModule, Command::SetFilter { on }) => {
                self.world.air_filter_on = *on;
            }
            (ModuleKind::SafetyModule, Command::KillSwitch) => {
                self.world.kill_switch_pressed = true;
            }
            (_, Command::Reflash { .. }) => {
                self.peripherals[idx].firmware_tainted = true;
            }
            // A command some other module class understands: ignore it.
            _ => {}
        }
    }

    fn peripheral_emit_due(&mut self, bus: &mut VirtualBus, idx: usize, now: Tick) {
        let desc = self.peripherals[idx].descriptor;

        if let Some(mut next) = self.peripherals[idx].next_telemetry {
            while next <= now {
                let status = self.telemetry_for(idx);
                let payload = wire::encode_status(&status);
                if let Ok(frame) = DataFrame::data(desc.status_id, &payload) {
                    let _ = bus.queue_tx(self.peripherals[idx].handle, frame);
                }
                next += self.config.telemetry_period;
            }
            self.peripherals[idx].next_telemetry = Some(next);
        }

        if let ModuleKind::LimitSwitch(axis) = desc.kind {
            let a = self.world.axis(axis);
            let flags = (a.at_min_stop, a.at_max_stop);
            if self.peripherals[idx].last_limit_sent != Some(flags) {
                let status = Status::Limit { axis, at_min: flags.0, at_max: flags.1 };
                if let Ok(frame) = DataFrame::data(desc.status_id, &wire::encode_status(&status)) {
                    let _ = bus.queue_tx(self.peripherals[idx].handle, frame);
                }
                self.peripherals[idx].last_limit_sent = Some(flags);
            }
        }
    }

    fn telemetry_for(&mut self, idx: usize) -> Status {
        match self.peripherals[idx].descriptor.kind {
            ModuleKind::Hotend => Status::Temp { celsius: self.world.hotend.temp_c },
            ModuleKind::MotionAxis(axis) => {
                let logical = self.world.axis(axis).logical_position();
                let steps = logical.round().clamp(f64::from(i32::MIN), f64::from(i32::MAX)) as i32;
                Status::Position { axis, steps }
            }
            ModuleKind::SafetyModule => Status::Safety {
                filter_on: self.world.air_filter_on,
                kill_pressed: self.world.kill_switch_pressed,
            },
            ModuleKind::CameraMonitor => {
                let sequence = self.peripherals[idx].camera_sequence;
                self.peripherals[idx].camera_sequence = sequence.wrapping_add(1);
                Status::Camera { sequence }
            }
            ModuleKind::LimitSwitch(_) | ModuleKind::MainBoard => {
                unreachable!("no periodic telemetry for this kind")
            }
        }
    }
}
