//! Canonical driving loop: one bus, one printer, optionally one attacker.
//!
//! The loop discipline is: service every controller, then let the bus run
//! one slot bounded by the earliest deadline anyone has. Controllers queue
//! traffic only during [`Harness::service`], so the bus clock can jump
//! across idle stretches without anyone missing a beat, which is what makes
//! minutes of simulated printing cost milliseconds of wall time.

use crate::attack::Attacker;
use crate::bus::{BusEvent, Tick, VirtualBus};
use crate::plant::{PlantConfig, Printer, Topology};

/// A complete simulation instance.
pub struct Harness {
    pub bus: VirtualBus,
    pub printer: Printer,
    pub attacker: Option<Attacker>,
}

impl Harness {
    /// Printer only, no attacker on the wire.
    #[must_use]
    pub fn new(topology: Topology, config: PlantConfig) -> Harness {
        let mut bus = VirtualBus::new();
        let printer = Printer::new(topology, config, &mut bus);
        Harness { bus, printer, attacker: None }
    }

    /// Printer plus an attacker node attached after every genuine module,
    /// so genuine node handles are identical with and without it.
    #[must_use]
    pub fn with_attacker(topology: Topology, config: PlantConfig, seed: u64) -> Harness {
        let telemetry_period = config.telemetry_period;
        let mut bus = VirtualBus::new();
        let printer = Printer::new(topology, config, &mut bus);
        let attacker = Attacker::attach(&mut bus, seed, telemetry_period);
        Harness { bus, printer, attacker: Some(attacker) }
    }

    #[must_use]
    pub fn now(&self) -> Tick {
        self.bus.now()
    }

    /// Seconds of simulated time on this harness's clock.
    #[must_use]
    pub fn now_secs(&self) -> f64 {
        self.printer.tick_as_secs(self.bus.now())
    }

    /// Catches every controller up to the current bus clock.
    pub fn service(&mut self) {
        self.printer.service(&mut self.bus);
        if let Some(attacker) = &mut self.attacker {
            attacker.service(&mut self.bus);
        }
    }

    /// One bus slot, never idling past `cap` (busy slots still run to their
    /// natural end). Returns the slot's events.
    pub fn step(&mut self, cap: Tick) -> Vec<BusEvent> {
        let mut deadline = self.printer.next_due(self.bus.now());
        if let Some(attacker) = &self.attacker {
            deadline = deadline.min(attacker.next_due(self.bus.now()));
        }
        self.bus.step_deadline(deadline.min(cap))
    }

    /// Services and steps until the clock reaches `end`; a final service
    /// runs at or past `end` so controller state reflects every delivery.
    /// Returns all events in order.
    pub fn run_until(&mut self, end: Tick) -> Vec<BusEvent> {
        let mut events = Vec::new();
        loop {
            self.service();
            if self.bus.now() >= end {
                break;
            }
            events.extend(self.step(end));
        }
        events
    }
}
