//! Deterministic simulation of a CAN-bus 3D printer and the attacks its
//! flat, unauthenticated network permits.
//!
//! The crate is layered bottom-up:
//!
//! * [`frame`]: CAN 2.0A bit-image codec: identifiers, bit stuffing, CRC-15.
//! * [`bus`]: virtual shared medium with lowest-ID-wins arbitration, error
//!   injection, and simplified fault confinement.
//! * [`node`]: per-node acceptance filters and receive mailboxes.
//! * [`plant`]: the printer itself: thermal model, motion axes, module
//!   controllers, registration handshake, and the main board's fault logic.
//! * [`attack`]: a single rogue node's capabilities: eavesdropping, ID-map
//!   inference, spoofing, flooding, targeted blocking, and replay.
//! * [`sim`]: the harness that drives plant and attacker against one bus.
//!
//! Everything is deterministic: a run is a pure function of its configuration
//! and seed, and time is counted in bit-times on the wire.

pub mod attack;
pub mod bus;
pub mod frame;
pub mod node;
pub mod plant;
pub mod sim;
