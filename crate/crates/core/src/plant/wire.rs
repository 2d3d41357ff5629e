//! Payload encoding for printer traffic.
//!
//! Every payload starts with a one-byte opcode. Command opcodes occupy
//! 0x01..=0x0F and travel on command identifiers; status opcodes start at
//! [`STATUS_OPCODE_FLOOR`] and travel on status identifiers. Registration
//! responses are the one exception: their first byte is a module kind code,
//! and kind codes stay below 0x10, so a three-byte payload whose first byte
//! parses as a kind code is unambiguously a registration response.
//!
//! Temperatures ride as big-endian signed sixteenths of a degree Celsius,
//! positions as big-endian 32-bit step counts, booleans as a strict
//! 0x00/0x01, and PID gains as big-endian thousandths.

use thiserror::Error;

use super::{Axis, ModuleKind};
use crate::frame::FrameId;

/// First byte of every status payload is at least this; registration kind
/// codes are always below it.
pub const STATUS_OPCODE_FLOOR: u8 = 0x10;

pub mod op {
    //! Opcode bytes. Commands below 0x10, statuses at 0x10 and up.
    pub const ENUMERATE: u8 = 0x01;
    pub const SET_TARGET_TEMP: u8 = 0x02;
    pub const SET_FAN: u8 = 0x03;
    pub const MOVE: u8 = 0x04;
    pub const SET_FILTER: u8 = 0x05;
    pub const KILL_SWITCH: u8 = 0x06;
    pub const REFLASH: u8 = 0x07;
    pub const HALT: u8 = 0x08;
    pub const HOME: u8 = 0x09;
    pub const END_HOME: u8 = 0x0A;
    pub const SET_PID: u8 = 0x0B;

    pub const TEMP_STATUS: u8 = 0x10;
    pub const POSITION_STATUS: u8 = 0x11;
    pub const LIMIT_STATUS: u8 = 0x12;
    pub const SAFETY_STATUS: u8 = 0x13;
    pub const CAMERA_STATUS: u8 = 0x14;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("empty payload")]
    Empty,
    #[error("unknown opcode {opcode:#04x}")]
    UnknownOpcode { opcode: u8 },
    #[error("payload for opcode {opcode:#04x} has {got} bytes, expected {expected}")]
    WrongLength { opcode: u8, expected: usize, got: usize },
    #[error("malformed payload: {detail}")]
    BadValue { detail: String },
}

/// Temperature to wire form: big-endian sixteenths of a degree, saturating
/// at the i16 range.
#[must_use]
pub fn encode_temp_c(celsius: f64) -> [u8; 2] {
    let q = (celsius * 16.0).round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16;
    q.to_be_bytes()
}

#[must_use]
pub fn decode_temp_c(bytes: [u8; 2]) -> f64 {
    f64::from(i16::from_be_bytes(bytes)) / 16.0
}

fn encode_gain(gain: f64) -> [u8; 2] {
    let q = (gain * 1_000.0).round().clamp(0.0, f64::from(u16::MAX)) as u16;
    q.to_be_bytes()
}

fn decode_gain(bytes: [u8; 2]) -> f64 {
    f64::from(u16::from_be_bytes(bytes)) / 1_000.0
}

fn decode_bool(byte: u8, what: &str) -> Result<bool, WireError> {
    match byte {
        0x00 => Ok(false),
        0x01 => Ok(true),
        other => Err(WireError::BadValue {
            detail: format!("{what} flag must be 0x00 or 0x01, got {other:#04x}"),
        }),
    }
}

fn decode_axis(byte: u8) -> Result<Axis, WireError> {
    Axis::from_code(byte).ok_or_else(|| WireError::BadValue {
        detail: format!("axis code {byte:#04x} out of range"),
    })
}

fn expect_len(payload: &[u8], expected: usize) -> Result<(), WireError> {
    if payload.len() == expected {
        Ok(())
    } else {
        Err(WireError::WrongLength {
            opcode: payload[0],
            expected,
            got: payload.len(),
        })
    }
}

/// Board-to-module traffic.
#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    /// Broadcast: every module must answer with a registration response.
    Enumerate,
    SetTargetTemp { celsius: f64 },
    SetFan { on: bool },
    Move { axis: Axis, steps: i32 },
    SetFilter { on: bool },
    KillSwitch,
    /// Firmware update push; the payload carries an opaque digest stub.
    Reflash { digest: Vec<u8> },
    /// Broadcast: stop all actuation immediately.
    Halt,
    Home { axis: Axis },
    EndHome { axis: Axis },
    SetPid { kp: f64, ki: f64, kd: f64 },
}

#[must_use]
pub fn encode_command(command: &Command) -> Vec<u8> {
    match command {
        Command::Enumerate => vec![op::ENUMERATE],
        Command::SetTargetTemp { celsius } => {
            let t = encode_temp_c(*celsius);
            vec![op::SET_TARGET_TEMP, t[0], t[1]]
        }
        Command::SetFan { on } => vec![op::SET_FAN, u8::from(*on)],
        Command::Move { axis, steps } => {
            let mut out = vec![op::MOVE, axis.code()];
            out.extend_from_slice(&steps.to_be_bytes());
            out
        }
        Command::SetFilter { on } => vec![op::SET_FILTER, u8::from(*on)],
        Command::KillSwitch => vec![op::KILL_SWITCH],
        Command::Reflash { digest } => {
            assert!(digest.len() <= 7, "digest must fit the frame");
            let mut out = vec![op::REFLASH];
            out.extend_from_slice(digest);
            out
        }
        Command::Halt => vec![op::HALT],
        Command::Home { axis } => vec![op::HOME, axis.code()],
        Command::EndHome { axis } => vec![op::END_HOME, axis.code()],
        Command::SetPid { kp, ki, kd } => {
            let mut out = vec![op::SET_PID];
            for gain in [kp, ki, kd] {
                out.extend_from_slice(&encode_gain(*gain));
            }
            out
        }
    }
}

pub fn decode_command(payload: &[u8]) -> Result<Command, WireError> {
    let &opcode = payload.first().ok_or(WireError::Empty)?;
    match opcode {
        op::ENUMERATE => {
            expect_len(payload, 1)?;
            Ok(Command::Enumerate)
        }
        op::SET_TARGET_TEMP => {
            expect_len(payload, 3)?;
            Ok(Command::SetTargetTemp {
                celsius: decode_temp_c([payload[1], payload[2]]),
            })
        }
        op::SET_FAN => {
            expect_len(payload, 2)?;
            Ok(Command::SetFan { on: decode_bool(payload[1], "fan")? })
        }
        op::MOVE => {
            expect_len(payload, 6)?;
            Ok(Command::Move {
                axis: decode_axis(payload[1])?,
                steps: i32::from_be_bytes([payload[2], payload[3], payload[4], payload[5]]),
            })
        }
        op::SET_FILTER => {
            expect_len(payload, 2)?;
            Ok(Command::SetFilter { on: decode_bool(payload[1], "filter")? })
        }
        op::KILL_SWITCH => {
            expect_len(payload, 1)?;
            Ok(Command::KillSwitch)
        }
        op::REFLASH => Ok(Command::Reflash { digest: payload[1..].to_vec() }),
        op::HALT => {
            expect_len(payload, 1)?;
            Ok(Command::Halt)
        }
        op::HOME => {
            expect_len(payload, 2)?;
            Ok(Command::Home { axis: decode_axis(payload[1])? })
        }
        op::END_HOME => {
            expect_len(payload, 2)?;
            Ok(Command::EndHome { axis: decode_axis(payload[1])? })
        }
        op::SET_PID => {
            expect_len(payload, 7)?;
            Ok(Command::SetPid {
                kp: decode_gain([payload[1], payload[2]]),
                ki: decode_gain([payload[3], payload[4]]),
                kd: decode_gain([payload[5], payload[6]]),
            })
        }
        other => Err(WireError::UnknownOpcode { opcode: other }),
    }
}

/// Module-to-board traffic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Status {
    Temp { celsius: f64 },
    Position { axis: Axis, steps: i32 },
    Limit { axis: Axis, at_min: bool, at_max: bool },
    Safety { filter_on: bool, kill_pressed: bool },
    Camera { sequence: u8 },
}

#[must_use]
pub fn encode_status(status: &Status) -> Vec<u8> {
    match status {
        Status::Temp { celsius } => {
            let t = encode_temp_c(*celsius);
            vec![op::TEMP_STATUS, t[0], t[1]]
        }
        Status::Position { axis, steps } => {
            let mut out = vec![op::POSITION_STATUS, axis.code()];
            out.extend_from_slice(&steps.to_be_bytes());
            out
        }
        Status::Limit { axis, at_min, at_max } => {
            vec![op::LIMIT_STATUS, axis.code(), u8::from(*at_min), u8::from(*at_max)]
        }
        Status::Safety { filter_on, kill_pressed } => {
            vec![op::SAFETY_STATUS, u8::from(*filter_on), u8::from(*kill_pressed)]
        }
        Status::Camera { sequence } => vec![op::CAMERA_STATUS, *sequence],
    }
}

pub fn decode_status(payload: &[u8]) -> Result<Status, WireError> {
    let &opcode = payload.first().ok_or(WireError::Empty)?;
    match opcode {
        op::TEMP_STATUS => {
            expect_len(payload, 3)?;
            Ok(Status::Temp { celsius: decode_temp_c([payload[1], payload[2]]) })
        }
        op::POSITION_STATUS => {
            expect_len(payload, 6)?;
            Ok(Status::Position {
                axis: decode_axis(payload[1])?,
                steps: i32::from_be_bytes([payload[2], payload[3], payload[4], payload[5]]),
            })
        }
        op::LIMIT_STATUS => {
            expect_len(payload, 4)?;
            Ok(Status::Limit {
                axis: decode_axis(payload[1])?,
                at_min: decode_bool(payload[2], "min stop")?,
                at_max: decode_bool(payload[3], "max stop")?,
            })
        }
        op::SAFETY_STATUS => {
            expect_len(payload, 3)?;
            Ok(Status::Safety {
                filter_on: decode_bool(payload[1], "filter")?,
                kill_pressed: decode_bool(payload[2], "kill switch")?,
            })
        }
        op::CAMERA_STATUS => {
            expect_len(payload, 2)?;
            Ok(Status::Camera { sequence: payload[1] })
        }
        other => Err(WireError::UnknownOpcode { opcode: other }),
    }
}

/// A module's answer to an enumeration broadcast: who it is and which
/// identifier it takes commands on. Sent on the module's status identifier,
/// which the board learns from the frame itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegistrationResponse {
    pub kind: ModuleKind,
    pub command_id: FrameId,
}

impl RegistrationResponse {
    #[must_use]
    pub fn encode(&self) -> [u8; 3] {
        let id = self.command_id.raw().to_be_bytes();
        [self.kind.kind_code(), id[0], id[1]]
    }

    /// Shape test: three bytes whose first parses as a module kind code.
    /// Status opcodes start at 0x10, so no status payload matches.
    #[must_use]
    pub fn looks_like(payload: &[u8]) -> bool {
        payload.len() == 3 && ModuleKind::from_kind_code(payload[0]).is_some()
    }

    pub fn decode(payload: &[u8]) -> Result<RegistrationResponse, WireError> {
        if payload.len() != 3 {
            return Err(WireError::WrongLength {
                opcode: payload.first().copied().unwrap_or(0),
                expected: 3,
                got: payload.len(),
            });
        }
        let kind = ModuleKind::from_kind_code(payload[0]).ok_or(WireError::UnknownOpcode {
            opcode: payload[0],
        })?;
        let raw = u16::from_be_bytes([payload[1], payload[2]]);
        let command_id = FrameId::new(raw).ok_or_else(|| WireError::BadValue {
            detail: format!("command identifier {raw:#05x} out of range"),
        })?;
        Ok(RegistrationResponse { kind, command_id })
    }
}
