//! Candump-compatible trace files.
//!
//! Every delivered frame becomes one line in the classic log format:
//!
//! ```text
//! (1.234567) simcan0 1A1#10C84200
//! (2.000000) simcan0 010#R2
//! ```
//!
//! Timestamps are derived from the bus clock with integer math only, so the
//! same run always serializes to the same bytes. Remote frames use the
//! `R<dlc>` payload notation.

use printcan_core::bus::Tick;
use printcan_core::frame::{DataFrame, FrameId};
use std::fmt::Write as _;
use thiserror::Error;

/// Interface name stamped on every line.
pub const DEVICE: &str = "simcan0";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

/// One delivered frame with its delivery time in bit-times.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub tick: Tick,
    pub frame: DataFrame,
}

/// Bus ticks to whole microseconds, rounding down.
#[must_use]
pub fn tick_to_micros(tick: Tick, bitrate: u32) -> u64 {
    ((u128::from(tick) * 1_000_000) / u128::from(bitrate)) as u64
}

/// Formats one record as a candump line, without a trailing newline.
#[must_use]
pub fn format_line(record: TraceRecord, bitrate: u32) -> String {
    let micros = tick_to_micros(record.tick, bitrate);
    let mut line = format!(
        "({}.{:06}) {} {:03X}#",
        micros / 1_000_000,
        micros % 1_000_000,
        DEVICE,
        record.frame.id().raw()
    );
    if record.frame.is_remote() {
        let _ = write!(line, "R{}", record.frame.dlc());
    } else {
        for byte in record.frame.payload() {
            let _ = write!(line, "{byte:02X}");
        }
    }
    line
}

/// Renders a whole delivery log, one line per frame, trailing newline
/// included when the log is non-empty.
#[must_use]
pub fn render(records: &[TraceRecord], bitrate: u32) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&format_line(*record, bitrate));
        out.push('\n');
    }
    out
}

/// A parsed candump line. Timestamps come back as whole microseconds; the
/// original bit-time cannot be recovered without the bitrate, and even then
/// only approximately, so verification compares rendered text instead.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedRecord {
    pub micros: u64,
    pub id: u16,
    pub remote_dlc: Option<u8>,
    pub payload: Vec<u8>,
}

/// Parses candump text produced by [`render`] (or by real candump with the
/// `-l` timestamp style).
pub fn parse(text: &str) -> Result<Vec<ParsedRecord>, TraceError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_line(line, line_no)?);
    }
    Ok(out)
}

fn parse_line(line: &str, line_no: usize) -> Result<ParsedRecord, TraceError> {
    let fail = |msg: &str| TraceError::Malformed { line: line_no, msg: msg.to_string() };

    let mut fields = line.split_whitespace();
    let stamp = fields.next().ok_or_else(|| fail("empty line"))?;
    let _device = fields.next().ok_or_else(|| fail("missing interface name"))?;
    let body = fields.next().ok_or_else(|| fail("missing id#data field"))?;
    if fields.next().is_some() {
        return Err(fail("trailing garbage after frame field"));
    }

    let stamp = stamp
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| fail("timestamp must be parenthesized"))?;
    let (secs, usecs) = stamp.split_once('.').ok_or_else(|| fail("timestamp needs a dot"))?;
    if usecs.len() != 6 {
        return Err(fail("timestamp fraction must have six digits"));
    }
    let secs: u64 = secs.parse().map_err(|_| fail("bad seconds"))?;
    let usecs: u64 = usecs.parse().map_err(|_| fail("bad microseconds"))?;

    let (id, data) = body.split_once('#').ok_or_else(|| fail("missing '#' separator"))?;
    let id = u16::from_str_radix(id, 16).map_err(|_| fail("bad identifier"))?;
    if id > 0x7FF {
        return Err(fail("identifier out of 11-bit range"));
    }

    let (remote_dlc, payload) = if let Some(dlc) = data.strip_prefix('R') {
        let dlc: u8 = dlc.parse().map_err(|_| fail("bad remote DLC"))?;
        if dlc > 8 {
            return Err(fail("remote DLC out of range"));
        }
        (Some(dlc), Vec::new())
    } else {
        if data.len() % 2 != 0 {
            return Err(fail("odd payload hex length"));
        }
        if data.len() > 16 {
            return Err(fail("payload longer than 8 bytes"));
        }
        let bytes = (0..data.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&data[i..i + 2], 16))
            .collect::<Result<Vec<u8>, _>>()
            .map_err(|_| fail("bad payload hex"))?;
        (None, bytes)
    };

    Ok(ParsedRecord { micros: secs * 1_000_000 + usecs, id, remote_dlc, payload })
}

/// Rebuilds the wire frame a parsed record describes.
pub fn parsed_to_frame(record: &ParsedRecord) -> Result<DataFrame, TraceError> {
    let id = FrameId::new(record.id).ok_or_else(|| TraceError::Malformed {
        line: 0,
        msg: format!("identifier {:#X} exceeds the 11-bit range", record.id),
    })?;
    let frame = match record.remote_dlc {
        Some(dlc) => DataFrame::remote(id, dlc),
        None => DataFrame::data(id, &record.payload),
    };
    frame.map_err(|e| TraceError::Malformed { line: 0, msg: e.to_string() })
}
