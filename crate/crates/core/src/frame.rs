//! CAN 2.0A frame codec at bit-image granularity.
//!
//! Frames are encoded exactly as they appear on the wire: start-of-frame,
//! 11-bit identifier, RTR, two reserved bits, DLC, data, CRC-15, CRC
//! delimiter, ACK slot, ACK delimiter, and seven end-of-frame bits. Bit
//! stuffing covers start-of-frame through the last CRC bit; the tail is
//! transmitted unstuffed. The ACK slot is emitted recessive, as a transmitter
//! sends it; whether anyone acknowledged is the bus's business, not the
//! codec's.

use std::fmt;

use thiserror::Error;

/// Highest valid 11-bit identifier.
pub const MAX_FRAME_ID: u16 = 0x7FF;
/// Maximum payload length in bytes.
pub const MAX_PAYLOAD: usize = 8;

const CRC15_POLY: u16 = 0x4599;
const CRC15_MASK: u16 = 0x7FFF;
const STUFF_RUN: usize = 5;
/// Unstuffed tail after the CRC field: delimiter, ACK slot, ACK delimiter,
/// seven end-of-frame bits.
const TAIL_BITS: usize = 10;

/// A single bus level. Dominant wins over recessive on the wire and encodes
/// logical 0.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bit {
    Dominant,
    Recessive,
}

impl Bit {
    /// Maps logical 0 to dominant, logical 1 to recessive.
    #[must_use]
    pub fn from_logical(value: bool) -> Self {
        if value {
            Bit::Recessive
        } else {
            Bit::Dominant
        }
    }

    /// Logical value: dominant = 0, recessive = 1.
    #[must_use]
    pub fn logical(self) -> u8 {
        match self {
            Bit::Dominant => 0,
            Bit::Recessive => 1,
        }
    }

    #[must_use]
    pub fn complement(self) -> Self {
        match self {
            Bit::Dominant => Bit::Recessive,
            Bit::Recessive => Bit::Dominant,
        }
    }
}

impl fmt::Debug for Bit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if *self == Bit::Dominant { "0" } else { "1" })
    }
}

/// An ordered sequence of bus levels.
///
/// Rendered as a string of `0` (dominant) and `1` (recessive) characters in
/// debug output, which is also the format [`BitStream::from_logical_str`]
/// parses.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct BitStream {
    bits: Vec<Bit>,
}

impl BitStream {
    #[must_use]
    pub fn new() -> Self {
        Self::default()
    }

    #[must_use]
    pub fn with_capacity(capacity: usize) -> Self {
        Self { bits: Vec::with_capacity(capacity) }
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn push(&mut self, bit: Bit) {
        self.bits.push(bit);
    }

    /// Appends `width` bits of `value`, most significant first.
    pub fn push_int(&mut self, value: u32, width: u32) {
        for shift in (0..width).rev() {
            self.push(Bit::from_logical((value >> shift) & 1 == 1));
        }
    }

    #[must_use]
    pub fn get(&self, index: usize) -> Option<Bit> {
        self.bits.get(index).copied()
    }

    pub fn set(&mut self, index: usize, bit: Bit) {
        self.bits[index] = bit;
    }

    pub fn flip(&mut self, index: usize) {
        self.bits[index] = self.bits[index].complement();
    }

    pub fn iter(&self) -> impl Iterator<Item = Bit> + '_ {
        self.bits.iter().copied()
    }

    #[must_use]
    pub fn as_slice(&self) -> &[Bit] {
        &self.bits
    }

    /// Parses a string of `0`/`1` characters. Returns `None` on any other
    /// character.
    #[must_use]
    pub fn from_logical_str(text: &str) -> Option<Self> {
        let mut out = Self::with_capacity(text.len());
        for ch in text.chars() {
            match ch {
                '0' => out.push(Bit::Dominant),
                '1' => out.push(Bit::Recessive),
                _ => return None,
            }
        }
        Some(out)
    }

    #[must_use]
    pub fn to_logical_string(&self) -> String {
        self.bits.iter().map(|b| if b.logical() == 0 { '0' } else { '1' }).collect()
    }
}

impl fmt::Debug for BitStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_logical_string())
    }
}

impl FromIterator<Bit> for BitStream {
    fn from_iter<T: IntoIterator<Item = Bit>>(iter: T) -> Self {
        Self { bits: iter.into_iter().collect() }
    }
}

/// An 11-bit CAN identifier, valid by construction.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameId(u16);

impl FrameId {
    /// Returns `None` if `raw` exceeds [`MAX_FRAME_ID`].
    #[must_use]
    pub const fn new(raw: u16) -> Option<Self> {
        if raw <= MAX_FRAME_ID {
            Some(Self(raw))
        } else {
            None
        }
    }

    #[must_use]
    pub const fn raw(self) -> u16 {
        self.0
    }
}

impl fmt::Debug for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:03X}", self.0)
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:03X}", self.0)
    }
}

/// A CAN 2.0A data or remote frame.
///
/// For data frames the DLC equals the payload length; remote frames carry a
/// DLC but no payload.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataFrame {
    id: FrameId,
    rtr: bool,
    dlc: u8,
    data: [u8; MAX_PAYLOAD],
}

impl DataFrame {
    /// Builds a data frame. Fails with [`CodecError::FormatError`] if the
    /// payload exceeds eight bytes.
    pub fn data(id: FrameId, payload: &[u8]) -> Result<Self, CodecError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(CodecError::FormatError {
                detail: format!("payload of {} bytes exceeds the 8-byte maximum", payload.len()),
            });
        }
        let mut data = [0u8; MAX_PAYLOAD];
        data[..payload.len()].copy_from_slice(payload);
        Ok(Self { id, rtr: false, dlc: payload.len() as u8, data })
    }

    /// Builds a remote frame requesting `dlc` bytes.
    pub fn remote(id: FrameId, dlc: u8) -> Result<Self, CodecError> {
        if dlc as usize > MAX_PAYLOAD {
            return Err(CodecError::FormatError {
                detail: format!("remote frame DLC {dlc} exceeds 8"),
            });
        }
        Ok(Self { id, rtr: true, dlc, data: [0u8; MAX_PAYLOAD] })
    }

    #[must_use]
    pub fn id(self) -> FrameId {
        self.id
    }

    #[must_use]
    pub fn is_remote(self) -> bool {
        self.rtr
    }

    #[must_use]
    pub fn dlc(self) -> u8 {
        self.dlc
    }

    /// Payload bytes; empty for remote frames.
    #[must_use]
    pub fn payload(&self) -> &[u8] {
        if self.rtr {
            &[]
        } else {
            &self.data[..self.dlc as usize]
        }
    }

    /// The value the frame contends with during arbitration: identifier bits
    /// followed by the RTR bit. Lower wins, so a data frame beats a remote
    /// frame with the same identifier.
    #[must_use]
    pub fn arbitration_value(self) -> u16 {
        (self.id.raw() << 1) | u16::from(self.rtr)
    }
}

impl fmt::Debug for DataFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rtr {
            write!(f, "{}#R{}", self.id, self.dlc)
        } else {
            write!(f, "{}#", self.id)?;
            for byte in self.payload() {
                write!(f, "{byte:02X}")?;
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    /// Six consecutive identical bits inside the stuffed region.
    #[error("stuff violation at bit {position}: six consecutive identical levels")]
    StuffViolation { position: usize },
    /// The received CRC field disagrees with the CRC computed over the frame.
    #[error("CRC mismatch: computed 0x{computed:04X}, received 0x{received:04X}")]
    CrcMismatch { computed: u16, received: u16 },
    /// Anything structurally wrong that is neither a stuffing nor a CRC
    /// failure: bad field values, wrong fixed-form bits, truncation.
    #[error("malformed frame: {detail}")]
    FormatError { detail: String },
}

fn format_err(detail: impl Into<String>) -> CodecError {
    CodecError::FormatError { detail: detail.into() }
}

// ---------------------------------------------------------------------------
// CRC-15
// ---------------------------------------------------------------------------

const fn crc15_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut byte = 0usize;
    while byte < 256 {
        let mut crc = (byte as u16) << 7;
        let mut bit = 0;
        while bit < 8 {
            let top = crc & 0x4000;
            crc = (crc << 1) & CRC15_MASK;
            if top != 0 {
                crc ^= CRC15_POLY;
            }
            bit += 1;
        }
        table[byte] = crc;
        byte += 1;
    }
    table
}

const CRC15_TABLE: [u16; 256] = crc15_table();

fn crc15_step(crc: u16, bit: Bit) -> u16 {
    let feed = bit.logical() ^ ((crc >> 14) as u8 & 1);
    let shifted = (crc << 1) & CRC15_MASK;
    if feed != 0 {
        shifted ^ CRC15_POLY
    } else {
        shifted
    }
}

/// CRC-15 over a bit stream (generator 0x4599, register initialized to zero).
///
/// Processes whole bytes through a precomputed table and any trailing bits
/// through the shift register directly.
#[must_use]
pub fn compute_crc15(bits: &BitStream) -> u16 {
    let slice = bits.as_slice();
    let mut crc = 0u16;
    let full_bytes = slice.len() / 8;
    for chunk in slice[..full_bytes * 8].chunks_exact(8) {
        let mut byte = 0u8;
        for bit in chunk {
            byte = (byte << 1) | bit.logical();
        }
        let index = ((crc >> 7) as u8) ^ byte;
        crc = ((crc << 8) & CRC15_MASK) ^ CRC15_TABLE[index as usize];
    }
    for &bit in &slice[full_bytes * 8..] {
        crc = crc15_step(crc, bit);
    }
    crc
}

// ---------------------------------------------------------------------------
// Bit stuffing
// ---------------------------------------------------------------------------

/// Inserts a complement bit after every run of five identical levels.
/// Inserted bits count toward subsequent runs, exactly as a transmitting
/// controller's stuff logic sees them.
#[must_use]
pub fn stuff_bits(bits: &BitStream) -> BitStream {
    let mut out = BitStream::with_capacity(bits.len() + bits.len() / STUFF_RUN);
    let mut run_bit = None;
    let mut run_len = 0usize;
    for bit in bits.iter() {
        out.push(bit);
        if Some(bit) == run_bit {
            run_len += 1;
        } else {
            run_bit = Some(bit);
            run_len = 1;
        }
        if run_len == STUFF_RUN {
            let stuff = bit.complement();
            out.push(stuff);
            run_bit = Some(stuff);
            run_len = 1;
        }
    }
    out
}

/// Removes stuff bits, failing with [`CodecError::StuffViolation`] on any run
/// of six identical levels. A run of five at the very end of the input is
/// accepted as-is (nothing follows it to violate).
pub fn destuff_bits(bits: &BitStream) -> Result<BitStream, CodecError> {
    let mut out = BitStream::with_capacity(bits.len());
    let mut run_bit = None;
    let mut run_len = 0usize;
    let mut expect_stuff = false;
    for (position, bit) in bits.iter().enumerate() {
        if expect_stuff {
            if Some(bit) == run_bit {
                return Err(CodecError::StuffViolation { position });
            }
            run_bit = Some(bit);
            run_len = 1;
            expect_stuff = false;
            continue;
        }
        out.push(bit);
        if Some(bit) == run_bit {
            run_len += 1;
        } else {
            run_bit = Some(bit);
            run_len = 1;
        }
        if run_len == STUFF_RUN {
            expect_stuff = true;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Frame encode / decode
// ---------------------------------------------------------------------------

fn head_bits(frame: &DataFrame) -> BitStream {
    let mut bits = BitStream::with_capacity(19 + frame.payload().len() * 8);
    bits.push(Bit::Dominant); // start of frame
    bits.push_int(u32::from(frame.id.raw()), 11);
    bits.push(Bit::from_logical(frame.rtr));
    bits.push(Bit::Dominant); // IDE: base format only
    bits.push(Bit::Dominant); // r0
    bits.push_int(u32::from(frame.dlc), 4);
    for &byte in frame.payload() {
        bits.push_int(u32::from(byte), 8);
    }
    bits
}

/// Encodes a frame to its full wire bit image, stuffed through the CRC field
/// and followed by the unstuffed tail (CRC delimiter, recessive ACK slot, ACK
/// delimiter, end of frame).
#[must_use]
pub fn encode_frame(frame: &DataFrame) -> BitStream {
    let mut unstuffed = head_bits(frame);
    let crc = compute_crc15(&unstuffed);
    unstuffed.push_int(u32::from(crc), 15);
    let mut out = stuff_bits(&unstuffed);
    for _ in 0..TAIL_BITS {
        out.push(Bit::Recessive);
    }
    out
}

/// Incremental destuffer over the stuffed region of a frame image.
struct Destuffer<'a> {
    bits: &'a [Bit],
    pos: usize,
    run_bit: Option<Bit>,
    run_len: usize,
}

impl<'a> Destuffer<'a> {
    fn new(bits: &'a [Bit]) -> Self {
        Self { bits, pos: 0, run_bit: None, run_len: 0 }
    }

    fn take_raw(&mut self) -> Result<Bit, CodecError> {
        let bit = *self
            .bits
            .get(self.pos)
            .ok_or_else(|| format_err("frame image truncated"))?;
        self.pos += 1;
        Ok(bit)
    }

    /// Next payload-bearing bit, transparently consuming stuff bits.
    fn next(&mut self) -> Result<Bit, CodecError> {
        self.skip_pending_stuff()?;
        let bit = self.take_raw()?;
        if Some(bit) == self.run_bit {
            self.run_len += 1;
        } else {
            self.run_bit = Some(bit);
            self.run_len = 1;
        }
        Ok(bit)
    }

    /// If the previous bit completed a run of five, the following wire bit is
    /// a stuff bit: consume and validate it.
    fn skip_pending_stuff(&mut self) -> Result<(), CodecError> {
        if self.run_len == STUFF_RUN {
            let position = self.pos;
            let stuff = self.take_raw()?;
            if Some(stuff) == self.run_bit {
                return Err(CodecError::StuffViolation { position });
            }
            self.run_bit = Some(stuff);
            self.run_len = 1;
        }
        Ok(())
    }

    fn take_int(&mut self, width: u32, acc: &mut BitStream) -> Result<u16, CodecError> {
        let mut value = 0u16;
        for _ in 0..width {
            let bit = self.next()?;
            acc.push(bit);
            value = (value << 1) | u16::from(bit.logical());
        }
        Ok(value)
    }
}

/// Decodes a full frame bit image produced by [`encode_frame`] (or observed
/// on the wire). Rejects extended-format markers, reserved-bit violations,
/// DLC over 8, stuffing violations, CRC mismatches, and any truncation or
/// trailing garbage.
pub fn decode_frame(bits: &BitStream) -> Result<DataFrame, CodecError> {
    let mut reader = Destuffer::new(bits.as_slice());
    let mut head = BitStream::with_capacity(bits.len());

    let sof = reader.next()?;
    head.push(sof);
    if sof != Bit::Dominant {
        return Err(format_err("start-of-frame bit must be dominant"));
    }

    let id_raw = reader.take_int(11, &mut head)?;
    let id = FrameId::new(id_raw).expect("11 bits cannot exceed MAX_FRAME_ID");

    let rtr_bit = reader.next()?;
    head.push(rtr_bit);
    let rtr = rtr_bit == Bit::Recessive;

    let ide = reader.next()?;
    head.push(ide);
    if ide != Bit::Dominant {
        return Err(format_err("extended-format frames are not supported"));
    }
    let r0 = reader.next()?;
    head.push(r0);
    if r0 != Bit::Dominant {
        return Err(format_err("reserved bit r0 must be dominant"));
    }

    let dlc = reader.take_int(4, &mut head)? as u8;
    if dlc as usize > MAX_PAYLOAD {
        return Err(format_err(format!("DLC {dlc} exceeds 8")));
    }

    let mut data = [0u8; MAX_PAYLOAD];
    if !rtr {
        for byte in data.iter_mut().take(dlc as usize) {
            *byte = reader.take_int(8, &mut head)? as u8;
        }
    }

    let mut crc_bits = BitStream::with_capacity(15);
    let received_crc = reader.take_int(15, &mut crc_bits)?;
    // A run of five ending exactly on the last CRC bit still gets a stuff bit
    // before the delimiter; consume it so the tail lines up.
    reader.skip_pending_stuff()?;

    let computed_crc = compute_crc15(&head);
    if computed_crc != received_crc {
        return Err(CodecError::CrcMismatch { computed: computed_crc, received: received_crc });
    }

    let crc_delim = reader.take_raw()?;
    if crc_delim != Bit::Recessive {
        return Err(format_err("CRC delimiter must be recessive"));
    }
    let _ack_slot = reader.take_raw()?; // dominant once acknowledged, recessive as sent
    let ack_delim = reader.take_raw()?;
    if ack_delim != Bit::Recessive {
        return Err(format_err("ACK delimiter must be recessive"));
    }
    for _ in 0..7 {
        if reader.take_raw()? != Bit::Recessive {
            return Err(format_err("end-of-frame bits must be recessive"));
        }
    }
    if reader.pos != bits.len() {
        return Err(format_err(format!(
            "{} trailing bits after end of frame",
            bits.len() - reader.pos
        )));
    }

    let frame = if rtr {
        DataFrame { id, rtr: true, dlc, data: [0u8; MAX_PAYLOAD] }
    } else {
        DataFrame { id, rtr: false, dlc, data }
    };
    Ok(frame)
}
