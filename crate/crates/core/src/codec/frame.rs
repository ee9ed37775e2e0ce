use std::fmt;

use serde::{Deserialize, Serialize};

use super::crc::compute_crc15;
use super::BitLevel;
use crate::error::FrameError;

pub const MAX_ID: u16 = 0x7FF;
pub const MAX_DLC: u8 = 8;

// Field widths of a standard data frame.
pub const SOF_BITS: usize = 1;
pub const ID_BITS: usize = 11;
pub const CONTROL_BITS: usize = 3; // RTR, IDE, r0
pub const DLC_BITS: usize = 4;
pub const CRC_BITS: usize = 15;
pub const EOF_BITS: usize = 7;
pub const IFS_BITS: usize = 3;
/// CRC delimiter, ACK slot, EOF and IFS.
pub const TRAILER_BITS: usize = 1 + 1 + EOF_BITS + IFS_BITS;

/// Raw (pre-stuffing) index of the first DLC bit.
pub const DLC_START: usize = SOF_BITS + ID_BITS + CONTROL_BITS;
/// Raw index of the first data bit.
pub const DATA_START: usize = DLC_START + DLC_BITS;

/// Length of the stuffed region (SOF..CRC) before stuffing.
pub fn stuffed_region_len(dlc: u8) -> usize {
    DATA_START + 8 * dlc as usize + CRC_BITS
}

/// Upper bound on the bit-times a frame occupies on the wire, trailer included.
pub fn max_frame_bits(dlc: u8) -> usize {
    let region = stuffed_region_len(dlc);
    region + (region - 1) / 4 + TRAILER_BITS
}

/// A logical CAN 2.0A data frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameSpec {
    id: u16,
    payload: Vec<u8>,
}

impl FrameSpec {
    pub fn new(id: u16, payload: impl Into<Vec<u8>>) -> Result<Self, FrameError> {
        let payload = payload.into();
        if id > MAX_ID {
            return Err(FrameError::IdOutOfRange(id));
        }
        if payload.len() > MAX_DLC as usize {
            return Err(FrameError::DlcOutOfRange(payload.len() as u8));
        }
        Ok(Self { id, payload })
    }

    /// Builds a frame from an explicit dlc, checking it against the payload.
    pub fn with_dlc(id: u16, dlc: u8, payload: &[u8]) -> Result<Self, FrameError> {
        if dlc > MAX_DLC {
            return Err(FrameError::DlcOutOfRange(dlc));
        }
        if payload.len() != dlc as usize {
            return Err(FrameError::PayloadLength {
                dlc,
                payload: payload.len(),
            });
        }
        Self::new(id, payload)
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn dlc(&self) -> u8 {
        self.payload.len() as u8
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn payload_hex(&self) -> String {
        if self.payload.is_empty() {
            return "-".to_string();
        }
        self.payload.iter().map(|b| format!("{b:02X}")).collect()
    }
}

impl fmt::Display for FrameSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03X}#{}", self.id, self.payload_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrailerField {
    CrcDelimiter,
    AckSlot,
    Eof(u8),
    Ifs(u8),
}

/// Unstuffed frame: the stuffed region plus the fixed-form trailer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawBitstream {
    pub bits: Vec<BitLevel>,
    pub trailer: Vec<(TrailerField, BitLevel)>,
}

impl RawBitstream {
    pub fn crc(&self) -> u16 {
        let crc_start = self.bits.len() - CRC_BITS;
        self.bits[crc_start..]
            .iter()
            .fold(0u16, |acc, b| (acc << 1) | b.as_bit() as u16)
    }
}

/// Fixed trailer as sent by a transmitter: everything Recessive.
pub fn trailer() -> Vec<(TrailerField, BitLevel)> {
    let mut t = vec![
        (TrailerField::CrcDelimiter, BitLevel::Recessive),
        (TrailerField::AckSlot, BitLevel::Recessive),
    ];
    t.extend((0..EOF_BITS as u8).map(|i| (TrailerField::Eof(i), BitLevel::Recessive)));
    t.extend((0..IFS_BITS as u8).map(|i| (TrailerField::Ifs(i), BitLevel::Recessive)));
    t
}

pub(crate) fn push_msb(bits: &mut Vec<BitLevel>, value: u32, width: usize) {
    for k in (0..width).rev() {
        bits.push(BitLevel::from_bit(value >> k & 1 == 1));
    }
}

/// Lays out a data frame MSB-first and appends its CRC-15.
pub fn serialize(frame: &FrameSpec) -> Result<RawBitstream, FrameError> {
    if frame.id > MAX_ID {
        return Err(FrameError::IdOutOfRange(frame.id));
    }
    if frame.dlc() > MAX_DLC {
        return Err(FrameError::DlcOutOfRange(frame.dlc()));
    }
    let mut bits = Vec::with_capacity(stuffed_region_len(frame.dlc()));
    bits.push(BitLevel::Dominant); // SOF
    push_msb(&mut bits, frame.id as u32, ID_BITS);
    bits.extend([BitLevel::Dominant; CONTROL_BITS]); // RTR, IDE, r0
    push_msb(&mut bits, frame.dlc() as u32, DLC_BITS);
    for &byte in &frame.payload {
        push_msb(&mut bits, byte as u32, 8);
    }
    let crc = compute_crc15(&bits);
    push_msb(&mut bits, crc as u32, CRC_BITS);
    Ok(RawBitstream {
        bits,
        trailer: trailer(),
    })
}
