//! Frame-level codec: field layout, CRC-15, bit stuffing and a streaming decoder.

pub mod crc;
pub mod decoder;
pub mod frame;
pub mod level;
pub mod stuffing;

pub use crc::{compute_crc15, Crc15};
pub use decoder::{Decoder, DecoderEvent, DecoderEventKind, Field};
pub use frame::{serialize, FrameSpec, RawBitstream, TrailerField};
pub use level::{wired_and, BitLevel};
pub use stuffing::{destuff, stuff, StuffedBitstream};

/// Levels a transmitter drives for `frame`: stuffed region, CRC delimiter,
/// ACK slot (Recessive) and EOF. Intermission is not included.
pub fn transmit_levels(frame: &FrameSpec) -> Vec<BitLevel> {
    let raw = serialize(frame).expect("FrameSpec enforces field ranges");
    let (mut bits, _) = stuffing::stuff_levels(&raw.bits);
    bits.extend([BitLevel::Recessive; 2 + frame::EOF_BITS]);
    bits
}
