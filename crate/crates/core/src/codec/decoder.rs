//! Incremental bus-level decoder.
//!
//! Every bus observer (controllers, attackers, the officer, the trace monitor)
//! runs one of these over the resolved bus level. Besides frame content it
//! tracks the error and overload signaling that follows a violation, so all
//! observers agree on where the next frame can start.

use super::crc::Crc15;
use super::frame::{FrameSpec, CRC_BITS, DATA_START, DLC_START, ID_BITS};
use super::stuffing::STUFF_RUN;
use super::BitLevel;

/// Length of an error or overload flag.
pub const FLAG_BITS: u8 = 6;
/// Recessive bits closing an error or overload frame.
pub const DELIMITER_BITS: u8 = 8;
pub const INTERMISSION_BITS: u8 = 3;

/// The role of the bit the decoder will consume next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Idle,
    Sof,
    Id(u8),
    Rtr,
    Ide,
    R0,
    Dlc(u8),
    Data(u8),
    Crc(u8),
    Stuff,
    CrcDelimiter,
    AckSlot,
    Eof(u8),
    Intermission(u8),
    ErrorFlag(u8),
    ErrorWait,
    ErrorDelimiter(u8),
    OverloadFlag(u8),
    OverloadWait,
    OverloadDelimiter(u8),
}

impl Field {
    /// Bits of the frame body where only the arbitration winner may drive Dominant
    /// (everything after the identifier up to the end of EOF, ACK slot excluded).
    pub fn is_body(self) -> bool {
        matches!(
            self,
            Field::Rtr
                | Field::Ide
                | Field::R0
                | Field::Dlc(_)
                | Field::Data(_)
                | Field::Crc(_)
                | Field::Stuff
                | Field::CrcDelimiter
                | Field::Eof(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecoderEventKind {
    SofDetected,
    ArbitrationComplete(u16),
    FieldProgress(Field, u16),
    AckSlot,
    FrameComplete(FrameSpec),
    /// Six equal levels in the stuffed region. `active_error_flag` is set when
    /// the run is Dominant, the shape of an active error flag.
    StuffError { active_error_flag: bool },
    FormError,
    CrcMismatch,
    /// Dominant level in intermission or in the last EOF bit.
    Overload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderEvent {
    pub kind: DecoderEventKind,
    pub bit_time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tail {
    Stuffed,
    CrcDelimiter,
    Ack,
    Eof(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct FrameRx {
    /// Raw index of the next unstuffed bit.
    raw_index: u16,
    run_level: BitLevel,
    run_len: u8,
    region_done: bool,
    id: u16,
    dlc: u8,
    data: [u8; 8],
    crc: Crc15,
    crc_rx: u16,
    crc_ok: bool,
    tail: Tail,
}

impl FrameRx {
    fn after_sof() -> Self {
        let mut crc = Crc15::new();
        crc.push(BitLevel::Dominant);
        FrameRx {
            raw_index: 1,
            run_level: BitLevel::Dominant,
            run_len: 1,
            region_done: false,
            id: 0,
            dlc: 0,
            data: [0; 8],
            crc,
            crc_rx: 0,
            crc_ok: false,
            tail: Tail::Stuffed,
        }
    }

    fn crc_start(&self) -> u16 {
        (DATA_START + 8 * self.dlc as usize) as u16
    }

    fn next_raw_field(&self) -> Field {
        let i = self.raw_index as usize;
        match i {
            1..=11 => Field::Id((i - 1) as u8),
            12 => Field::Rtr,
            13 => Field::Ide,
            14 => Field::R0,
            15..=18 => Field::Dlc((i - DLC_START) as u8),
            _ if i < self.crc_start() as usize => Field::Data((i - DATA_START) as u8),
            _ => Field::Crc((i - self.crc_start() as usize) as u8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum State {
    Idle,
    Frame(FrameRx),
    Flag { sent: u8, overload: bool },
    Wait { overload: bool },
    Delimiter { seen: u8, overload: bool },
    Intermission(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoder {
    state: State,
    bit_time: u64,
    last_id: Option<u16>,
}

impl Default for Decoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Decoder {
    /// A decoder that assumes the bus is idle at bit-time 0.
    pub fn new() -> Self {
        Decoder {
            state: State::Idle,
            bit_time: 0,
            last_id: None,
        }
    }

    /// Bit-time the next fed bit is assigned.
    pub fn bit_time(&self) -> u64 {
        self.bit_time
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.state, State::Idle)
    }

    pub fn in_frame(&self) -> bool {
        matches!(self.state, State::Frame(_))
    }

    /// True while error or overload signaling is in progress.
    pub fn in_recovery(&self) -> bool {
        matches!(
            self.state,
            State::Flag { .. } | State::Wait { .. } | State::Delimiter { .. }
        )
    }

    /// Whether the identifier of the current frame has been fully received.
    pub fn arbitration_done(&self) -> bool {
        match &self.state {
            State::Frame(f) => f.raw_index as usize > ID_BITS,
            _ => false,
        }
    }

    /// Identifier of the frame in progress, once arbitration is over.
    pub fn current_id(&self) -> Option<u16> {
        match &self.state {
            State::Frame(f) if f.raw_index as usize > ID_BITS => Some(f.id),
            _ => None,
        }
    }

    /// Identifier of the most recent frame that completed arbitration.
    pub fn last_id(&self) -> Option<u16> {
        self.last_id
    }

    /// CRC verdict, valid from the CRC delimiter onwards.
    pub fn crc_ok(&self) -> bool {
        match &self.state {
            State::Frame(f) => f.crc_ok,
            _ => false,
        }
    }

    pub fn next_field(&self) -> Field {
        match &self.state {
            State::Idle => Field::Idle,
            State::Frame(f) => match f.tail {
                Tail::Stuffed if f.run_len as usize == STUFF_RUN => Field::Stuff,
                Tail::Stuffed => f.next_raw_field(),
                Tail::CrcDelimiter => Field::CrcDelimiter,
                Tail::Ack => Field::AckSlot,
                Tail::Eof(n) => Field::Eof(n),
            },
            State::Flag { sent, overload } => {
                if *overload {
                    Field::OverloadFlag(*sent)
                } else {
                    Field::ErrorFlag(*sent)
                }
            }
            State::Wait { overload } => {
                if *overload {
                    Field::OverloadWait
                } else {
                    Field::ErrorWait
                }
            }
            State::Delimiter { seen, overload } => {
                if *overload {
                    Field::OverloadDelimiter(*seen)
                } else {
                    Field::ErrorDelimiter(*seen)
                }
            }
            State::Intermission(n) => Field::Intermission(*n),
        }
    }

    /// Aborts whatever is in progress and starts error signaling with the next bit.
    /// Used by transmitters that detect a bit error the bus level alone does not show.
    pub fn force_error(&mut self) {
        self.state = State::Flag {
            sent: 0,
            overload: false,
        };
    }

    /// Consumes one resolved bus level.
    pub fn feed(&mut self, bit: BitLevel) -> Option<DecoderEvent> {
        let bit_time = self.bit_time;
        self.bit_time += 1;
        let kind = self.step(bit)?;
        Some(DecoderEvent { kind, bit_time })
    }

    fn error(&mut self, kind: DecoderEventKind) -> Option<DecoderEventKind> {
        self.state = State::Flag {
            sent: 0,
            overload: false,
        };
        Some(kind)
    }

    fn overload(&mut self) -> Option<DecoderEventKind> {
        self.state = State::Flag {
            sent: 0,
            overload: true,
        };
        Some(DecoderEventKind::Overload)
    }

    fn step(&mut self, bit: BitLevel) -> Option<DecoderEventKind> {
        use DecoderEventKind as K;
        match &mut self.state {
            State::Idle => {
                if bit.is_dominant() {
                    self.state = State::Frame(FrameRx::after_sof());
                    Some(K::SofDetected)
                } else {
                    None
                }
            }
            State::Intermission(n) => {
                if bit.is_dominant() {
                    if *n + 1 < INTERMISSION_BITS {
                        self.overload()
                    } else {
                        // Dominant third intermission bit is taken as SOF.
                        self.state = State::Frame(FrameRx::after_sof());
                        Some(K::SofDetected)
                    }
                } else {
                    *n += 1;
                    if *n == INTERMISSION_BITS {
                        self.state = State::Idle;
                    }
                    None
                }
            }
            State::Flag { sent, overload } => {
                *sent += 1;
                if *sent == FLAG_BITS {
                    self.state = State::Wait {
                        overload: *overload,
                    };
                }
                None
            }
            State::Wait { overload } => {
                if !bit.is_dominant() {
                    self.state = State::Delimiter {
                        seen: 1,
                        overload: *overload,
                    };
                }
                None
            }
            State::Delimiter { seen, overload } => {
                if bit.is_dominant() {
                    if *overload {
                        self.overload()
                    } else {
                        self.error(K::FormError)
                    }
                } else {
                    *seen += 1;
                    if *seen == DELIMITER_BITS {
                        self.state = State::Intermission(0);
                    }
                    None
                }
            }
            State::Frame(f) => match f.tail {
                Tail::Stuffed => {
                    if f.run_len as usize == STUFF_RUN {
                        if bit == f.run_level {
                            return self.error(K::StuffError {
                                active_error_flag: bit.is_dominant(),
                            });
                        }
                        f.run_level = bit;
                        f.run_len = 1;
                        if f.region_done {
                            f.tail = Tail::CrcDelimiter;
                        }
                        return Some(K::FieldProgress(Field::Stuff, f.raw_index));
                    }
                    if bit == f.run_level {
                        f.run_len += 1;
                    } else {
                        f.run_level = bit;
                        f.run_len = 1;
                    }
                    let event = Self::raw_bit(f, bit, &mut self.last_id);
                    if event == Some(K::FormError) {
                        return self.error(K::FormError);
                    }
                    event
                }
                Tail::CrcDelimiter => {
                    if bit.is_dominant() {
                        return self.error(K::FormError);
                    }
                    f.tail = Tail::Ack;
                    Some(K::FieldProgress(Field::CrcDelimiter, 0))
                }
                Tail::Ack => {
                    if f.crc_ok {
                        f.tail = Tail::Eof(0);
                        Some(K::AckSlot)
                    } else {
                        self.error(K::CrcMismatch)
                    }
                }
                Tail::Eof(n) => {
                    if n + 1 < 7 {
                        if bit.is_dominant() {
                            return self.error(K::FormError);
                        }
                        f.tail = Tail::Eof(n + 1);
                        return Some(K::FieldProgress(Field::Eof(n), n as u16));
                    }
                    let frame = FrameSpec::new(f.id, f.data[..f.dlc as usize].to_vec())
                        .expect("decoded fields are in range");
                    // The frame is already valid for receivers at the last EOF bit;
                    // a Dominant level there starts an overload frame.
                    self.state = if bit.is_dominant() {
                        State::Flag {
                            sent: 0,
                            overload: true,
                        }
                    } else {
                        State::Intermission(0)
                    };
                    Some(K::FrameComplete(frame))
                }
            },
        }
    }

    fn raw_bit(f: &mut FrameRx, bit: BitLevel, last_id: &mut Option<u16>) -> Option<DecoderEventKind> {
        use DecoderEventKind as K;
        let field = f.next_raw_field();
        let index = f.raw_index;
        let b = bit.as_bit() as u16;
        let in_crc = matches!(field, Field::Crc(_));
        if !in_crc {
            f.crc.push(bit);
        }
        f.raw_index += 1;
        let event = match field {
            Field::Id(i) => {
                f.id = (f.id << 1) | b;
                if i as usize == ID_BITS - 1 {
                    *last_id = Some(f.id);
                    Some(K::ArbitrationComplete(f.id))
                } else {
                    None
                }
            }
            // Remote and extended frames are not supported on this bus.
            Field::Rtr | Field::Ide if bit.as_bit() => return Some(K::FormError),
            Field::Dlc(_) => {
                f.dlc = ((f.dlc << 1) | b as u8) & 0xF;
                if f.raw_index as usize == DATA_START {
                    f.dlc = f.dlc.min(8);
                }
                None
            }
            Field::Data(i) => {
                let byte = &mut f.data[i as usize / 8];
                *byte = (*byte << 1) | b as u8;
                None
            }
            Field::Crc(i) => {
                f.crc_rx = (f.crc_rx << 1) | b;
                if i as usize == CRC_BITS - 1 {
                    f.region_done = true;
                    f.crc_ok = f.crc_rx == f.crc.value();
                    if (f.run_len as usize) < STUFF_RUN {
                        f.tail = Tail::CrcDelimiter;
                    }
                }
                None
            }
            _ => None,
        };
        event.or(Some(K::FieldProgress(field, index)))
    }
}
