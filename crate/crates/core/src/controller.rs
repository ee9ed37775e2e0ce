//! CAN controller state machine.
//!
//! A controller drives one level per bit-time and then senses the resolved bus.
//! Frame position and error/overload signaling are tracked by an embedded
//! [`Decoder`]; the controller adds transmission, arbitration, ACK and the
//! fault-confinement counters on top of it.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::codec::{transmit_levels, BitLevel, Decoder, DecoderEventKind, Field, FrameSpec};

pub type FrameUid = u64;

/// Transmit-error counter threshold above which a node is error-passive.
pub const PASSIVE_THRESHOLD: u32 = 127;
/// Transmit-error counter threshold above which a node is bus-off.
pub const BUS_OFF_THRESHOLD: u32 = 255;
const SUSPEND_BITS: u8 = 8;
const RECOVERY_SEQUENCES: u16 = 128;
const RECOVERY_RUN: u8 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorState {
    ErrorActive,
    ErrorPassive,
    BusOff,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounters {
    pub tec: u32,
    pub rec: u32,
}

impl ErrorCounters {
    pub fn state(&self) -> ErrorState {
        if self.tec > BUS_OFF_THRESHOLD {
            ErrorState::BusOff
        } else if self.tec > PASSIVE_THRESHOLD || self.rec > PASSIVE_THRESHOLD {
            ErrorState::ErrorPassive
        } else {
            ErrorState::ErrorActive
        }
    }

    pub fn on_tx_error(&mut self) {
        self.tec += 8;
    }

    pub fn on_rx_error(&mut self) {
        self.rec += 1;
    }

    pub fn on_tx_success(&mut self) {
        self.tec = self.tec.saturating_sub(1);
    }

    pub fn on_rx_success(&mut self) {
        self.rec = self.rec.saturating_sub(1);
    }
}

/// Who asked for a frame to be sent. Carried through the controller so the
/// harness can separate ground-truth attack traffic from legitimate traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameOrigin {
    Legit,
    Attack,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueuedFrame {
    pub frame: FrameSpec,
    pub uid: FrameUid,
    pub origin: FrameOrigin,
    /// Attempts that ended in an error so far.
    pub retransmissions: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Now,
    /// First release at the current tick, then every `period` bit-times.
    Periodic(u64),
    AtTick(u64),
}

#[derive(Debug, Clone)]
struct Scheduled {
    frame: FrameSpec,
    origin: FrameOrigin,
    due: u64,
    period: Option<u64>,
}

#[derive(Debug, Clone)]
struct TxState {
    bits: Vec<BitLevel>,
    pos: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerPhase {
    Idle,
    Arbitrating,
    Transmitting,
    Receiving,
    ErrorSignaling,
    Suspended,
    BusOff,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControllerEvent {
    ArbitrationWon {
        uid: FrameUid,
        frame_id: u16,
        retransmissions: u32,
        origin: FrameOrigin,
    },
    ArbitrationLost {
        uid: FrameUid,
        frame: FrameSpec,
        retransmissions: u32,
    },
    TxError {
        uid: FrameUid,
        frame: FrameSpec,
        retransmissions: u32,
        bus_off: bool,
    },
    TxSuccess {
        uid: FrameUid,
        retransmissions: u32,
    },
    Received(FrameSpec),
    RxError,
    Recovered,
}

#[derive(Debug, Clone)]
pub struct Controller {
    decoder: Decoder,
    counters: ErrorCounters,
    queue: VecDeque<QueuedFrame>,
    scheduled: Vec<Scheduled>,
    tx: Option<TxState>,
    cantx: BitLevel,
    error_as_tx: bool,
    suspend_pending: bool,
    suspend_left: u8,
    uid_base: u64,
    next_seq: u64,
    now: u64,
    busoff_recovery: bool,
    recessive_run: u8,
    recovery_sequences: u16,
    bus_off_since: Option<u64>,
}

impl Controller {
    /// `uid_tag` namespaces the frame uids this controller hands out.
    pub fn new(uid_tag: u16) -> Self {
        Controller {
            decoder: Decoder::new(),
            counters: ErrorCounters::default(),
            queue: VecDeque::new(),
            scheduled: Vec::new(),
            tx: None,
            cantx: BitLevel::Recessive,
            error_as_tx: false,
            suspend_pending: false,
            suspend_left: 0,
            uid_base: (uid_tag as u64) << 40,
            next_seq: 0,
            now: 0,
            busoff_recovery: false,
            recessive_run: 0,
            recovery_sequences: 0,
            bus_off_since: None,
        }
    }

    /// Rejoin after 128 sequences of 11 recessive bits instead of staying bus-off.
    pub fn with_busoff_recovery(mut self, enabled: bool) -> Self {
        self.busoff_recovery = enabled;
        self
    }

    pub fn counters(&self) -> ErrorCounters {
        self.counters
    }

    pub fn error_state(&self) -> ErrorState {
        self.counters.state()
    }

    pub fn is_bus_off(&self) -> bool {
        self.error_state() == ErrorState::BusOff
    }

    pub fn bus_off_since(&self) -> Option<u64> {
        self.bus_off_since
    }

    pub fn queue(&self) -> &VecDeque<QueuedFrame> {
        &self.queue
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// Level on the CANTX pin for the current bit-time.
    pub fn cantx_level(&self) -> BitLevel {
        self.cantx
    }

    pub fn phase(&self) -> ControllerPhase {
        if self.is_bus_off() {
            return ControllerPhase::BusOff;
        }
        if self.tx.is_some() {
            return if self.decoder.arbitration_done() {
                ControllerPhase::Transmitting
            } else {
                ControllerPhase::Arbitrating
            };
        }
        if self.decoder.in_frame() {
            return ControllerPhase::Receiving;
        }
        if self.decoder.in_recovery() {
            return ControllerPhase::ErrorSignaling;
        }
        if self.suspend_left > 0 {
            return ControllerPhase::Suspended;
        }
        ControllerPhase::Idle
    }

    /// The frame currently on the wire from this controller, if any.
    pub fn transmitting(&self) -> Option<&QueuedFrame> {
        self.tx.as_ref().and_then(|_| self.queue.front())
    }

    pub fn enqueue(&mut self, frame: FrameSpec, schedule: Schedule) -> bool {
        self.enqueue_as(frame, schedule, FrameOrigin::Legit)
    }

    /// Queues a frame. Returns false when the controller is bus-off.
    pub fn enqueue_as(&mut self, frame: FrameSpec, schedule: Schedule, origin: FrameOrigin) -> bool {
        if self.is_bus_off() {
            return false;
        }
        match schedule {
            Schedule::Now => self.push(frame, origin),
            Schedule::AtTick(t) => self.scheduled.push(Scheduled {
                frame,
                origin,
                due: t,
                period: None,
            }),
            Schedule::Periodic(period) => self.scheduled.push(Scheduled {
                frame,
                origin,
                due: self.now,
                period: Some(period.max(1)),
            }),
        }
        true
    }

    fn push(&mut self, frame: FrameSpec, origin: FrameOrigin) {
        let uid = self.uid_base | self.next_seq;
        self.next_seq += 1;
        self.queue.push_back(QueuedFrame {
            frame,
            uid,
            origin,
            retransmissions: 0,
        });
    }

    fn release_scheduled(&mut self, tick: u64) {
        if self.scheduled.is_empty() {
            return;
        }
        let mut released = Vec::new();
        self.scheduled.retain_mut(|s| {
            if s.due > tick {
                return true;
            }
            released.push((s.frame.clone(), s.origin));
            match s.period {
                Some(p) => {
                    s.due += p;
                    true
                }
                None => false,
            }
        });
        if self.is_bus_off() {
            return;
        }
        for (frame, origin) in released {
            self.push(frame, origin);
        }
    }

    /// Level this controller drives at `tick`. Call once per tick before [`Controller::sense`].
    pub fn drive(&mut self, tick: u64) -> BitLevel {
        self.now = tick;
        self.release_scheduled(tick);
        self.cantx = self.compute_drive();
        self.cantx
    }

    fn compute_drive(&mut self) -> BitLevel {
        let state = self.error_state();
        if state == ErrorState::BusOff {
            return BitLevel::Recessive;
        }
        if let Some(tx) = &self.tx {
            return tx.bits[tx.pos];
        }
        match self.decoder.next_field() {
            Field::Idle if self.suspend_left == 0 => match self.queue.front() {
                Some(q) => {
                    let bits = transmit_levels(&q.frame);
                    let sof = bits[0];
                    self.tx = Some(TxState { bits, pos: 0 });
                    sof
                }
                None => BitLevel::Recessive,
            },
            // Error-passive receivers still acknowledge.
            Field::AckSlot if self.decoder.crc_ok() => BitLevel::Dominant,
            Field::ErrorFlag(_) if state == ErrorState::ErrorActive => BitLevel::Dominant,
            Field::OverloadFlag(_) => BitLevel::Dominant,
            _ => BitLevel::Recessive,
        }
    }

    /// Observes the resolved bus level for the tick passed to the last `drive`.
    pub fn sense(&mut self, resolved: BitLevel) -> Option<ControllerEvent> {
        if self.is_bus_off() {
            self.decoder.feed(resolved);
            return self.sense_bus_off(resolved);
        }
        let field = self.decoder.next_field();
        let arbitrating = !self.decoder.arbitration_done();
        let event = self.decoder.feed(resolved).map(|e| e.kind);

        if matches!(field, Field::Intermission(2)) && self.decoder.is_idle() && self.suspend_pending {
            self.suspend_pending = false;
            self.suspend_left = SUSPEND_BITS;
        } else if matches!(field, Field::Idle) && self.suspend_left > 0 {
            if resolved.is_dominant() {
                self.suspend_left = 0;
            } else {
                self.suspend_left -= 1;
            }
        }
        if matches!(event, Some(DecoderEventKind::SofDetected)) {
            self.error_as_tx = false;
        }

        if self.tx.is_some() {
            return self.sense_transmitting(field, arbitrating, resolved, event);
        }

        match event {
            Some(
                DecoderEventKind::StuffError { .. }
                | DecoderEventKind::FormError
                | DecoderEventKind::CrcMismatch,
            ) => {
                if matches!(field, Field::ErrorDelimiter(_)) && self.error_as_tx {
                    self.counters.on_tx_error();
                    if self.is_bus_off() {
                        self.enter_bus_off();
                    }
                } else {
                    if !matches!(field, Field::ErrorDelimiter(_)) {
                        self.error_as_tx = false;
                    }
                    self.counters.on_rx_error();
                }
                Some(ControllerEvent::RxError)
            }
            Some(DecoderEventKind::FrameComplete(frame)) => {
                self.counters.on_rx_success();
                Some(ControllerEvent::Received(frame))
            }
            _ => None,
        }
    }

    fn sense_transmitting(
        &mut self,
        field: Field,
        arbitrating: bool,
        resolved: BitLevel,
        event: Option<DecoderEventKind>,
    ) -> Option<ControllerEvent> {
        let tx = self.tx.as_mut().expect("transmitting");
        let driven = tx.bits[tx.pos];
        if let Some(
            DecoderEventKind::StuffError { .. } | DecoderEventKind::FormError | DecoderEventKind::CrcMismatch,
        ) = &event
        {
            return Some(self.tx_error());
        }
        if arbitrating && driven != resolved {
            if !driven.is_dominant() {
                self.tx = None;
                let q = self.queue.front().expect("head frame");
                return Some(ControllerEvent::ArbitrationLost {
                    uid: q.uid,
                    frame: q.frame.clone(),
                    retransmissions: q.retransmissions,
                });
            }
            self.decoder.force_error();
            return Some(self.tx_error());
        }
        if field == Field::AckSlot {
            if !resolved.is_dominant() {
                self.decoder.force_error();
                return Some(self.tx_error());
            }
        } else if driven != resolved {
            self.decoder.force_error();
            return Some(self.tx_error());
        }
        tx.pos += 1;
        match event {
            Some(DecoderEventKind::ArbitrationComplete(id)) => {
                let q = self.queue.front().expect("head frame");
                Some(ControllerEvent::ArbitrationWon {
                    uid: q.uid,
                    frame_id: id,
                    retransmissions: q.retransmissions,
                    origin: q.origin,
                })
            }
            Some(DecoderEventKind::FrameComplete(_)) => {
                self.tx = None;
                self.counters.on_tx_success();
                if self.error_state() == ErrorState::ErrorPassive {
                    self.suspend_pending = true;
                }
                let q = self.queue.pop_front().expect("head frame");
                Some(ControllerEvent::TxSuccess {
                    uid: q.uid,
                    retransmissions: q.retransmissions,
                })
            }
            _ => None,
        }
    }

    fn tx_error(&mut self) -> ControllerEvent {
        self.tx = None;
        self.error_as_tx = true;
        self.counters.on_tx_error();
        let q = self.queue.front_mut().expect("head frame");
        let event = ControllerEvent::TxError {
            uid: q.uid,
            frame: q.frame.clone(),
            retransmissions: q.retransmissions,
            bus_off: false,
        };
        q.retransmissions += 1;
        match self.error_state() {
            ErrorState::BusOff => {
                self.enter_bus_off();
                match event {
                    ControllerEvent::TxError {
                        uid,
                        frame,
                        retransmissions,
                        ..
                    } => ControllerEvent::TxError {
                        uid,
                        frame,
                        retransmissions,
                        bus_off: true,
                    },
                    other => other,
                }
            }
            ErrorState::ErrorPassive => {
                self.suspend_pending = true;
                event
            }
            ErrorState::ErrorActive => event,
        }
    }

    fn enter_bus_off(&mut self) {
        self.tx = None;
        self.bus_off_since = Some(self.now);
        self.suspend_pending = false;
        self.suspend_left = 0;
        self.recessive_run = 0;
        self.recovery_sequences = 0;
    }

    fn sense_bus_off(&mut self, resolved: BitLevel) -> Option<ControllerEvent> {
        if !self.busoff_recovery {
            return None;
        }
        if resolved.is_dominant() {
            self.recessive_run = 0;
            return None;
        }
        self.recessive_run += 1;
        if self.recessive_run == RECOVERY_RUN {
            self.recessive_run = 0;
            self.recovery_sequences += 1;
            if self.recovery_sequences == RECOVERY_SEQUENCES {
                self.counters = ErrorCounters::default();
                self.bus_off_since = None;
                return Some(ControllerEvent::Recovered);
            }
        }
        None
    }
}
