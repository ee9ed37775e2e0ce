//! Attacker behaviors.
//!
//! Frame-injection attackers ([`FiaAgent`]) only ever ask their own conformant
//! controller to send frames. Single-bit attackers ([`SbaInjector`]) have no
//! controller: they follow the bus with a decoder and drive single Dominant bits.

use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{BitLevel, Decoder, DecoderEventKind, Field, FrameSpec};
use crate::controller::{Controller, FrameOrigin, FrameUid, Schedule};
use crate::traffic::{PayloadGen, RecordedTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    Flooding,
    Spoof,
    Replay,
    SelectiveDos,
    DoubleReceiving,
    FreezeDoomLoop,
}

impl AttackKind {
    pub fn is_fia(self) -> bool {
        matches!(self, AttackKind::Flooding | AttackKind::Spoof | AttackKind::Replay)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpoofMode {
    /// Fixed period, collisions accepted.
    Blind,
    /// Send right after each legitimate frame carrying the spoofed id.
    AfterLegit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FiaStrategy {
    Flooding { id: u16, period: u64, dlc: u8 },
    Spoof { id: u16, payload: PayloadGen, mode: SpoofMode, period: u64 },
    Replay { trace: RecordedTrace, repeat: u32 },
}

/// Drives an attacker's controller according to a [`FiaStrategy`].
#[derive(Debug, Clone)]
pub struct FiaAgent {
    strategy: FiaStrategy,
    start: u64,
    stop: Option<u64>,
    next_due: u64,
    replay_round: u32,
    replay_index: usize,
    trigger: bool,
}

impl FiaAgent {
    pub fn new(strategy: FiaStrategy, start: u64, stop: Option<u64>) -> Self {
        FiaAgent {
            strategy,
            start,
            stop,
            next_due: start,
            replay_round: 0,
            replay_index: 0,
            trigger: false,
        }
    }

    pub fn strategy(&self) -> &FiaStrategy {
        &self.strategy
    }

    pub fn kind(&self) -> AttackKind {
        match self.strategy {
            FiaStrategy::Flooding { .. } => AttackKind::Flooding,
            FiaStrategy::Spoof { .. } => AttackKind::Spoof,
            FiaStrategy::Replay { .. } => AttackKind::Replay,
        }
    }

    fn active(&self, tick: u64) -> bool {
        tick >= self.start && self.stop.is_none_or(|s| tick < s)
    }

    /// Tells an adaptive spoofer that a frame completed on the bus.
    pub fn on_received(&mut self, frame: &FrameSpec) {
        if let FiaStrategy::Spoof {
            id,
            mode: SpoofMode::AfterLegit,
            ..
        } = self.strategy
        {
            if frame.id() == id {
                self.trigger = true;
            }
        }
    }

    /// Enqueues whatever the strategy wants sent at `tick`.
    pub fn poll(&mut self, tick: u64, ctrl: &mut Controller, rng: &mut ChaCha8Rng) {
        let active = self.active(tick);
        let pending = ctrl.queue().iter().any(|q| q.origin == FrameOrigin::Attack);
        match &mut self.strategy {
            FiaStrategy::Flooding { id, period, dlc } => {
                if active && tick >= self.next_due {
                    self.next_due = tick + (*period).max(1);
                    if !pending {
                        let frame = FrameSpec::new(*id, vec![0u8; *dlc as usize]).expect("validated");
                        ctrl.enqueue_as(frame, Schedule::Now, FrameOrigin::Attack);
                    }
                }
            }
            FiaStrategy::Spoof {
                id,
                payload,
                mode,
                period,
            } => {
                let fire = match mode {
                    SpoofMode::Blind => active && tick >= self.next_due,
                    SpoofMode::AfterLegit => std::mem::take(&mut self.trigger) && active,
                };
                if fire {
                    self.next_due = tick + (*period).max(1);
                    if !pending {
                        let frame = FrameSpec::new(*id, payload.next(rng)).expect("validated");
                        ctrl.enqueue_as(frame, Schedule::Now, FrameOrigin::Attack);
                    }
                }
            }
            FiaStrategy::Replay { trace, repeat } => {
                if !active {
                    return;
                }
                let span = trace.span().max(1);
                while self.replay_round < *repeat && !trace.frames.is_empty() {
                    let (rel, frame) = &trace.frames[self.replay_index];
                    if self.start + self.replay_round as u64 * span + rel > tick {
                        break;
                    }
                    ctrl.enqueue_as(frame.clone(), Schedule::Now, FrameOrigin::Attack);
                    self.replay_index += 1;
                    if self.replay_index == trace.frames.len() {
                        self.replay_index = 0;
                        self.replay_round += 1;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SbaStrategy {
    SelectiveDos { target_id: u16, max_hits: u32 },
    DoubleReceiving { target_id: u16, max_hits: u32 },
    FreezeDoomLoop { duration: u64 },
}

/// A single Dominant bit placed by an SBA attacker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Injection {
    pub kind: AttackKind,
    pub frame_id: u16,
    /// Bits after the arbitration field, or `None` outside a frame.
    pub bit_position: Option<u16>,
}

/// Transceiver-only bit injector.
#[derive(Debug, Clone)]
pub struct SbaInjector {
    strategy: SbaStrategy,
    start: u64,
    decoder: Decoder,
    hits: u32,
    armed: bool,
    skip_next: bool,
    arb_tick: u64,
}

impl SbaInjector {
    pub fn new(strategy: SbaStrategy, start: u64) -> Self {
        SbaInjector {
            strategy,
            start,
            decoder: Decoder::new(),
            hits: 0,
            armed: false,
            skip_next: false,
            arb_tick: 0,
        }
    }

    pub fn strategy(&self) -> SbaStrategy {
        self.strategy
    }

    pub fn hits(&self) -> u32 {
        self.hits
    }

    pub fn kind(&self) -> AttackKind {
        match self.strategy {
            SbaStrategy::SelectiveDos { .. } => AttackKind::SelectiveDos,
            SbaStrategy::DoubleReceiving { .. } => AttackKind::DoubleReceiving,
            SbaStrategy::FreezeDoomLoop { .. } => AttackKind::FreezeDoomLoop,
        }
    }

    /// Decides whether to pull the bus Dominant at `tick`. `provisional` is the
    /// level the other drivers have put on the bus so far this bit.
    pub fn drive(&mut self, tick: u64, provisional: BitLevel) -> Option<Injection> {
        if tick < self.start {
            return None;
        }
        let field = self.decoder.next_field();
        let offset = (tick - self.arb_tick) as u16;
        let injection = match self.strategy {
            SbaStrategy::SelectiveDos { target_id, max_hits } => {
                let hit = self.armed
                    && self.hits < max_hits
                    && field.is_body()
                    && !provisional.is_dominant();
                hit.then(|| {
                    self.armed = false;
                    Injection {
                        kind: AttackKind::SelectiveDos,
                        frame_id: target_id,
                        bit_position: Some(offset),
                    }
                })
            }
            SbaStrategy::DoubleReceiving { target_id, max_hits } => {
                let hit = field == Field::Eof(6)
                    && self.decoder.last_id() == Some(target_id)
                    && self.hits < max_hits;
                if hit && std::mem::take(&mut self.skip_next) {
                    None
                } else {
                    hit.then(|| {
                        self.skip_next = true;
                        Injection {
                            kind: AttackKind::DoubleReceiving,
                            frame_id: target_id,
                            bit_position: Some(offset),
                        }
                    })
                }
            }
            SbaStrategy::FreezeDoomLoop { duration } => {
                let hit = tick < self.start.saturating_add(duration) && field == Field::Intermission(0);
                hit.then(|| Injection {
                    kind: AttackKind::FreezeDoomLoop,
                    frame_id: self.decoder.last_id().unwrap_or(0),
                    bit_position: None,
                })
            }
        };
        if injection.is_some() {
            self.hits += 1;
        }
        injection
    }

    pub fn sense(&mut self, tick: u64, resolved: BitLevel) {
        if let Some(ev) = self.decoder.feed(resolved) {
            if let DecoderEventKind::ArbitrationComplete(id) = ev.kind {
                self.arb_tick = tick;
                if let SbaStrategy::SelectiveDos { target_id, .. } = self.strategy {
                    self.armed = id == target_id && tick >= self.start;
                }
            }
        }
        if !self.decoder.in_frame() {
            self.armed = false;
        }
    }
}

/// Ground-truth record of one attack action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub bit_time: u64,
    pub kind: AttackKind,
    pub frame_id: u16,
    pub attacker: u16,
    /// Bits after the arbitration field for bit injections.
    pub bit_position: Option<u16>,
    /// The frame attempt the action concerns: the attacker's own attempt for
    /// frame injections, the victim's attempt for bit injections.
    pub attempt: Option<(FrameUid, u32)>,
}

/// Append-only attack ground truth.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackLog {
    records: Vec<AttackRecord>,
}

impl AttackLog {
    pub fn push(&mut self, record: AttackRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[AttackRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn flooding_keeps_one_frame_pending() {
        let mut ctrl = Controller::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = FiaAgent::new(FiaStrategy::Flooding { id: 1, period: 10, dlc: 0 }, 5, None);
        for t in 0..100 {
            ctrl.drive(t);
            a.poll(t, &mut ctrl, &mut rng);
        }
        assert_eq!(ctrl.queue().len(), 1);
        assert_eq!(ctrl.queue()[0].origin, FrameOrigin::Attack);
    }

    #[test]
    fn after_legit_waits_for_trigger() {
        let mut ctrl = Controller::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let strategy = FiaStrategy::Spoof {
            id: 0x50,
            payload: PayloadGen::Fixed(vec![0xFF]),
            mode: SpoofMode::AfterLegit,
            period: 1,
        };
        let mut a = FiaAgent::new(strategy, 0, None);
        a.poll(0, &mut ctrl, &mut rng);
        assert!(ctrl.queue().is_empty());
        a.on_received(&FrameSpec::new(0x51, vec![]).unwrap());
        a.poll(1, &mut ctrl, &mut rng);
        assert!(ctrl.queue().is_empty());
        a.on_received(&FrameSpec::new(0x50, vec![1]).unwrap());
        a.poll(2, &mut ctrl, &mut rng);
        assert_eq!(ctrl.queue().len(), 1);
        assert_eq!(ctrl.queue()[0].frame.payload(), &[0xFF]);
    }

    #[test]
    fn injector_waits_for_start() {
        let mut inj = SbaInjector::new(SbaStrategy::FreezeDoomLoop { duration: 10 }, 100);
        assert!(inj.drive(0, BitLevel::Recessive).is_none());
        assert_eq!(inj.kind(), AttackKind::FreezeDoomLoop);
    }
}
