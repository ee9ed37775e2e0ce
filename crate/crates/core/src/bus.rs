//! The simulated bus: a wired-AND medium advanced one bit-time per tick.
//!
//! Each tick runs in phases:
//! 1. every controller and the officer choose their level; single-bit
//!    attackers then see that provisional level and may add a Dominant bit;
//! 2. the levels are wired-AND resolved;
//! 3. a reference decoder follows the bus and records delivered frames;
//! 4. every node senses the resolved level and the officer samples its taps.
//!
//! Nodes are visited in ascending node id order.

use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, AttackLog, AttackRecord, FiaAgent, SbaInjector};
use crate::codec::{wired_and, BitLevel, Decoder, DecoderEventKind, FrameSpec};
use crate::controller::{Controller, ControllerEvent, FrameOrigin, FrameUid, Schedule};
use crate::error::BusError;
use crate::officer::{Officer, TapId};
use crate::traffic::TrafficSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Ecu,
    SensorEcu,
    Dashboard,
    BackgroundSimulator,
    FiaAttacker,
    SbaAttacker,
    Officer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeHandle {
    pub node_id: u16,
    pub kind: NodeKind,
    pub tap: Option<TapId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Delivered,
    ArbitrationLost,
    ErrorAborted,
    PreventedByOfficer,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub bit_time: u64,
    pub node_id: u16,
    pub frame: FrameSpec,
    pub outcome: Outcome,
    pub retransmission_count: u32,
    pub uid: FrameUid,
    pub origin: FrameOrigin,
}

impl TraceRecord {
    /// `bit_time node_id id dlc payload_hex outcome retrans`
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {:03X} {} {} {} {}",
            self.bit_time,
            self.node_id,
            self.frame.id(),
            self.frame.dlc(),
            self.frame.payload_hex(),
            self.outcome,
            self.retransmission_count
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusTick {
    pub time: u64,
    pub resolved: BitLevel,
    /// Levels driven this tick, by node id.
    pub drivers: Vec<(u16, BitLevel)>,
}

/// A node with a CAN controller: ECUs, dashboard, background simulator and
/// frame-injection attackers.
#[derive(Debug, Clone)]
pub struct Station {
    pub ctrl: Controller,
    pub sources: Vec<TrafficSource>,
    pub fia: Option<FiaAgent>,
    rng: ChaCha8Rng,
    release: Vec<FrameSpec>,
}

impl Station {
    pub fn new(ctrl: Controller, seed: u64) -> Self {
        Station {
            ctrl,
            sources: Vec::new(),
            fia: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            release: Vec::new(),
        }
    }

    pub fn with_source(mut self, source: TrafficSource) -> Self {
        self.sources.push(source);
        self
    }

    pub fn with_fia(mut self, agent: FiaAgent) -> Self {
        self.fia = Some(agent);
        self
    }

    fn poll(&mut self, tick: u64) {
        for src in &mut self.sources {
            src.poll(tick, &mut self.rng, &mut self.release);
        }
        for frame in self.release.drain(..) {
            self.ctrl.enqueue(frame, Schedule::Now);
        }
        if let Some(fia) = &mut self.fia {
            fia.poll(tick, &mut self.ctrl, &mut self.rng);
        }
    }
}

#[derive(Debug, Clone)]
pub enum NodeBehavior {
    Station(Box<Station>),
    Injector(SbaInjector),
    Officer(Box<Officer>),
}

#[derive(Debug, Clone)]
struct Node {
    handle: NodeHandle,
    behavior: NodeBehavior,
    level: BitLevel,
}

#[derive(Debug, Clone)]
pub struct Bus {
    time: u64,
    nodes: Vec<Node>,
    officer: Option<usize>,
    next_tap: TapId,
    monitor: Decoder,
    trace: Vec<TraceRecord>,
    attack_log: AttackLog,
    taps: Vec<(TapId, BitLevel)>,
    record_ticks: bool,
    last_tick: Option<BusTick>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus {
    pub fn new() -> Self {
        Bus {
            time: 0,
            nodes: Vec::new(),
            officer: None,
            next_tap: 0,
            monitor: Decoder::new(),
            trace: Vec::new(),
            attack_log: AttackLog::default(),
            taps: Vec::new(),
            record_ticks: false,
            last_tick: None,
        }
    }

    /// Keep the driver table of the latest tick for inspection.
    pub fn record_ticks(&mut self, on: bool) {
        self.record_ticks = on;
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    /// Adds a node at the next tick boundary. A monitored node gets a tap.
    pub fn attach(
        &mut self,
        node_id: u16,
        kind: NodeKind,
        monitored: bool,
        behavior: NodeBehavior,
    ) -> Result<NodeHandle, BusError> {
        if self.nodes.iter().any(|n| n.handle.node_id == node_id) {
            return Err(BusError::DuplicateNode(node_id));
        }
        let is_officer = matches!(behavior, NodeBehavior::Officer(_));
        if is_officer && self.officer.is_some() {
            return Err(BusError::SecondOfficer);
        }
        let tap = (monitored && !is_officer).then(|| {
            self.next_tap += 1;
            self.next_tap - 1
        });
        let handle = NodeHandle { node_id, kind, tap };
        let pos = self.nodes.partition_point(|n| n.handle.node_id < node_id);
        self.nodes.insert(
            pos,
            Node {
                handle,
                behavior,
                level: BitLevel::Recessive,
            },
        );
        self.officer = self
            .nodes
            .iter()
            .position(|n| matches!(n.behavior, NodeBehavior::Officer(_)));
        Ok(handle)
    }

    pub fn handles(&self) -> Vec<NodeHandle> {
        self.nodes.iter().map(|n| n.handle).collect()
    }

    pub fn handle(&self, node_id: u16) -> Option<NodeHandle> {
        self.nodes.iter().find(|n| n.handle.node_id == node_id).map(|n| n.handle)
    }

    pub fn station(&self, node_id: u16) -> Option<&Station> {
        self.nodes.iter().find_map(|n| match &n.behavior {
            NodeBehavior::Station(s) if n.handle.node_id == node_id => Some(s.as_ref()),
            _ => None,
        })
    }

    pub fn station_mut(&mut self, node_id: u16) -> Option<&mut Station> {
        self.nodes.iter_mut().find_map(|n| match &mut n.behavior {
            NodeBehavior::Station(s) if n.handle.node_id == node_id => Some(s.as_mut()),
            _ => None,
        })
    }

    pub fn injector(&self, node_id: u16) -> Option<&SbaInjector> {
        self.nodes.iter().find_map(|n| match &n.behavior {
            NodeBehavior::Injector(i) if n.handle.node_id == node_id => Some(i),
            _ => None,
        })
    }

    pub fn officer(&self) -> Option<&Officer> {
        self.officer.map(|i| match &self.nodes[i].behavior {
            NodeBehavior::Officer(o) => o.as_ref(),
            _ => unreachable!("officer index points at an officer"),
        })
    }

    /// Removes the officer and hands it back, e.g. to finish learning.
    pub fn take_officer(&mut self) -> Option<Officer> {
        let i = self.officer.take()?;
        match self.nodes.remove(i).behavior {
            NodeBehavior::Officer(o) => Some(*o),
            _ => unreachable!("officer index points at an officer"),
        }
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn attack_log(&self) -> &AttackLog {
        &self.attack_log
    }

    pub fn monitor(&self) -> &Decoder {
        &self.monitor
    }

    pub fn last_tick(&self) -> Option<&BusTick> {
        self.last_tick.as_ref()
    }

    /// Node id and current attempt of the controller on the wire, if any.
    fn transmitter(&self) -> Option<(u16, FrameUid, u32, FrameOrigin)> {
        self.nodes.iter().find_map(|n| match &n.behavior {
            NodeBehavior::Station(s) => s
                .ctrl
                .transmitting()
                .map(|q| (n.handle.node_id, q.uid, q.retransmissions, q.origin)),
            _ => None,
        })
    }

    /// Advances one bit-time.
    pub fn step(&mut self) -> BitLevel {
        let t = self.time;

        // Phase 1: controllers and officer.
        for node in &mut self.nodes {
            node.level = match &mut node.behavior {
                NodeBehavior::Station(s) => {
                    s.poll(t);
                    s.ctrl.drive(t)
                }
                NodeBehavior::Officer(o) => o.drive(t),
                NodeBehavior::Injector(_) => BitLevel::Recessive,
            };
        }
        let provisional = wired_and(self.nodes.iter().map(|n| n.level));
        let mut injections = Vec::new();
        for node in &mut self.nodes {
            if let NodeBehavior::Injector(inj) = &mut node.behavior {
                if let Some(injection) = inj.drive(t, provisional) {
                    node.level = BitLevel::Dominant;
                    injections.push((node.handle.node_id, injection));
                }
            }
        }

        // Phase 2.
        let resolved = wired_and(self.nodes.iter().map(|n| n.level));

        // Phase 3: reference decoder and ground truth for bit injections.
        let event = self.monitor.feed(resolved);
        let transmitter = if injections.is_empty() && event.is_none() {
            None
        } else {
            self.transmitter()
        };
        for (attacker, inj) in injections {
            self.attack_log.push(AttackRecord {
                bit_time: t,
                kind: inj.kind,
                frame_id: inj.frame_id,
                attacker,
                bit_position: inj.bit_position,
                attempt: transmitter.map(|(_, uid, r, _)| (uid, r)),
            });
        }
        if let Some(DecoderEventKind::FrameComplete(frame)) = event.map(|e| e.kind) {
            if let Some((node_id, uid, retrans, origin)) = transmitter {
                self.trace.push(TraceRecord {
                    bit_time: t,
                    node_id,
                    frame,
                    outcome: Outcome::Delivered,
                    retransmission_count: retrans,
                    uid,
                    origin,
                });
            }
        }

        // Phase 4: sense.
        self.taps.clear();
        self.taps.extend(
            self.nodes
                .iter()
                .filter_map(|n| n.handle.tap.map(|tap| (tap, n.level))),
        );
        let preventing = self.officer().is_some_and(|o| o.is_preventing());
        let mut received = Vec::new();
        for node in &mut self.nodes {
            let id = node.handle.node_id;
            match &mut node.behavior {
                NodeBehavior::Station(s) => {
                    let Some(ev) = s.ctrl.sense(resolved) else { continue };
                    match ev {
                        ControllerEvent::ArbitrationWon {
                            uid,
                            frame_id,
                            retransmissions,
                            origin: FrameOrigin::Attack,
                        } => {
                            let kind = s.fia.as_ref().map_or(AttackKind::Spoof, |f| f.kind());
                            self.attack_log.push(AttackRecord {
                                bit_time: t,
                                kind,
                                frame_id,
                                attacker: id,
                                bit_position: None,
                                attempt: Some((uid, retransmissions)),
                            });
                        }
                        ControllerEvent::ArbitrationLost {
                            uid,
                            frame,
                            retransmissions,
                        } => {
                            let origin = s.ctrl.queue().front().map_or(FrameOrigin::Legit, |q| q.origin);
                            self.trace.push(TraceRecord {
                                bit_time: t,
                                node_id: id,
                                frame,
                                outcome: Outcome::ArbitrationLost,
                                retransmission_count: retransmissions,
                                uid,
                                origin,
                            });
                        }
                        ControllerEvent::TxError {
                            uid,
                            frame,
                            retransmissions,
                            ..
                        } => {
                            let origin = s.ctrl.queue().front().map_or(FrameOrigin::Legit, |q| q.origin);
                            self.trace.push(TraceRecord {
                                bit_time: t,
                                node_id: id,
                                frame,
                                outcome: if preventing {
                                    Outcome::PreventedByOfficer
                                } else {
                                    Outcome::ErrorAborted
                                },
                                retransmission_count: retransmissions,
                                uid,
                                origin,
                            });
                        }
                        ControllerEvent::Received(frame) if s.fia.is_some() => {
                            received.push((id, frame));
                        }
                        _ => {}
                    }
                }
                NodeBehavior::Injector(inj) => inj.sense(t, resolved),
                NodeBehavior::Officer(o) => o.observe(t, resolved, &self.taps),
            }
        }
        for (id, frame) in received {
            if let Some(fia) = self.station_mut(id).and_then(|s| s.fia.as_mut()) {
                fia.on_received(&frame);
            }
        }

        if self.record_ticks {
            self.last_tick = Some(BusTick {
                time: t,
                resolved,
                drivers: self.nodes.iter().map(|n| (n.handle.node_id, n.level)).collect(),
            });
        }
        self.time += 1;
        resolved
    }

    /// Advances `ticks` bit-times and returns the trace records produced.
    pub fn run(&mut self, ticks: u64) -> &[TraceRecord] {
        let start = self.trace.len();
        for _ in 0..ticks {
            self.step();
        }
        &self.trace[start..]
    }

    pub fn write_trace(&self, out: &mut impl Write) -> std::io::Result<()> {
        for r in &self.trace {
            writeln!(out, "{}", r.to_line())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn station(tag: u16) -> NodeBehavior {
        NodeBehavior::Station(Box::new(Station::new(Controller::new(tag), tag as u64)))
    }

    #[test]
    fn duplicate_and_second_officer_rejected() {
        let mut bus = Bus::new();
        bus.attach(1, NodeKind::Ecu, true, station(1)).unwrap();
        assert_eq!(
            bus.attach(1, NodeKind::Ecu, true, station(1)),
            Err(BusError::DuplicateNode(1))
        );
        bus.attach(9, NodeKind::Officer, false, NodeBehavior::Officer(Box::new(Officer::learning())))
            .unwrap();
        assert_eq!(
            bus.attach(10, NodeKind::Officer, false, NodeBehavior::Officer(Box::new(Officer::learning()))),
            Err(BusError::SecondOfficer)
        );
    }

    #[test]
    fn taps_allocated_for_monitored_nodes_only() {
        let mut bus = Bus::new();
        let o = bus
            .attach(0, NodeKind::Officer, true, NodeBehavior::Officer(Box::new(Officer::learning())))
            .unwrap();
        let a = bus.attach(3, NodeKind::Ecu, true, station(3)).unwrap();
        let b = bus.attach(2, NodeKind::Ecu, false, station(2)).unwrap();
        let c = bus.attach(1, NodeKind::Ecu, true, station(1)).unwrap();
        assert_eq!(o.tap, None);
        assert_eq!((a.tap, b.tap, c.tap), (Some(0), None, Some(1)));
        let ids: Vec<u16> = bus.handles().iter().map(|h| h.node_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn idle_bus_is_recessive() {
        let mut bus = Bus::new();
        bus.attach(1, NodeKind::Ecu, false, station(1)).unwrap();
        assert!(bus.run(0).is_empty());
        for _ in 0..50 {
            assert_eq!(bus.step(), BitLevel::Recessive);
        }
    }
}
