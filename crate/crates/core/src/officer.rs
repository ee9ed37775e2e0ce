//! The monitoring node. It has no controller: it decodes the resolved bus in
//! software, samples the CANTX taps of the ECUs wired to it, and may pull the
//! bus Dominant to kill a frame.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::decoder::{DELIMITER_BITS, FLAG_BITS};
use crate::codec::{BitLevel, Decoder, DecoderEventKind, Field};
use crate::error::{ConfigError, LearnError, PreventError};

pub type TapId = u16;

/// Bits after the arbitration field within which the owner must drive Dominant.
pub const ERROR1_WINDOW: u64 = 6;
/// Dominant bits driven to kill a frame.
pub const KILL_BITS: u8 = FLAG_BITS;
/// Delimiter injections after the kill; with the kill this is 32 transmit errors.
pub const ESCALATION_INJECTIONS: u32 = 31;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllowlistTable {
    entries: BTreeMap<TapId, BTreeSet<u16>>,
    /// Ids seen with no tap active: sent by unmonitored ECUs.
    unmonitored: BTreeSet<u16>,
}

impl AllowlistTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tap: TapId, id: u16) -> Result<(), LearnError> {
        if let Some(owner) = self.owner(id) {
            if owner != tap {
                return Err(LearnError::AmbiguousOwner {
                    id,
                    first: format!("tap {owner}"),
                    second: format!("tap {tap}"),
                });
            }
            return Ok(());
        }
        self.unmonitored.remove(&id);
        self.entries.entry(tap).or_default().insert(id);
        Ok(())
    }

    pub fn insert_unmonitored(&mut self, id: u16) {
        if self.owner(id).is_none() {
            self.unmonitored.insert(id);
        }
    }

    pub fn owner(&self, id: u16) -> Option<TapId> {
        self.entries
            .iter()
            .find(|(_, ids)| ids.contains(&id))
            .map(|(&tap, _)| tap)
    }

    /// True if the id was seen during learning, attributed or not.
    pub fn knows(&self, id: u16) -> bool {
        self.unmonitored.contains(&id) || self.owner(id).is_some()
    }

    pub fn entries(&self) -> &BTreeMap<TapId, BTreeSet<u16>> {
        &self.entries
    }

    pub fn unmonitored(&self) -> &BTreeSet<u16> {
        &self.unmonitored
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let ids = |set: &BTreeSet<u16>| {
            set.iter()
                .map(|id| format!("{id:03X}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for (tap, set) in &self.entries {
            out.push_str(&format!("tap {tap} = {}\n", ids(set)));
        }
        if !self.unmonitored.is_empty() {
            out.push_str(&format!("unmonitored = {}\n", ids(&self.unmonitored)));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut table = AllowlistTable::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| ConfigError::Parse(format!("allowlist line {}: {m}", n + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = ids"))?;
            let ids = value
                .split_whitespace()
                .map(|s| u16::from_str_radix(s, 16).ok().filter(|&id| id <= 0x7FF))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("bad id"))?;
            let key = key.trim();
            if key == "unmonitored" {
                ids.into_iter().for_each(|id| table.insert_unmonitored(id));
            } else {
                let tap = key
                    .strip_prefix("tap")
                    .and_then(|t| t.trim().parse::<TapId>().ok())
                    .ok_or_else(|| bad("expected `tap N` or `unmonitored`"))?;
                for id in ids {
                    table.insert(tap, id)?;
                }
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_text()).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OfficerMode {
    Learning,
    Detect,
    Prevent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlertKind {
    Error1,
    Error2,
    UnknownId,
}

impl fmt::Display for AlertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub kind: AlertKind,
    pub bit_time: u64,
    pub frame_id: u16,
    pub implicated_tap: Option<TapId>,
    pub bit_offset_after_arbitration: u64,
}

impl Alert {
    /// `bit_time kind frame_id tap bit_offset`
    pub fn to_line(&self) -> String {
        let tap = self
            .implicated_tap
            .map_or_else(|| "-".to_string(), |t| t.to_string());
        format!(
            "{} {} {:03X} {} {}",
            self.bit_time, self.kind, self.frame_id, tap, self.bit_offset_after_arbitration
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfficerConfig {
    /// Skip the Dominant check on the first intermission bit.
    pub allow_legacy_overflow: bool,
    /// Follow each kill with delimiter injections until the sender is bus-off.
    pub escalate: bool,
    /// Checks start at the first idle bus bit at or after this tick.
    pub activate_at: u64,
}

impl Default for OfficerConfig {
    fn default() -> Self {
        OfficerConfig {
            allow_legacy_overflow: false,
            escalate: true,
            activate_at: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Watch {
    id: u16,
    arb_tick: u64,
    owner: Option<TapId>,
    owner_level: BitLevel,
    owner_seen: bool,
    transition: Option<u64>,
    error1_done: bool,
    alerted: BTreeSet<TapId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Prevention {
    Idle,
    Kill { left: u8 },
    Escalate { injected: u32 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfficerReport {
    pub alerts_by_kind: BTreeMap<AlertKind, u64>,
    pub kills: u64,
    pub escalations_completed: u64,
    /// First tick of each kill.
    pub kill_ticks: Vec<u64>,
    /// Tick of the last delimiter injection of each completed escalation.
    pub escalation_end_ticks: Vec<u64>,
    pub bit_offsets: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Officer {
    mode: OfficerMode,
    config: OfficerConfig,
    table: AllowlistTable,
    decoder: Decoder,
    active: bool,
    activated_at: Option<u64>,
    watch: Option<Watch>,
    alerts: Vec<Alert>,
    prevention: Prevention,
    driving: BitLevel,
    report: OfficerReport,
    transitions: Vec<u64>,
    learn_taps: BTreeSet<TapId>,
    learn_error: Option<LearnError>,
}

impl Officer {
    pub fn learning() -> Self {
        Self::build(OfficerMode::Learning, AllowlistTable::new(), OfficerConfig::default())
    }

    pub fn new(mode: OfficerMode, table: AllowlistTable, config: OfficerConfig) -> Self {
        Self::build(mode, table, config)
    }

    fn build(mode: OfficerMode, table: AllowlistTable, config: OfficerConfig) -> Self {
        Officer {
            mode,
            config,
            table,
            decoder: Decoder::new(),
            active: false,
            activated_at: None,
            watch: None,
            alerts: Vec::new(),
            prevention: Prevention::Idle,
            driving: BitLevel::Recessive,
            report: OfficerReport::default(),
            transitions: Vec::new(),
            learn_taps: BTreeSet::new(),
            learn_error: None,
        }
    }

    pub fn mode(&self) -> OfficerMode {
        self.mode
    }

    pub fn table(&self) -> &AllowlistTable {
        &self.table
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Tick at which checks started.
    pub fn activated_at(&self) -> Option<u64> {
        self.activated_at
    }

    /// True while a kill or an escalation is in progress.
    pub fn is_preventing(&self) -> bool {
        self.prevention != Prevention::Idle
    }

    /// Owner-tap first level change after arbitration, one entry per completed frame.
    pub fn transition_offsets(&self) -> &[u64] {
        &self.transitions
    }

    pub fn report(&self) -> OfficerReport {
        let mut r = self.report.clone();
        for a in &self.alerts {
            *r.alerts_by_kind.entry(a.kind).or_default() += 1;
        }
        r.bit_offsets = self.alerts.iter().map(|a| a.bit_offset_after_arbitration).collect();
        r
    }

    /// The learned table, or the first ownership conflict seen.
    pub fn finish_learning(self) -> Result<AllowlistTable, LearnError> {
        match self.learn_error {
            Some(e) => Err(e),
            None => Ok(self.table),
        }
    }

    /// Starts a frame kill for `alert`. Error #2 is never acted on.
    pub fn prevent(&mut self, alert: &Alert) -> Result<(), PreventError> {
        if self.mode != OfficerMode::Prevent {
            return Err(PreventError::NotPreventing);
        }
        if alert.kind == AlertKind::Error2 {
            return Err(PreventError::DetectOnly("Error2"));
        }
        if self.prevention == Prevention::Idle {
            self.prevention = Prevention::Kill { left: KILL_BITS };
            self.report.kills += 1;
        }
        Ok(())
    }

    /// Level the officer drives at `tick`.
    pub fn drive(&mut self, tick: u64) -> BitLevel {
        self.driving = match &mut self.prevention {
            Prevention::Idle => BitLevel::Recessive,
            Prevention::Kill { left } => {
                if *left == KILL_BITS {
                    self.report.kill_ticks.push(tick);
                }
                *left -= 1;
                if *left == 0 {
                    self.prevention = if self.config.escalate {
                        Prevention::Escalate { injected: 0 }
                    } else {
                        Prevention::Idle
                    };
                }
                BitLevel::Dominant
            }
            Prevention::Escalate { injected } => {
                // Second delimiter bit: the first recessive bit has been seen.
                if self.decoder.next_field() == Field::ErrorDelimiter(1) {
                    *injected += 1;
                    if *injected == ESCALATION_INJECTIONS {
                        self.report.escalations_completed += 1;
                        self.report.escalation_end_ticks.push(tick);
                        self.prevention = Prevention::Idle;
                    }
                    BitLevel::Dominant
                } else {
                    BitLevel::Recessive
                }
            }
        };
        self.driving
    }

    /// Observes the resolved level and the tap levels of the same tick.
    pub fn observe(&mut self, tick: u64, resolved: BitLevel, taps: &[(TapId, BitLevel)]) {
        let field = self.decoder.next_field();
        let event = self.decoder.feed(resolved).map(|e| e.kind);
        if self.mode == OfficerMode::Learning {
            self.learn_step(field, event, taps);
            return;
        }
        if !self.active {
            if tick >= self.config.activate_at && field == Field::Idle {
                self.active = true;
                self.activated_at = Some(tick);
            } else {
                return;
            }
        }
        let own = self.driving.is_dominant() || self.is_preventing();
        if !own {
            self.check(tick, field, taps);
        }
        match event {
            Some(DecoderEventKind::SofDetected) => self.watch = None,
            Some(DecoderEventKind::ArbitrationComplete(id)) if !own => {
                self.arbitration(tick, id, taps);
            }
            Some(DecoderEventKind::FrameComplete(_)) => {
                if let Some(w) = &self.watch {
                    if let Some(t) = w.transition {
                        self.transitions.push(t);
                    }
                }
            }
            Some(DecoderEventKind::Overload) => {
                if let Some(w) = &mut self.watch {
                    w.alerted.clear();
                }
            }
            Some(
                DecoderEventKind::StuffError { .. }
                | DecoderEventKind::FormError
                | DecoderEventKind::CrcMismatch,
            ) => self.watch = None,
            _ => {}
        }
        if field == Field::Intermission(0) && resolved == BitLevel::Recessive {
            self.watch = None;
        }
    }

    fn arbitration(&mut self, tick: u64, id: u16, taps: &[(TapId, BitLevel)]) {
        if !self.table.knows(id) {
            self.raise(Alert {
                kind: AlertKind::UnknownId,
                bit_time: tick,
                frame_id: id,
                implicated_tap: None,
                bit_offset_after_arbitration: 0,
            });
        }
        let owner = self.table.owner(id);
        let owner_level = owner
            .and_then(|o| taps.iter().find(|(t, _)| *t == o))
            .map_or(BitLevel::Recessive, |&(_, l)| l);
        self.watch = Some(Watch {
            id,
            arb_tick: tick,
            owner,
            owner_level,
            owner_seen: false,
            transition: None,
            error1_done: false,
            alerted: BTreeSet::new(),
        });
    }

    fn check(&mut self, tick: u64, field: Field, taps: &[(TapId, BitLevel)]) {
        let Some(w) = &mut self.watch else { return };
        let in_window = field.is_body()
            || (field == Field::Intermission(0) && !self.config.allow_legacy_overflow);
        if !in_window || tick <= w.arb_tick {
            return;
        }
        let offset = tick - w.arb_tick;
        let mut raised = Vec::new();
        for &(tap, level) in taps {
            if Some(tap) == w.owner {
                if w.transition.is_none() && level != w.owner_level {
                    w.transition = Some(offset);
                }
                if level.is_dominant() && offset <= ERROR1_WINDOW {
                    w.owner_seen = true;
                }
            } else if level.is_dominant() && w.alerted.insert(tap) {
                raised.push(Alert {
                    kind: AlertKind::Error2,
                    bit_time: tick,
                    frame_id: w.id,
                    implicated_tap: Some(tap),
                    bit_offset_after_arbitration: offset,
                });
            }
        }
        if offset == ERROR1_WINDOW && !w.owner_seen && !w.error1_done {
            if let Some(owner) = w.owner {
                w.error1_done = true;
                raised.push(Alert {
                    kind: AlertKind::Error1,
                    bit_time: tick,
                    frame_id: w.id,
                    implicated_tap: Some(owner),
                    bit_offset_after_arbitration: offset,
                });
            }
        }
        for alert in raised {
            self.raise(alert);
        }
    }

    fn raise(&mut self, alert: Alert) {
        if self.mode == OfficerMode::Prevent && alert.kind != AlertKind::Error2 {
            self.prevent(&alert).expect("prevent mode");
        }
        self.alerts.push(alert);
    }

    fn learn_step(&mut self, field: Field, event: Option<DecoderEventKind>, taps: &[(TapId, BitLevel)]) {
        if field.is_body() {
            self.learn_taps
                .extend(taps.iter().filter(|(_, l)| l.is_dominant()).map(|&(t, _)| t));
        }
        match event {
            Some(DecoderEventKind::SofDetected) => self.learn_taps.clear(),
            Some(DecoderEventKind::FrameComplete(frame)) => {
                let taps = std::mem::take(&mut self.learn_taps);
                let mut result = Ok(());
                match taps.len() {
                    0 => self.table.insert_unmonitored(frame.id()),
                    1 => result = self.table.insert(*taps.first().expect("one tap"), frame.id()),
                    _ => {
                        let mut it = taps.iter();
                        result = Err(LearnError::AmbiguousOwner {
                            id: frame.id(),
                            first: format!("tap {}", it.next().expect("two taps")),
                            second: format!("tap {}", it.next().expect("two taps")),
                        });
                    }
                }
                if let Err(e) = result {
                    self.learn_error.get_or_insert(e);
                }
            }
            _ => {}
        }
    }
}

/// Bit-times from the first kill bit to the end of an escalation, at most.
pub fn escalation_bound_bits() -> u64 {
    KILL_BITS as u64
        + ESCALATION_INJECTIONS as u64 * (FLAG_BITS as u64 * 2 + DELIMITER_BITS as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allowlist_text_round_trip() {
        let mut t = AllowlistTable::new();
        t.insert(0, 0x0A0).unwrap();
        t.insert(0, 0x100).unwrap();
        t.insert(2, 0x7FF).unwrap();
        t.insert_unmonitored(0x300);
        let text = t.to_text();
        assert_eq!(text, "tap 0 = 0A0 100\ntap 2 = 7FF\nunmonitored = 300\n");
        assert_eq!(AllowlistTable::parse(&text).unwrap(), t);
    }

    #[test]
    fn conflicting_owner_rejected() {
        let mut t = AllowlistTable::new();
        t.insert(0, 0x10).unwrap();
        assert!(matches!(t.insert(1, 0x10), Err(LearnError::AmbiguousOwner { id: 0x10, .. })));
        assert!(AllowlistTable::parse("tap 0 = 10\ntap 1 = 10\n").is_err());
        assert!(AllowlistTable::parse("tap x = 10\n").is_err());
        assert!(AllowlistTable::parse("tap 1 = 800\n").is_err());
    }

    #[test]
    fn unmonitored_ids_are_known_without_owner() {
        let mut t = AllowlistTable::new();
        t.insert_unmonitored(0x300);
        assert!(t.knows(0x300));
        assert_eq!(t.owner(0x300), None);
        t.insert(1, 0x300).unwrap();
        assert!(t.unmonitored().is_empty());
        assert!(!t.knows(0x301));
    }

    #[test]
    fn error2_cannot_be_prevented() {
        let mut o = Officer::new(OfficerMode::Prevent, AllowlistTable::new(), OfficerConfig::default());
        let alert = Alert {
            kind: AlertKind::Error2,
            bit_time: 0,
            frame_id: 1,
            implicated_tap: Some(0),
            bit_offset_after_arbitration: 3,
        };
        assert!(matches!(o.prevent(&alert), Err(PreventError::DetectOnly(_))));
        let mut d = Officer::new(OfficerMode::Detect, AllowlistTable::new(), OfficerConfig::default());
        assert_eq!(
            d.prevent(&Alert { kind: AlertKind::Error1, ..alert }),
            Err(PreventError::NotPreventing)
        );
    }

    #[test]
    fn alert_line_format() {
        let a = Alert {
            kind: AlertKind::Error1,
            bit_time: 42,
            frame_id: 0xA0,
            implicated_tap: None,
            bit_offset_after_arbitration: 6,
        };
        assert_eq!(a.to_line(), "42 Error1 0A0 - 6");
    }
}
