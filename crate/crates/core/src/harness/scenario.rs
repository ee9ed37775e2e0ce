//! Scenario files.
//!
//! A scenario is a TOML document (conventionally `*.scn`). Ids may be written
//! as TOML hex integers (`0x0A0`). See `scenarios/` for commented examples.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::attacks::{FiaStrategy, SbaStrategy, SpoofMode};
use crate::bus::NodeKind;
use crate::codec::frame::{MAX_DLC, MAX_ID};
use crate::error::ConfigError;
use crate::officer::{AllowlistTable, OfficerConfig};
use crate::traffic::{parse_hex, PayloadGen, PeriodicSource, RecordedTrace};

pub const DEFAULT_DURATION: u64 = 1_000_000;
pub const DEFAULT_BITRATE: u64 = 500_000;
/// Node id reserved for the officer.
pub const OFFICER_NODE_ID: u16 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfficerSetting {
    Off,
    Detect,
    Prevent,
}

impl std::str::FromStr for OfficerSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(OfficerSetting::Off),
            "detect" => Ok(OfficerSetting::Detect),
            "prevent" => Ok(OfficerSetting::Prevent),
            other => Err(format!("unknown officer mode {other:?} (off|detect|prevent)")),
        }
    }
}

impl std::fmt::Display for OfficerSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OfficerSetting::Off => "off",
            OfficerSetting::Detect => "detect",
            OfficerSetting::Prevent => "prevent",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AllowlistSource {
    /// Learned from an attack-free run of the same scenario before the main run.
    Learned,
    Table(AllowlistTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfficerSetup {
    pub mode: OfficerSetting,
    pub allowlist: AllowlistSource,
    /// Length of the learning run; derived from the message periods when unset.
    pub learn_ticks: Option<u64>,
    pub config: OfficerConfig,
}

impl Default for OfficerSetup {
    fn default() -> Self {
        OfficerSetup {
            mode: OfficerSetting::Off,
            allowlist: AllowlistSource::Learned,
            learn_ticks: None,
            config: OfficerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceConfig {
    Periodic(PeriodicSource),
    Trace { trace: RecordedTrace, start: u64, repeat: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackConfig {
    Fia { strategy: FiaStrategy, start: u64, stop: Option<u64> },
    Sba { strategy: SbaStrategy, start: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub name: String,
    pub node_id: u16,
    pub kind: NodeKind,
    pub monitored: bool,
    /// Silent in the main run but active while the allowlist is learned.
    pub suppressed: bool,
    pub busoff_recovery: bool,
    pub sources: Vec<SourceConfig>,
    pub attack: Option<AttackConfig>,
}

impl NodeConfig {
    pub fn new(name: &str, node_id: u16, kind: NodeKind) -> Self {
        NodeConfig {
            name: name.to_string(),
            node_id,
            kind,
            monitored: false,
            suppressed: false,
            busoff_recovery: false,
            sources: Vec::new(),
            attack: None,
        }
    }

    pub fn monitored(mut self, on: bool) -> Self {
        self.monitored = on;
        self
    }

    pub fn with_periodic(mut self, src: PeriodicSource) -> Self {
        self.sources.push(SourceConfig::Periodic(src));
        self
    }

    pub fn with_attack(mut self, attack: AttackConfig) -> Self {
        self.attack = Some(attack);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration_ticks: u64,
    /// Used only to convert bit-times to wall-clock figures.
    pub bitrate_bps: u64,
    pub officer: OfficerSetup,
    pub nodes: Vec<NodeConfig>,
}

impl ScenarioConfig {
    pub fn new(name: &str) -> Self {
        ScenarioConfig {
            name: name.to_string(),
            seed: 0,
            duration_ticks: DEFAULT_DURATION,
            bitrate_bps: DEFAULT_BITRATE,
            officer: OfficerSetup::default(),
            nodes: Vec::new(),
        }
    }

    pub fn node(&self, name: &str) -> Option<&NodeConfig> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn node_mut(&mut self, name: &str) -> Option<&mut NodeConfig> {
        self.nodes.iter_mut().find(|n| n.name == name)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses scenario text; relative file references resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let cfg = raw.resolve(base_dir)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Learning window: the configured value, or long enough for every
    /// periodic message to appear at least twice.
    pub fn learn_ticks(&self) -> u64 {
        self.officer.learn_ticks.unwrap_or_else(|| {
            let longest = self
                .nodes
                .iter()
                .flat_map(|n| &n.sources)
                .map(|s| match s {
                    SourceConfig::Periodic(p) => p.offset + 2 * p.period,
                    SourceConfig::Trace { trace, start, .. } => start + trace.span(),
                })
                .max()
                .unwrap_or(0);
            longest + 10_000
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.duration_ticks == 0 {
            return Err(ConfigError::invalid("duration_ticks", "must be positive"));
        }
        if self.bitrate_bps == 0 {
            return Err(ConfigError::invalid("bitrate_bps", "must be positive"));
        }
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let field = |f: &str| format!("nodes[{i}].{f}");
            if node.node_id == OFFICER_NODE_ID {
                return Err(ConfigError::invalid(field("id"), "node id 0 is reserved for the officer"));
            }
            if !ids.insert(node.node_id) {
                return Err(ConfigError::invalid(field("id"), format!("duplicate node id {}", node.node_id)));
            }
            if !names.insert(node.name.as_str()) {
                return Err(ConfigError::invalid(field("name"), format!("duplicate node name {:?}", node.name)));
            }
            for (j, src) in node.sources.iter().enumerate() {
                if let SourceConfig::Periodic(p) = src {
                    let f = |x: &str| field(&format!("messages[{j}].{x}"));
                    check_id(&f("id"), p.id)?;
                    if p.period == 0 {
                        return Err(ConfigError::invalid(f("period"), "must be positive"));
                    }
                    if p.burst == 0 {
                        return Err(ConfigError::invalid(f("burst"), "must be positive"));
                    }
                    check_dlc(&f("dlc"), p.payload.dlc())?;
                }
            }
            match (&node.attack, node.kind) {
                (None, NodeKind::FiaAttacker | NodeKind::SbaAttacker) => {
                    return Err(ConfigError::invalid(field("attack"), "attacker node needs an attack"));
                }
                (Some(_), k) if !matches!(k, NodeKind::FiaAttacker | NodeKind::SbaAttacker) => {
                    return Err(ConfigError::invalid(field("attack"), "only attacker nodes carry an attack"));
                }
                (Some(AttackConfig::Fia { .. }), NodeKind::SbaAttacker) => {
                    return Err(ConfigError::invalid(field("attack"), "sba_attacker needs a bit-level attack"));
                }
                (Some(AttackConfig::Sba { .. }), NodeKind::FiaAttacker) => {
                    return Err(ConfigError::invalid(field("attack"), "fia_attacker needs a frame-level attack"));
                }
                _ => {}
            }
            if node.kind == NodeKind::SbaAttacker && !node.sources.is_empty() {
                return Err(ConfigError::invalid(field("messages"), "sba_attacker has no controller"));
            }
            match &node.attack {
                Some(AttackConfig::Fia { strategy, .. }) => match strategy {
                    FiaStrategy::Flooding { id, period, dlc } => {
                        check_id(&field("attack.id"), *id)?;
                        check_dlc(&field("attack.dlc"), *dlc)?;
                        if *period == 0 {
                            return Err(ConfigError::invalid(field("attack.period"), "must be positive"));
                        }
                    }
                    FiaStrategy::Spoof { id, payload, .. } => {
                        check_id(&field("attack.id"), *id)?;
                        check_dlc(&field("attack.dlc"), payload.dlc())?;
                    }
                    FiaStrategy::Replay { .. } => {}
                },
                Some(AttackConfig::Sba { strategy, .. }) => match strategy {
                    SbaStrategy::SelectiveDos { target_id, .. }
                    | SbaStrategy::DoubleReceiving { target_id, .. } => {
                        check_id(&field("attack.target_id"), *target_id)?;
                    }
                    SbaStrategy::FreezeDoomLoop { .. } => {}
                },
                None => {}
            }
        }
        Ok(())
    }
}

fn check_id(field: &str, id: u16) -> Result<(), ConfigError> {
    if id > MAX_ID {
        return Err(ConfigError::invalid(field, format!("{id:#x} does not fit in 11 bits")));
    }
    Ok(())
}

fn check_dlc(field: &str, dlc: u8) -> Result<(), ConfigError> {
    if dlc > MAX_DLC {
        return Err(ConfigError::invalid(field, format!("dlc {dlc} exceeds 8")));
    }
    Ok(())
}

// ---- raw TOML shape ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    #[serde(default)]
    seed: u64,
    duration_ticks: Option<u64>,
    bitrate_bps: Option<u64>,
    officer: Option<RawOfficer>,
    #[serde(default)]
    nodes: Vec<RawNode>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOfficer {
    mode: Option<String>,
    allowlist: Option<String>,
    learn_ticks: Option<u64>,
    #[serde(default)]
    allow_legacy_overflow: bool,
    escalate: Option<bool>,
    #[serde(default)]
    activate_at: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    name: String,
    id: Option<u16>,
    kind: String,
    #[serde(default)]
    monitored: bool,
    #[serde(default)]
    suppressed: bool,
    #[serde(default)]
    busoff_recovery: bool,
    #[serde(default)]
    messages: Vec<RawMessage>,
    #[serde(default)]
    traces: Vec<RawTrace>,
    attack: Option<RawAttack>,
}

struct RawPayload {
    payload: Option<String>,
    dlc: Option<u8>,
    base: Option<u16>,
    jitter: Option<u16>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMessage {
    id: u16,
    period: u64,
    #[serde(default)]
    offset: u64,
    burst: Option<u32>,
    payload: Option<String>,
    dlc: Option<u8>,
    base: Option<u16>,
    jitter: Option<u16>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrace {
    file: String,
    #[serde(default)]
    start: u64,
    repeat: Option<u32>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum RawAttack {
    Spoof {
        id: u16,
        mode: Option<String>,
        period: Option<u64>,
        #[serde(default)]
        start: u64,
        stop: Option<u64>,
        payload: Option<String>,
        dlc: Option<u8>,
        base: Option<u16>,
        jitter: Option<u16>,
    },
    Flood {
        id: u16,
        period: u64,
        dlc: Option<u8>,
        #[serde(default)]
        start: u64,
        stop: Option<u64>,
    },
    Replay {
        trace: String,
        repeat: Option<u32>,
        #[serde(default)]
        start: u64,
    },
    SelectiveDos {
        target_id: u16,
        max_hits: Option<u32>,
        #[serde(default)]
        start: u64,
    },
    DoubleReceiving {
        target_id: u16,
        max_hits: Option<u32>,
        #[serde(default)]
        start: u64,
    },
    FreezeDoomLoop {
        duration: u64,
        #[serde(default)]
        start: u64,
    },
}

fn resolve_path(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RawPayload {
    fn resolve(&self, field: &str, default: &str) -> Result<PayloadGen, ConfigError> {
        let spec = self.payload.as_deref().unwrap_or(default);
        let dlc = self.dlc.unwrap_or(8);
        check_dlc(&format!("{field}.dlc"), dlc)?;
        let gen = match spec {
            "random" => PayloadGen::Random { dlc },
            "counter" => PayloadGen::counter(dlc),
            "sensor" => PayloadGen::Sensor {
                base: self.base.unwrap_or(500),
                jitter: self.jitter.unwrap_or(0),
            },
            other => match other.strip_prefix("hex:") {
                Some(hex) => {
                    let bytes = parse_hex(hex).map_err(|m| ConfigError::invalid(format!("{field}.payload"), m))?;
                    if self.dlc.is_some_and(|d| d as usize != bytes.len()) {
                        return Err(ConfigError::invalid(
                            format!("{field}.dlc"),
                            format!("dlc {dlc} does not match {}-byte payload", bytes.len()),
                        ));
                    }
                    PayloadGen::Fixed(bytes)
                }
                None => {
                    return Err(ConfigError::invalid(
                        format!("{field}.payload"),
                        format!("unknown payload {other:?} (random|counter|sensor|hex:..)"),
                    ))
                }
            },
        };
        check_dlc(&format!("{field}.payload"), gen.dlc())?;
        Ok(gen)
    }
}

fn parse_kind(field: &str, s: &str) -> Result<NodeKind, ConfigError> {
    Ok(match s {
        "ecu" => NodeKind::Ecu,
        "sensor" => NodeKind::SensorEcu,
        "dashboard" => NodeKind::Dashboard,
        "simulator" => NodeKind::BackgroundSimulator,
        "fia_attacker" => NodeKind::FiaAttacker,
        "sba_attacker" => NodeKind::SbaAttacker,
        other => {
            return Err(ConfigError::invalid(
                field,
                format!("unknown kind {other:?} (ecu|sensor|dashboard|simulator|fia_attacker|sba_attacker)"),
            ))
        }
    })
}

impl RawScenario {
    fn resolve(self, base: &Path) -> Result<ScenarioConfig, ConfigError> {
        let bitrate_bps = self.bitrate_bps.unwrap_or(DEFAULT_BITRATE);
        let mut cfg = ScenarioConfig::new(self.name.as_deref().unwrap_or("scenario"));
        cfg.seed = self.seed;
        cfg.duration_ticks = self.duration_ticks.unwrap_or(DEFAULT_DURATION);
        cfg.bitrate_bps = bitrate_bps;
        if let Some(o) = self.officer {
            cfg.officer.mode = o
                .mode
                .as_deref()
                .unwrap_or("detect")
                .parse()
                .map_err(|m| ConfigError::invalid("officer.mode", m))?;
            cfg.officer.allowlist = match o.allowlist.as_deref() {
                None | Some("learned") => AllowlistSource::Learned,
                Some(path) => AllowlistSource::Table(AllowlistTable::load(&resolve_path(base, path))?),
            };
            cfg.officer.learn_ticks = o.learn_ticks;
            cfg.officer.config = OfficerConfig {
                allow_legacy_overflow: o.allow_legacy_overflow,
                escalate: o.escalate.unwrap_or(true),
                activate_at: o.activate_at,
            };
        }
        for (i, n) in self.nodes.into_iter().enumerate() {
            let field = |f: &str| format!("nodes[{i}].{f}");
            let kind = parse_kind(&field("kind"), &n.kind)?;
            let node_id = n.id.unwrap_or(i as u16 + 1);
            let mut node = NodeConfig::new(&n.name, node_id, kind);
            node.monitored = n.monitored;
            node.suppressed = n.suppressed;
            node.busoff_recovery = n.busoff_recovery;
            for (j, m) in n.messages.iter().enumerate() {
                let f = field(&format!("messages[{j}]"));
                let payload = RawPayload {
                    payload: m.payload.clone(),
                    dlc: m.dlc,
                    base: m.base,
                    jitter: m.jitter,
                }
                .resolve(&f, "random")?;
                node.sources.push(SourceConfig::Periodic(PeriodicSource {
                    id: m.id,
                    period: m.period,
                    offset: m.offset,
                    burst: m.burst.unwrap_or(1),
                    payload,
                }));
            }
            for t in &n.traces {
                let trace = RecordedTrace::load(&resolve_path(base, &t.file), bitrate_bps)?;
                node.sources.push(SourceConfig::Trace {
                    trace,
                    start: t.start,
                    repeat: t.repeat.unwrap_or(1),
                });
            }
            node.attack = match n.attack {
                None => None,
                Some(a) => Some(resolve_attack(a, &field("attack"), base, bitrate_bps)?),
            };
            cfg.nodes.push(node);
        }
        Ok(cfg)
    }
}

fn resolve_attack(a: RawAttack, field: &str, base: &Path, bitrate_bps: u64) -> Result<AttackConfig, ConfigError> {
    Ok(match a {
        RawAttack::Spoof {
            id,
            mode,
            period,
            start,
            stop,
            payload,
            dlc,
            base,
            jitter,
        } => {
            let payload = RawPayload {
                payload,
                dlc,
                base,
                jitter,
            };
            let mode = match mode.as_deref().unwrap_or("blind") {
                "blind" => SpoofMode::Blind,
                "after_legit" => SpoofMode::AfterLegit,
                other => {
                    return Err(ConfigError::invalid(
                        format!("{field}.mode"),
                        format!("unknown spoof mode {other:?} (blind|after_legit)"),
                    ))
                }
            };
            AttackConfig::Fia {
                strategy: FiaStrategy::Spoof {
                    id,
                    payload: payload.resolve(field, "hex:FFFF")?,
                    mode,
                    period: period.unwrap_or(10_000),
                },
                start,
                stop,
            }
        }
        RawAttack::Flood {
            id,
            period,
            dlc,
            start,
            stop,
        } => AttackConfig::Fia {
            strategy: FiaStrategy::Flooding {
                id,
                period,
                dlc: dlc.unwrap_or(8),
            },
            start,
            stop,
        },
        RawAttack::Replay { trace, repeat, start } => AttackConfig::Fia {
            strategy: FiaStrategy::Replay {
                trace: RecordedTrace::load(&resolve_path(base, &trace), bitrate_bps)?,
                repeat: repeat.unwrap_or(1),
            },
            start,
            stop: None,
        },
        RawAttack::SelectiveDos {
            target_id,
            max_hits,
            start,
        } => AttackConfig::Sba {
            strategy: SbaStrategy::SelectiveDos {
                target_id,
                max_hits: max_hits.unwrap_or(u32::MAX),
            },
            start,
        },
        RawAttack::DoubleReceiving {
            target_id,
            max_hits,
            start,
        } => AttackConfig::Sba {
            strategy: SbaStrategy::DoubleReceiving {
                target_id,
                max_hits: max_hits.unwrap_or(u32::MAX),
            },
            start,
        },
        RawAttack::FreezeDoomLoop { duration, start } => AttackConfig::Sba {
            strategy: SbaStrategy::FreezeDoomLoop { duration },
            start,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "sample"
seed = 7
duration_ticks = 1000

[officer]
mode = "prevent"
escalate = false

[[nodes]]
name = "sensor"
kind = "sensor"
monitored = true
messages = [{ id = 0x0A0, period = 500, payload = "sensor", base = 300, jitter = 2 }]

[[nodes]]
name = "attacker"
kind = "fia_attacker"
attack = { type = "spoof", id = 0x0A0, payload = "hex:FFFF", mode = "after_legit" }
"#;

    fn parse(text: &str) -> Result<ScenarioConfig, ConfigError> {
        ScenarioConfig::parse(text, Path::new("."))
    }

    #[test]
    fn parses_sample() {
        let cfg = parse(SAMPLE).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.officer.mode, OfficerSetting::Prevent);
        assert!(!cfg.officer.config.escalate);
        assert_eq!(cfg.nodes[0].node_id, 1);
        assert_eq!(cfg.nodes[1].node_id, 2);
        assert!(matches!(
            cfg.nodes[1].attack,
            Some(AttackConfig::Fia {
                strategy: FiaStrategy::Spoof { mode: SpoofMode::AfterLegit, .. },
                ..
            })
        ));
        assert_eq!(cfg.learn_ticks(), 11_000);
    }

    #[test]
    fn field_level_errors() {
        let bad_id = SAMPLE.replace("id = 0x0A0, period", "id = 0x800, period");
        let e = parse(&bad_id).unwrap_err().to_string();
        assert!(e.contains("nodes[0].messages[0].id"), "{e}");

        let bad_kind = SAMPLE.replace("kind = \"sensor\"", "kind = \"toaster\"");
        assert!(parse(&bad_kind).unwrap_err().to_string().contains("nodes[0].kind"));

        let bad_mode = SAMPLE.replace("mode = \"prevent\"", "mode = \"panic\"");
        assert!(parse(&bad_mode).unwrap_err().to_string().contains("officer.mode"));

        let unknown = SAMPLE.replace("seed = 7", "seed = 7\ncolour = 1");
        assert!(matches!(parse(&unknown), Err(ConfigError::Parse(_))));

        let no_attack = SAMPLE.replace(
            "attack = { type = \"spoof\", id = 0x0A0, payload = \"hex:FFFF\", mode = \"after_legit\" }",
            "",
        );
        assert!(parse(&no_attack).unwrap_err().to_string().contains("nodes[1].attack"));
    }

    #[test]
    fn missing_file_is_io_error() {
        let e = ScenarioConfig::load(Path::new("/nonexistent/x.scn")).unwrap_err();
        assert!(matches!(e, ConfigError::Io { .. }));
    }
}
