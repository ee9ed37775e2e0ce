//! Experiment drivers: delay CDF, coverage sweep, sensor demo.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::{FiaStrategy, SbaStrategy, SpoofMode};
use crate::bus::{NodeKind, Outcome};
use crate::controller::FrameOrigin;
use crate::error::ConfigError;
use crate::officer::ERROR1_WINDOW;
use crate::traffic::{sensor_value, PayloadGen, PeriodicSource};

use super::run::run_scenario;
use super::scenario::{AttackConfig, NodeConfig, OfficerSetting, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfResult {
    pub frames: u64,
    pub histogram: BTreeMap<u64, u64>,
    /// `(offset, cumulative fraction)` for every offset from 0 to the maximum.
    pub cdf: Vec<(u64, f64)>,
    pub max_offset: u64,
}

impl CdfResult {
    pub fn from_histogram(histogram: BTreeMap<u64, u64>) -> Self {
        let frames: u64 = histogram.values().sum();
        let max_offset = histogram.keys().next_back().copied().unwrap_or(0);
        let mut acc = 0;
        let cdf = (0..=max_offset)
            .map(|o| {
                acc += histogram.get(&o).copied().unwrap_or(0);
                (o, if frames == 0 { 0.0 } else { acc as f64 / frames as f64 })
            })
            .collect();
        CdfResult {
            frames,
            histogram,
            cdf,
            max_offset,
        }
    }

    /// Cumulative fraction at `offset`.
    pub fn fraction_at(&self, offset: u64) -> f64 {
        match self.cdf.iter().find(|(o, _)| *o == offset) {
            Some((_, f)) => *f,
            None if offset > self.max_offset => 1.0,
            None => 0.0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("offset,count,cumulative\n");
        for (o, f) in &self.cdf {
            let n = self.histogram.get(o).copied().unwrap_or(0);
            let _ = writeln!(out, "{o},{n},{f:.6}");
        }
        out
    }
}

/// Runs `cfg` in detect mode and collects the owner-tap transition offsets.
pub fn cdf_experiment(cfg: &ScenarioConfig) -> Result<CdfResult, ConfigError> {
    let mut cfg = cfg.clone();
    if cfg.officer.mode == OfficerSetting::Off {
        cfg.officer.mode = OfficerSetting::Detect;
    }
    let out = run_scenario(&cfg)?;
    let res = CdfResult::from_histogram(out.metrics.delay_histogram.clone());
    assert!(
        res.max_offset <= ERROR1_WINDOW,
        "owner transition at offset {} exceeds the detection window",
        res.max_offset
    );
    Ok(res)
}

/// One matrix of the coverage sweep; `None` on the diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Matrix {
    pub cells: Vec<Vec<Option<bool>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverageResult {
    pub names: Vec<String>,
    pub monitored: Vec<bool>,
    /// Row: spoofing origin. Column: node whose id is spoofed.
    pub spoof: Matrix,
    pub spoof_expected: Matrix,
    /// Row: bit attacker placement. Column: victim.
    pub sba: Matrix,
    pub sba_expected: Matrix,
}

impl CoverageResult {
    pub fn mismatches(&self) -> usize {
        let count = |a: &Matrix, b: &Matrix| {
            a.cells
                .iter()
                .flatten()
                .zip(b.cells.iter().flatten())
                .filter(|(x, y)| x != y)
                .count()
        };
        count(&self.spoof, &self.spoof_expected) + count(&self.sba, &self.sba_expected)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let tag = |i: usize| {
            format!("{}{}", self.names[i], if self.monitored[i] { "*" } else { "" })
        };
        for (title, m) in [("spoofing (origin \\ spoofed id)", &self.spoof), ("single-bit (attacker \\ victim)", &self.sba)] {
            let _ = writeln!(out, "{title}");
            let _ = write!(out, "{:>6}", "");
            for j in 0..self.names.len() {
                let _ = write!(out, "{:>6}", tag(j));
            }
            out.push('\n');
            for (i, row) in m.cells.iter().enumerate() {
                let _ = write!(out, "{:>6}", tag(i));
                for c in row {
                    let s = match c {
                        None => "-",
                        Some(true) => "yes",
                        Some(false) => "no",
                    };
                    let _ = write!(out, "{s:>6}");
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out.push_str("* = tapped\n");
        out
    }
}

// Off the ECUs' release grid: a spoof starting with the owner's own frame looks
// like the owner on its tap.
const SWEEP_ATTACK_START: u64 = 5_555;
const SWEEP_SPOOF_PERIOD: u64 = 15_000;
const SWEEP_SBA_HITS: u32 = 4;

/// Runs every (origin, target) pair among the nodes of `cfg` that send
/// exactly one id. Cells run in parallel.
pub fn coverage_sweep(cfg: &ScenarioConfig) -> Result<CoverageResult, ConfigError> {
    let ecus: Vec<&NodeConfig> = cfg
        .nodes
        .iter()
        .filter(|n| n.attack.is_none() && n.sources.len() == 1)
        .collect();
    if ecus.len() < 2 {
        return Err(ConfigError::invalid("nodes", "coverage sweep needs at least two sending ECUs"));
    }
    let ids: Vec<u16> = ecus
        .iter()
        .map(|n| match &n.sources[0] {
            super::scenario::SourceConfig::Periodic(p) => Ok(p.id),
            _ => Err(ConfigError::invalid(format!("nodes.{}", n.name), "coverage ECUs need a periodic message")),
        })
        .collect::<Result<_, _>>()?;
    let n = ecus.len();
    let spare_id = cfg.nodes.iter().map(|n| n.node_id).max().unwrap_or(0) + 1;
    let cells: Vec<(usize, usize, bool)> = (0..n)
        .flat_map(|y| (0..n).filter(move |&x| x != y).flat_map(move |x| [(y, x, false), (y, x, true)]))
        .collect();
    type Cell = (usize, usize, bool);
    let results: Vec<Result<(Cell, bool), ConfigError>> = cells
        .par_iter()
        .map(|&(y, x, sba)| {
            let mut c = cfg.clone();
            c.officer.mode = OfficerSetting::Detect;
            c.name = format!("{}-{}-{}-{}", cfg.name, if sba { "sba" } else { "spoof" }, ecus[y].name, ecus[x].name);
            if sba {
                c.nodes.push(
                    NodeConfig::new("injector", spare_id, NodeKind::SbaAttacker)
                        .monitored(ecus[y].monitored)
                        .with_attack(AttackConfig::Sba {
                            strategy: SbaStrategy::SelectiveDos {
                                target_id: ids[x],
                                max_hits: SWEEP_SBA_HITS,
                            },
                            start: SWEEP_ATTACK_START,
                        }),
                );
            } else {
                let node = c.node_mut(&ecus[y].name).expect("node exists");
                node.kind = NodeKind::FiaAttacker;
                node.attack = Some(AttackConfig::Fia {
                    strategy: FiaStrategy::Spoof {
                        id: ids[x],
                        payload: PayloadGen::Fixed(vec![0xEE, 0xEE]),
                        mode: SpoofMode::Blind,
                        period: SWEEP_SPOOF_PERIOD,
                    },
                    start: SWEEP_ATTACK_START,
                    stop: None,
                });
            }
            let m = run_scenario(&c)?.metrics;
            let detected = m.attack_log_size > 0 && m.detection_rate_percent == Some(100.0);
            Ok(((y, x, sba), detected))
        })
        .collect();
    let mut spoof = vec![vec![None; n]; n];
    let mut sba = vec![vec![None; n]; n];
    for r in results {
        let ((y, x, is_sba), d) = r?;
        if is_sba {
            sba[y][x] = Some(d);
        } else {
            spoof[y][x] = Some(d);
        }
    }
    let mon: Vec<bool> = ecus.iter().map(|e| e.monitored).collect();
    let expect = |f: &dyn Fn(usize, usize) -> bool| Matrix {
        cells: (0..n)
            .map(|y| (0..n).map(|x| (x != y).then(|| f(y, x))).collect())
            .collect(),
    };
    Ok(CoverageResult {
        names: ecus.iter().map(|e| e.name.clone()).collect(),
        monitored: mon.clone(),
        spoof: Matrix { cells: spoof },
        spoof_expected: expect(&|y, x| mon[y] || mon[x]),
        sba: Matrix { cells: sba },
        sba_expected: expect(&|y, _| mon[y]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SensorSample {
    pub bit_time: u64,
    pub value: u16,
    pub spoofed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoResult {
    pub t0: u64,
    pub t1: u64,
    /// First tick the officer checked frames.
    pub activated_at: Option<u64>,
    pub samples: Vec<SensorSample>,
    /// Legitimate sensor frames that were aborted instead of delivered.
    pub dropped: u64,
    pub attacker_busoff_tick: Option<u64>,
}

impl DemoResult {
    /// `(baseline, attacked, restored)` samples split at `t0` and activation.
    pub fn regimes(&self) -> (Vec<SensorSample>, Vec<SensorSample>, Vec<SensorSample>) {
        let t1 = self.activated_at.unwrap_or(u64::MAX);
        let mut r = (Vec::new(), Vec::new(), Vec::new());
        for s in &self.samples {
            if s.bit_time < self.t0 {
                r.0.push(*s);
            } else if s.bit_time < t1 {
                r.1.push(*s);
            } else {
                r.2.push(*s);
            }
        }
        r
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bit_time,value,spoofed\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{}", s.bit_time, s.value, s.spoofed as u8);
        }
        out
    }
}

pub const DEMO_SENSOR_ID: u16 = 0x0A0;
pub const DEMO_T0: u64 = 200_000;
pub const DEMO_T1: u64 = 500_000;
pub const DEMO_DURATION: u64 = 800_000;
pub const DEMO_BASELINE: u16 = 500;
pub const DEMO_SPOOF_VALUE: u16 = 4000;

/// Sensor scenario: attack starts at `t0`, the officer starts preventing at `t1`.
pub fn demo_config(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new("demo-sensor");
    cfg.seed = seed;
    cfg.duration_ticks = DEMO_DURATION;
    cfg.officer.mode = OfficerSetting::Prevent;
    cfg.officer.config.activate_at = DEMO_T1;
    cfg.nodes = vec![
        NodeConfig::new("dashboard", 1, NodeKind::Dashboard),
        NodeConfig::new("sensor", 2, NodeKind::SensorEcu)
            .monitored(true)
            .with_periodic(PeriodicSource {
                // Out of phase with the spoof period so the two never contend.
                offset: 1_250,
                ..PeriodicSource::new(
                    DEMO_SENSOR_ID,
                    10_000,
                    PayloadGen::Sensor {
                        base: DEMO_BASELINE,
                        jitter: 4,
                    },
                )
            }),
        NodeConfig::new("attacker", 3, NodeKind::FiaAttacker)
            .monitored(true)
            .with_attack(AttackConfig::Fia {
                strategy: FiaStrategy::Spoof {
                    id: DEMO_SENSOR_ID,
                    payload: PayloadGen::Fixed(DEMO_SPOOF_VALUE.to_be_bytes().to_vec()),
                    mode: SpoofMode::Blind,
                    period: 2_500,
                },
                start: DEMO_T0,
                stop: None,
            }),
    ];
    cfg
}

pub fn toy_sensor_demo(seed: u64) -> Result<DemoResult, ConfigError> {
    let cfg = demo_config(seed);
    let out = run_scenario(&cfg)?;
    let mut samples = Vec::new();
    let mut dropped = 0;
    for r in out.trace().iter().filter(|r| r.frame.id() == DEMO_SENSOR_ID) {
        match (r.outcome, r.origin) {
            (Outcome::Delivered, origin) => {
                if let Some(value) = sensor_value(r.frame.payload()) {
                    samples.push(SensorSample {
                        bit_time: r.bit_time,
                        value,
                        spoofed: origin == FrameOrigin::Attack,
                    });
                }
            }
            (Outcome::ErrorAborted, FrameOrigin::Legit) => dropped += 1,
            _ => {}
        }
    }
    Ok(DemoResult {
        t0: DEMO_T0,
        t1: DEMO_T1,
        activated_at: out.bus.officer().and_then(|o| o.activated_at()),
        samples,
        dropped,
        attacker_busoff_tick: out.metrics.attacker_busoff_tick,
    })
}
