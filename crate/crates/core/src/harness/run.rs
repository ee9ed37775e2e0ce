use std::path::Path;

use crate::attacks::{FiaAgent, SbaInjector, SbaStrategy};
use crate::bus::{Bus, NodeBehavior, NodeKind, Station, TraceRecord};
use crate::controller::Controller;
use crate::error::ConfigError;
use crate::officer::{Alert, AllowlistTable, Officer, OfficerMode};
use crate::traffic::TrafficSource;

use super::metrics::{compute_metrics, Metrics};
use super::scenario::{AllowlistSource, AttackConfig, OfficerSetting, ScenarioConfig, SourceConfig, OFFICER_NODE_ID};

/// Per-node RNG seed derived from the scenario seed.
pub fn node_seed(seed: u64, node_id: u16) -> u64 {
    seed ^ (node_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Learning,
    Main,
}

fn build_bus(cfg: &ScenarioConfig, phase: Phase, table: Option<AllowlistTable>) -> Result<Bus, ConfigError> {
    let mut bus = Bus::new();
    let bus_err = |e: crate::error::BusError| ConfigError::invalid("nodes", e.to_string());
    // Taps are handed out in file order, so both phases number them alike.
    for node in &cfg.nodes {
        let behavior = match (&node.attack, phase) {
            (Some(AttackConfig::Sba { strategy, start }), Phase::Main) => {
                NodeBehavior::Injector(SbaInjector::new(*strategy, *start))
            }
            (Some(AttackConfig::Sba { .. }), Phase::Learning) => NodeBehavior::Injector(SbaInjector::new(
                SbaStrategy::FreezeDoomLoop { duration: 0 },
                u64::MAX,
            )),
            _ => {
                let ctrl = Controller::new(node.node_id).with_busoff_recovery(node.busoff_recovery);
                let mut station = Station::new(ctrl, node_seed(cfg.seed, node.node_id));
                let silent = phase == Phase::Main && node.suppressed;
                if !silent {
                    for src in &node.sources {
                        station = station.with_source(match src {
                            SourceConfig::Periodic(p) => TrafficSource::periodic(p.clone()),
                            SourceConfig::Trace { trace, start, repeat } => {
                                TrafficSource::replay(trace.clone(), *start, *repeat)
                            }
                        });
                    }
                }
                if let (Some(AttackConfig::Fia { strategy, start, stop }), Phase::Main) = (&node.attack, phase) {
                    station = station.with_fia(FiaAgent::new(strategy.clone(), *start, *stop));
                }
                NodeBehavior::Station(Box::new(station))
            }
        };
        bus.attach(node.node_id, node.kind, node.monitored, behavior)
            .map_err(bus_err)?;
    }
    let officer = match phase {
        Phase::Learning => Some(Officer::learning()),
        Phase::Main => match cfg.officer.mode {
            OfficerSetting::Off => None,
            OfficerSetting::Detect => Some(Officer::new(
                OfficerMode::Detect,
                table.unwrap_or_default(),
                cfg.officer.config,
            )),
            OfficerSetting::Prevent => Some(Officer::new(
                OfficerMode::Prevent,
                table.unwrap_or_default(),
                cfg.officer.config,
            )),
        },
    };
    if let Some(o) = officer {
        bus.attach(OFFICER_NODE_ID, NodeKind::Officer, false, NodeBehavior::Officer(Box::new(o)))
            .map_err(bus_err)?;
    }
    Ok(bus)
}

/// Runs the scenario without attacks (suppressed nodes active) and returns
/// the allowlist the officer learned.
pub fn learn_allowlist(cfg: &ScenarioConfig) -> Result<AllowlistTable, ConfigError> {
    let mut bus = build_bus(cfg, Phase::Learning, None)?;
    bus.run(cfg.learn_ticks());
    let officer = bus.take_officer().expect("learning bus has an officer");
    Ok(officer.finish_learning()?)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    /// Allowlist used by the officer, if one ran.
    pub table: Option<AllowlistTable>,
    pub bus: Bus,
    pub metrics: Metrics,
}

impl RunOutput {
    pub fn trace(&self) -> &[TraceRecord] {
        self.bus.trace()
    }

    pub fn alerts(&self) -> &[Alert] {
        self.bus.officer().map_or(&[], |o| o.alerts())
    }

    pub fn trace_text(&self) -> String {
        self.trace().iter().map(|r| r.to_line() + "\n").collect()
    }

    pub fn alerts_text(&self) -> String {
        self.alerts().iter().map(|a| a.to_line() + "\n").collect()
    }

    pub fn metrics_json(&self) -> String {
        serde_json::to_string_pretty(&self.metrics).expect("metrics serialize") + "\n"
    }

    pub fn write_outputs(
        &self,
        trace: Option<&Path>,
        alerts: Option<&Path>,
        metrics: Option<&Path>,
    ) -> Result<(), ConfigError> {
        let write = |path: &Path, text: String| {
            std::fs::write(path, text).map_err(|source| ConfigError::Io {
                path: path.to_path_buf(),
                source,
            })
        };
        if let Some(p) = trace {
            write(p, self.trace_text())?;
        }
        if let Some(p) = alerts {
            write(p, self.alerts_text())?;
        }
        if let Some(p) = metrics {
            write(p, self.metrics_json())?;
        }
        Ok(())
    }
}

/// Learns the allowlist if needed, runs `duration_ticks` and scores the run.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, ConfigError> {
    cfg.validate()?;
    let table = match (&cfg.officer.mode, &cfg.officer.allowlist) {
        (OfficerSetting::Off, _) => None,
        (_, AllowlistSource::Table(t)) => Some(t.clone()),
        (_, AllowlistSource::Learned) => Some(learn_allowlist(cfg)?),
    };
    let mut bus = build_bus(cfg, Phase::Main, table.clone())?;
    bus.run(cfg.duration_ticks);
    let metrics = compute_metrics(cfg, &bus);
    Ok(RunOutput {
        config: cfg.clone(),
        table,
        bus,
        metrics,
    })
}
