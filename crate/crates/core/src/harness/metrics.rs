use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::attacks::{AttackKind, AttackRecord};
use crate::bus::{Bus, NodeKind, Outcome};
use crate::controller::{ErrorState, FrameOrigin, FrameUid};
use crate::codec::frame::{max_frame_bits, MAX_DLC};
use crate::officer::{Alert, AlertKind};

use super::scenario::ScenarioConfig;

/// Per attack type scores. Rates are percentages; `None` serializes as null (NA).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackScore {
    /// Attack log entries: frame attempts or bit injections.
    pub attempts: u64,
    /// Successful frames (frame injection) or actions (bit injection).
    pub successes: u64,
    pub detected: u64,
    pub asr_percent: Option<f64>,
    pub detection_rate_percent: Option<f64>,
    pub prevention_rate_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub scenario: String,
    pub seed: u64,
    pub duration_ticks: u64,
    pub bitrate_bps: u64,
    pub officer_mode: String,
    pub attack_log_size: u64,
    pub asr_percent: Option<f64>,
    pub detection_rate_percent: Option<f64>,
    pub miss_rate_percent: Option<f64>,
    pub prevention_rate_percent: Option<f64>,
    pub false_positive_count: u64,
    pub alert_count: u64,
    pub alerts_by_kind: BTreeMap<AlertKind, u64>,
    pub per_attack: BTreeMap<AttackKind, AttackScore>,
    pub legit_frames: u64,
    pub legit_delivered: u64,
    /// Legitimate frames delivered more than once.
    pub legit_duplicates: u64,
    pub legit_delivery_rate_percent: Option<f64>,
    pub malicious_delivered: u64,
    pub kills: u64,
    pub escalations_completed: u64,
    pub attacker_busoff_tick: Option<u64>,
    /// Bits from the first kill to the attacker going bus-off.
    pub escalation_bits: Option<u64>,
    pub escalation_us: Option<f64>,
    pub delay_histogram: BTreeMap<u64, u64>,
}

fn percent(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 * 100.0 / den as f64)
}

/// True when `alert` was raised by the attack action `rec`. Any alert on an
/// injected frame counts; a bit injection is answered on the same tick.
pub fn alert_matches(alert: &Alert, rec: &AttackRecord) -> bool {
    if rec.kind.is_fia() {
        let span = max_frame_bits(MAX_DLC) as u64;
        alert.frame_id == rec.frame_id && (rec.bit_time..=rec.bit_time + span).contains(&alert.bit_time)
    } else {
        alert.kind == AlertKind::Error2 && alert.bit_time == rec.bit_time
    }
}

/// Scores one finished run against the attack log.
pub fn compute_metrics(cfg: &ScenarioConfig, bus: &Bus) -> Metrics {
    let trace = bus.trace();
    let log = bus.attack_log().records();
    let officer = bus.officer();
    let alerts: &[Alert] = officer.map_or(&[], |o| o.alerts());
    let preventing = officer.is_some_and(|o| o.mode() == crate::officer::OfficerMode::Prevent);

    let mut deliveries: HashMap<FrameUid, u64> = HashMap::new();
    let mut delivered_attempts: BTreeSet<(FrameUid, u32)> = BTreeSet::new();
    for r in trace.iter().filter(|r| r.outcome == Outcome::Delivered) {
        *deliveries.entry(r.uid).or_default() += 1;
        delivered_attempts.insert((r.uid, r.retransmission_count));
    }

    // Both lists are in time order; a record only looks at alerts within a frame of it.
    let mut used = vec![false; alerts.len()];
    let mut detected = vec![false; log.len()];
    let mut lo = 0;
    for (i, rec) in log.iter().enumerate() {
        while lo < alerts.len() && alerts[lo].bit_time < rec.bit_time {
            lo += 1;
        }
        let horizon = rec.bit_time + max_frame_bits(MAX_DLC) as u64;
        for j in lo..alerts.len() {
            if alerts[j].bit_time > horizon {
                break;
            }
            if alert_matches(&alerts[j], rec) {
                used[j] = true;
                detected[i] = true;
            }
        }
    }
    let false_positive_count = used.iter().filter(|u| !**u).count() as u64;

    // Frame injections succeed per frame, whatever its retransmissions;
    // bit injections per action.
    let mut per_attack: BTreeMap<AttackKind, AttackScore> = BTreeMap::new();
    let mut units: BTreeMap<(AttackKind, Option<FrameUid>, usize), bool> = BTreeMap::new();
    let mut fia_entries = 0;
    let mut fia_prevented = 0;
    let mut prevented: BTreeMap<AttackKind, u64> = BTreeMap::new();
    for (i, rec) in log.iter().enumerate() {
        let delivered = rec.attempt.is_some_and(|a| delivered_attempts.contains(&a));
        let success = match rec.kind {
            AttackKind::Flooding | AttackKind::Spoof | AttackKind::Replay => delivered,
            AttackKind::SelectiveDos => !delivered,
            AttackKind::DoubleReceiving => rec
                .attempt
                .is_some_and(|(uid, _)| deliveries.get(&uid).copied().unwrap_or(0) >= 2),
            // The injected bit always produces the overload frame.
            AttackKind::FreezeDoomLoop => true,
        };
        let key = match (rec.kind.is_fia(), rec.attempt) {
            (true, Some((uid, _))) => (rec.kind, Some(uid), 0),
            _ => (rec.kind, None, i),
        };
        *units.entry(key).or_default() |= success;
        let s = per_attack.entry(rec.kind).or_insert(AttackScore {
            attempts: 0,
            successes: 0,
            detected: 0,
            asr_percent: None,
            detection_rate_percent: None,
            prevention_rate_percent: None,
        });
        s.attempts += 1;
        s.detected += detected[i] as u64;
        if rec.kind.is_fia() {
            fia_entries += 1;
            if detected[i] && !delivered {
                fia_prevented += 1;
                *prevented.entry(rec.kind).or_default() += 1;
            }
        }
    }
    let mut unit_count: BTreeMap<AttackKind, u64> = BTreeMap::new();
    for ((kind, _, _), ok) in &units {
        *unit_count.entry(*kind).or_default() += 1;
        per_attack.get_mut(kind).expect("scored kind").successes += *ok as u64;
    }
    for (kind, s) in per_attack.iter_mut() {
        s.asr_percent = percent(s.successes, unit_count[kind]);
        s.detection_rate_percent = officer.and(percent(s.detected, s.attempts));
        if preventing && kind.is_fia() {
            s.prevention_rate_percent = percent(prevented.get(kind).copied().unwrap_or(0), s.attempts);
        }
    }
    let total_success = units.values().filter(|v| **v).count() as u64;

    let n = log.len() as u64;
    let n_detected = detected.iter().filter(|d| **d).count() as u64;
    let detection_rate_percent = percent(n_detected, n);

    // Legitimate delivery: frames still queued in a live controller are
    // not judged.
    let mut pending: BTreeSet<FrameUid> = BTreeSet::new();
    let mut attacker_busoff_tick: Option<u64> = None;
    for h in bus.handles() {
        if let Some(st) = bus.station(h.node_id) {
            if st.ctrl.error_state() != ErrorState::BusOff {
                pending.extend(st.ctrl.queue().iter().map(|q| q.uid));
            }
            if h.kind == NodeKind::FiaAttacker {
                if let Some(t) = st.ctrl.bus_off_since() {
                    attacker_busoff_tick = Some(attacker_busoff_tick.map_or(t, |b: u64| b.min(t)));
                }
            }
        }
    }
    let mut legit: BTreeSet<FrameUid> = BTreeSet::new();
    let mut malicious_delivered = 0;
    for r in trace {
        match r.origin {
            FrameOrigin::Legit => {
                let fresh = deliveries.contains_key(&r.uid) || !pending.contains(&r.uid);
                if fresh {
                    legit.insert(r.uid);
                }
            }
            FrameOrigin::Attack => malicious_delivered += (r.outcome == Outcome::Delivered) as u64,
        }
    }
    let legit_delivered = legit.iter().filter(|u| deliveries.contains_key(u)).count() as u64;
    let legit_duplicates = legit
        .iter()
        .filter(|u| deliveries.get(u).copied().unwrap_or(0) > 1)
        .count() as u64;

    let report = officer.map(|o| o.report()).unwrap_or_default();
    let escalation_bits = match (attacker_busoff_tick, report.kill_ticks.first()) {
        (Some(b), Some(&k)) if b >= k => Some(b - k),
        _ => None,
    };
    let mut delay_histogram = BTreeMap::new();
    for &t in officer.map_or(&[][..], |o| o.transition_offsets()) {
        *delay_histogram.entry(t).or_default() += 1;
    }

    Metrics {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        duration_ticks: cfg.duration_ticks,
        bitrate_bps: cfg.bitrate_bps,
        officer_mode: cfg.officer.mode.to_string(),
        attack_log_size: n,
        asr_percent: percent(total_success, units.len() as u64),
        detection_rate_percent: officer.and(detection_rate_percent),
        miss_rate_percent: officer.and(percent(n - n_detected, n)),
        prevention_rate_percent: if preventing { percent(fia_prevented, fia_entries) } else { None },
        false_positive_count,
        alert_count: alerts.len() as u64,
        alerts_by_kind: report.alerts_by_kind.clone(),
        per_attack,
        legit_frames: legit.len() as u64,
        legit_delivered,
        legit_duplicates,
        legit_delivery_rate_percent: percent(legit_delivered, legit.len() as u64),
        malicious_delivered,
        kills: report.kills,
        escalations_completed: report.escalations_completed,
        attacker_busoff_tick,
        escalation_bits,
        escalation_us: escalation_bits.map(|b| b as f64 * 1e6 / cfg.bitrate_bps as f64),
        delay_histogram,
    }
}
