//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Tolerances are the constants below.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use cantap::bus::{Bus, NodeBehavior, NodeKind, Outcome, Station};
use cantap::codec::stuffing::{destuff_levels, longest_run, stuff_levels};
use cantap::codec::{serialize, FrameSpec};
use cantap::controller::{Controller, ControllerEvent, ErrorCounters, ErrorState, Schedule};
use cantap::error::PreventError;
use cantap::harness::experiments::{cdf_experiment, coverage_sweep, toy_sensor_demo, CoverageResult, DemoResult};
use cantap::harness::{run_scenario, OfficerSetting, RunOutput, ScenarioConfig};
use cantap::officer::{AlertKind, Officer, OfficerMode, ERROR1_WINDOW};

/// Exact rates: the simulation is deterministic.
const RATE_EXACT: f64 = 100.0;
const ATTACK_FREE_SEEDS: u64 = 20;
const CDF_MIN_FRAMES: u64 = 10_000;
const CDF_BOUND: u64 = ERROR1_WINDOW;
const STUFF_FRAMES: usize = 10_000;
const ARBITRATION_SETS: usize = 1_000;
const ESCALATION_MAX_ERRORS: u32 = 32;

fn scenario(name: &str) -> ScenarioConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    ScenarioConfig::load(&p).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn with_mode(mut cfg: ScenarioConfig, mode: OfficerSetting) -> ScenarioConfig {
    cfg.officer.mode = mode;
    cfg
}

fn with_seed(mut cfg: ScenarioConfig, seed: u64) -> ScenarioConfig {
    cfg.seed = seed;
    cfg
}

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: u32, name: &str, result: Result<String, String>) {
        match result {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(why) => {
                self.failed += 1;
                println!("FAIL criterion {n} ({name}): {why}");
            }
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn table2_configs() -> Vec<ScenarioConfig> {
    let mut v = Vec::new();
    for row in ["table2-row1.scn", "table2-row2.scn", "table2-row3.scn"] {
        for mode in [OfficerSetting::Off, OfficerSetting::Detect, OfficerSetting::Prevent] {
            v.push(with_mode(scenario(row), mode));
        }
    }
    v
}

fn attack_free_configs() -> Vec<ScenarioConfig> {
    (0..ATTACK_FREE_SEEDS)
        .map(|s| with_seed(scenario("attack-free.scn"), 1000 + s))
        .collect()
}

fn criterion1(runs: &[RunOutput]) -> Result<String, String> {
    let mut lines = Vec::new();
    for out in runs {
        let m = &out.metrics;
        let tag = format!("{} {}", m.scenario, m.officer_mode);
        check(m.false_positive_count == 0, || format!("{tag}: {} false positives", m.false_positive_count))?;
        check(m.attack_log_size > 0, || format!("{tag}: no attack recorded"))?;
        match out.config.officer.mode {
            OfficerSetting::Off => {
                check(m.asr_percent == Some(RATE_EXACT), || format!("{tag}: ASR {:?}", m.asr_percent))?;
                lines.push(format!("{tag} ASR 100"));
            }
            OfficerSetting::Detect => {
                check(m.detection_rate_percent == Some(RATE_EXACT), || {
                    format!("{tag}: detection {:?}", m.detection_rate_percent)
                })?;
                lines.push(format!("{tag} detection 100"));
            }
            OfficerSetting::Prevent if m.scenario == "table2-row3" => {
                check(m.prevention_rate_percent.is_none(), || format!("{tag}: prevention not NA"))?;
                check(m.kills == 0, || format!("{tag}: {} kills on detect-only alerts", m.kills))?;
                let a = out
                    .alerts()
                    .iter()
                    .find(|a| a.kind == AlertKind::Error2)
                    .ok_or_else(|| format!("{tag}: no Error2 alert"))?;
                let mut o = Officer::new(OfficerMode::Prevent, out.table.clone().unwrap_or_default(), out.config.officer.config);
                check(o.prevent(a) == Err(PreventError::DetectOnly("Error2")), || {
                    format!("{tag}: prevent accepted an Error2 alert")
                })?;
                lines.push(format!("{tag} prevention NA (refused)"));
            }
            OfficerSetting::Prevent => {
                check(m.prevention_rate_percent == Some(RATE_EXACT), || {
                    format!("{tag}: prevention {:?}", m.prevention_rate_percent)
                })?;
                lines.push(format!("{tag} prevention 100"));
            }
        }
    }
    Ok(lines.join("; "))
}

fn criterion2(runs: &[RunOutput]) -> Result<String, String> {
    let alerts: usize = runs.iter().map(|o| o.alerts().len()).sum();
    let frames: u64 = runs.iter().map(|o| o.metrics.legit_frames).sum();
    check(runs.len() as u64 >= ATTACK_FREE_SEEDS, || "too few seeds".into())?;
    check(alerts == 0, || format!("{alerts} alerts over {} runs", runs.len()))?;
    for o in runs {
        let m = &o.metrics;
        check(m.legit_delivery_rate_percent == Some(RATE_EXACT) && m.legit_duplicates == 0, || {
            format!("seed {}: legit delivery {:?}", m.seed, m.legit_delivery_rate_percent)
        })?;
    }
    Ok(format!("{} seeds, {frames} legitimate frames, 0 alerts", runs.len()))
}

fn criterion3() -> Result<String, String> {
    let res = cdf_experiment(&scenario("cdf.scn")).map_err(|e| e.to_string())?;
    check(res.frames >= CDF_MIN_FRAMES, || format!("only {} frames", res.frames))?;
    check(res.max_offset <= CDF_BOUND, || format!("max offset {}", res.max_offset))?;
    check(res.cdf.windows(2).all(|w| w[0].1 <= w[1].1), || "CDF not monotone".into())?;
    check(res.cdf.last().map(|c| c.1) == Some(1.0), || "CDF does not reach 1".into())?;
    Ok(format!(
        "{} frames, max offset {} <= {CDF_BOUND}, fraction by offset 4 = {:.3}",
        res.frames,
        res.max_offset,
        res.fraction_at(4)
    ))
}

// Expected matrices for tapped = {A, B}, written out cell by cell.
const TABLE_SPOOF: [[&str; 4]; 4] = [
    ["-", "Y", "Y", "Y"],
    ["Y", "-", "Y", "Y"],
    ["Y", "Y", "-", "N"],
    ["Y", "Y", "N", "-"],
];
const TABLE_SBA: [[&str; 4]; 4] = [
    ["-", "Y", "Y", "Y"],
    ["Y", "-", "Y", "Y"],
    ["N", "N", "-", "N"],
    ["N", "N", "N", "-"],
];

fn cells_as_text(m: &cantap::harness::experiments::Matrix) -> Vec<Vec<&'static str>> {
    m.cells
        .iter()
        .map(|r| {
            r.iter()
                .map(|c| match c {
                    None => "-",
                    Some(true) => "Y",
                    Some(false) => "N",
                })
                .collect()
        })
        .collect()
}

fn criterion4(res: &CoverageResult) -> Result<String, String> {
    check(res.names == ["A", "B", "C", "D"] && res.monitored == [true, true, false, false], || {
        format!("unexpected testbed {:?} {:?}", res.names, res.monitored)
    })?;
    let spoof = cells_as_text(&res.spoof);
    let sba = cells_as_text(&res.sba);
    check(spoof == TABLE_SPOOF, || format!("spoofing matrix {spoof:?}"))?;
    check(sba == TABLE_SBA, || format!("single-bit matrix {sba:?}"))?;
    Ok("spoofing 12/12 and single-bit 12/12 cells match".into())
}

fn criterion5(res: &DemoResult) -> Result<String, String> {
    let (base, attacked, restored) = res.regimes();
    let spoofed = |v: &[cantap::harness::experiments::SensorSample]| v.iter().filter(|s| s.spoofed).count();
    check(!base.is_empty() && spoofed(&base) == 0, || "baseline regime not clean".into())?;
    check(spoofed(&attacked) > 0, || "no spoofed samples while attacked".into())?;
    check(!restored.is_empty() && spoofed(&restored) == 0, || {
        format!("restored regime has {} spoofed samples", spoofed(&restored))
    })?;
    let post_t1 = res.samples.iter().filter(|s| s.bit_time >= res.t1 && s.spoofed).count();
    check(post_t1 == 0, || format!("{post_t1} spoofed samples after t1"))?;
    check(res.attacker_busoff_tick.is_some(), || "attacker not bus-off".into())?;
    Ok(format!(
        "baseline {} / attacked {} ({} spoofed) / restored {} samples; attacker bus-off at {}",
        base.len(),
        attacked.len(),
        spoofed(&attacked),
        restored.len(),
        res.attacker_busoff_tick.unwrap()
    ))
}

fn reference_stuff(raw: &[bool]) -> Vec<bool> {
    let mut out = Vec::new();
    let (mut last, mut run) = (None, 0);
    for &b in raw {
        out.push(b);
        run = if Some(b) == last { run + 1 } else { 1 };
        last = Some(b);
        if run == 5 {
            out.push(!b);
            last = Some(!b);
            run = 1;
        }
    }
    out
}

fn random_frame(rng: &mut ChaCha8Rng) -> FrameSpec {
    let dlc = rng.gen_range(0..=8);
    let payload: Vec<u8> = (0..dlc).map(|_| rng.gen()).collect();
    FrameSpec::new(rng.gen_range(0..=0x7FF), payload).unwrap()
}

// `a` wins against `b` if it sends Dominant at the first identifier bit where they differ.
fn beats(a: u16, b: u16) -> bool {
    let bit = (0..11).rev().find(|&k| (a >> k & 1) != (b >> k & 1)).expect("distinct ids");
    a >> bit & 1 == 0
}

fn criterion6() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..STUFF_FRAMES {
        let f = random_frame(&mut rng);
        let raw = serialize(&f).unwrap().bits;
        let (stuffed, _) = stuff_levels(&raw);
        let bools: Vec<bool> = raw.iter().map(|l| l.as_bit()).collect();
        let ours: Vec<bool> = stuffed.iter().map(|l| l.as_bit()).collect();
        check(ours == reference_stuff(&bools), || format!("frame {i}: stuffing differs from reference"))?;
        check(longest_run(&stuffed) <= 5, || format!("frame {i}: six-bit run"))?;
        check(destuff_levels(&stuffed).ok().as_deref() == Some(&raw[..]), || format!("frame {i}: round trip"))?;
    }
    for set in 0..ARBITRATION_SETS {
        let k = rng.gen_range(2..=6);
        let mut ids: Vec<u16> = Vec::new();
        while ids.len() < k {
            let id = rng.gen_range(0..=0x7FF);
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        let mut bus = Bus::new();
        for (i, &id) in ids.iter().enumerate() {
            let mut s = Station::new(Controller::new(i as u16 + 1), i as u64);
            s.ctrl.enqueue(FrameSpec::new(id, vec![0; 2]).unwrap(), Schedule::Now);
            bus.attach(i as u16 + 1, NodeKind::Ecu, false, NodeBehavior::Station(Box::new(s)))
                .unwrap();
        }
        bus.attach(99, NodeKind::Dashboard, false, NodeBehavior::Station(Box::new(Station::new(Controller::new(99), 0))))
            .unwrap();
        bus.run(120);
        // Brute force: the contender that beats every other one pairwise.
        let oracle = *ids
            .iter()
            .find(|&&a| ids.iter().all(|&b| a == b || beats(a, b)))
            .unwrap();
        let won = bus.trace().iter().find(|r| r.outcome == Outcome::Delivered).map(|r| r.frame.id());
        check(won == Some(oracle), || format!("set {set} {ids:?}: bus picked {won:?}, oracle {oracle:03X}"))?;
    }
    let mut c = ErrorCounters::default();
    let (mut tec, mut rec) = (0u32, 0u32);
    for _ in 0..100_000 {
        match rng.gen_range(0..4) {
            0 => (c.on_tx_error(), tec += 8).1,
            1 => (c.on_rx_error(), rec += 1).1,
            2 => (c.on_tx_success(), tec = tec.saturating_sub(1)).1,
            _ => (c.on_rx_success(), rec = rec.saturating_sub(1)).1,
        };
        check(c.tec == tec && c.rec == rec, || "counter replay diverged".into())?;
        if tec > 255 {
            c = ErrorCounters::default();
            tec = 0;
            rec = 0;
        }
    }
    let mut ctrl = Controller::new(1);
    ctrl.enqueue(FrameSpec::new(0x55, vec![1]).unwrap(), Schedule::Now);
    let mut errors = 0;
    let mut passive_at = None;
    let mut off_at = None;
    for t in 0..100_000 {
        let l = ctrl.drive(t);
        if let Some(ControllerEvent::TxError { .. }) = ctrl.sense(l) {
            errors += 1;
            if passive_at.is_none() && ctrl.error_state() == ErrorState::ErrorPassive {
                passive_at = Some(errors);
            }
            if off_at.is_none() && ctrl.error_state() == ErrorState::BusOff {
                off_at = Some(errors);
            }
        }
    }
    check(passive_at == Some(16) && off_at == Some(32), || {
        format!("passive after {passive_at:?}, bus-off after {off_at:?} errors")
    })?;
    Ok(format!(
        "{STUFF_FRAMES} stuffing round trips, {ARBITRATION_SETS} arbitration sets, counter replay, passive at 16 / bus-off at 32"
    ))
}

fn criterion7(out: &RunOutput) -> Result<String, String> {
    let m = &out.metrics;
    check(m.legit_frames > 0 && m.legit_delivered == m.legit_frames, || {
        format!("{}/{} legitimate frames delivered", m.legit_delivered, m.legit_frames)
    })?;
    check(m.legit_duplicates == 0, || format!("{} duplicates", m.legit_duplicates))?;
    check(m.malicious_delivered == 0, || format!("{} malicious frames delivered", m.malicious_delivered))?;
    check(m.kills > 0 && m.escalations_completed == m.kills, || {
        format!("{} kills, {} escalations", m.kills, m.escalations_completed)
    })?;
    let attacker = out
        .bus
        .handles()
        .into_iter()
        .find(|h| h.kind == NodeKind::FiaAttacker)
        .and_then(|h| out.bus.station(h.node_id))
        .ok_or("no attacker")?;
    let errors = attacker.ctrl.counters().tec / 8;
    check(attacker.ctrl.is_bus_off() && errors <= ESCALATION_MAX_ERRORS, || {
        format!("attacker tec {} bus-off {}", attacker.ctrl.counters().tec, attacker.ctrl.is_bus_off())
    })?;
    Ok(format!(
        "{} legitimate frames delivered once, 0 malicious, bus-off after {errors} error cycles, escalation {} bits = {:.0} us at {} bps",
        m.legit_frames,
        m.escalation_bits.unwrap_or(0),
        m.escalation_us.unwrap_or(0.0),
        m.bitrate_bps
    ))
}

fn files(dir: &Path, tag: &str, out: &RunOutput) -> Vec<PathBuf> {
    let p = |ext: &str| dir.join(format!("{tag}.{ext}"));
    let (t, a, m) = (p("trace"), p("alerts"), p("json"));
    out.write_outputs(Some(&t), Some(&a), Some(&m)).unwrap();
    vec![t, a, m]
}

fn criterion8(first: &[RunOutput], extra: &[(String, String)]) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let again: Vec<RunOutput> = first
        .par_iter()
        .map(|o| run_scenario(&o.config).expect("rerun"))
        .collect();
    let mut compared = 0;
    for (i, (a, b)) in first.iter().zip(&again).enumerate() {
        for (fa, fb) in files(dir.path(), &format!("a{i}"), a).iter().zip(files(dir.path(), &format!("b{i}"), b).iter()) {
            let (x, y) = (std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());
            check(x == y, || format!("{} differs between runs", fa.display()))?;
            compared += 1;
        }
    }
    for (name, text) in extra {
        let again = match name.as_str() {
            "cdf" => cdf_experiment(&scenario("cdf.scn")).unwrap().to_csv(),
            "coverage" => coverage_sweep(&scenario("coverage.scn")).unwrap().render(),
            _ => toy_sensor_demo(1).unwrap().to_csv(),
        };
        check(&again == text, || format!("{name} output differs between runs"))?;
        compared += 1;
    }
    Ok(format!("{compared} output files byte-identical across two runs"))
}

fn main() -> ExitCode {
    let mut report = Report { failed: 0 };

    let table2: Vec<RunOutput> = table2_configs()
        .par_iter()
        .map(|c| run_scenario(c).expect("attack scenario"))
        .collect();
    report.line(1, "attack outcomes", criterion1(&table2));

    let quiet: Vec<RunOutput> = attack_free_configs()
        .par_iter()
        .map(|c| run_scenario(c).expect("attack-free scenario"))
        .collect();
    report.line(2, "zero false positives", criterion2(&quiet));

    report.line(3, "transition bound", criterion3());

    let coverage = coverage_sweep(&scenario("coverage.scn")).expect("sweep");
    report.line(4, "coverage matrices", criterion4(&coverage));

    let demo = toy_sensor_demo(1).expect("demo");
    report.line(5, "sensor demo", criterion5(&demo));

    report.line(6, "protocol conformance", criterion6());

    let row2_prevent = table2
        .iter()
        .find(|o| o.metrics.scenario == "table2-row2" && o.config.officer.mode == OfficerSetting::Prevent)
        .expect("row 2 prevent run");
    report.line(7, "prevention non-interference", criterion7(row2_prevent));

    let mut all: Vec<RunOutput> = table2;
    all.extend(quiet);
    let extra = vec![
        ("cdf".to_string(), cdf_experiment(&scenario("cdf.scn")).unwrap().to_csv()),
        ("coverage".to_string(), coverage.render()),
        ("demo".to_string(), demo.to_csv()),
    ];
    report.line(8, "determinism", criterion8(&all, &extra));

    if report.failed == 0 {
        println!("acceptance: all 8 criteria PASS");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria FAIL", report.failed);
        ExitCode::FAILURE
    }
}
