use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cantap::error::ConfigError;
use cantap::harness::experiments::{cdf_experiment, coverage_sweep, toy_sensor_demo};
use cantap::harness::run::learn_allowlist;
use cantap::harness::{run_scenario, OfficerSetting, ScenarioConfig};

#[derive(Parser)]
#[command(name = "cantap", version, about = "CAN bus simulator with a CANTX-tap intrusion detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the run length in bit times.
    #[arg(long)]
    ticks: Option<u64>,
    /// Override the officer mode.
    #[arg(long, value_parser = ["off", "detect", "prevent"])]
    mode: Option<String>,
}

impl Overrides {
    fn load(&self, path: &Path) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = ScenarioConfig::load(path)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.ticks {
            cfg.duration_ticks = t;
        }
        if let Some(m) = &self.mode {
            cfg.officer.mode = m.parse::<OfficerSetting>().map_err(|e| ConfigError::invalid("--mode", e))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print its metrics.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        over: Overrides,
        /// Write the frame trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write officer alerts here.
        #[arg(long)]
        alerts: Option<PathBuf>,
        /// Write metrics JSON here.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Learn the id allowlist from an attack-free run.
    Learn {
        scenario: PathBuf,
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Owner-tap transition offsets after arbitration, as a CSV CDF.
    Cdf {
        scenario: PathBuf,
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spoofing and single-bit coverage matrices over the scenario's ECUs.
    SweepCoverage {
        scenario: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Sensor spoofing demo: baseline, attack, then prevention.
    DemoSensor {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the sensor time series as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write(path: &Path, text: &str) -> Result<(), ConfigError> {
    std::fs::write(path, text).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn execute(cmd: Command) -> Result<bool, ConfigError> {
    match cmd {
        Command::Run {
            scenario,
            over,
            trace,
            alerts,
            metrics,
        } => {
            let cfg = over.load(&scenario)?;
            let out = run_scenario(&cfg)?;
            out.write_outputs(trace.as_deref(), alerts.as_deref(), metrics.as_deref())?;
            print!("{}", out.metrics_json());
        }
        Command::Learn { scenario, over, out } => {
            let cfg = over.load(&scenario)?;
            let table = learn_allowlist(&cfg)?;
            table.save(&out)?;
            print!("{}", table.to_text());
        }
        Command::Cdf { scenario, over, out } => {
            let cfg = over.load(&scenario)?;
            let res = cdf_experiment(&cfg)?;
            write(&out, &res.to_csv())?;
            println!(
                "frames {} max_offset {} fraction_at_4 {:.4}",
                res.frames,
                res.max_offset,
                res.fraction_at(4)
            );
        }
        Command::SweepCoverage { scenario, over } => {
            let cfg = over.load(&scenario)?;
            let res = coverage_sweep(&cfg)?;
            print!("{}", res.render());
            let bad = res.mismatches();
            println!("mismatches vs expected: {bad}");
            return Ok(bad == 0);
        }
        Command::DemoSensor { seed, out } => {
            let res = toy_sensor_demo(seed)?;
            if let Some(p) = out {
                write(&p, &res.to_csv())?;
            }
            let (base, attacked, restored) = res.regimes();
            let spoofed = |v: &[cantap::harness::experiments::SensorSample]| v.iter().filter(|s| s.spoofed).count();
            println!("t0 {} t1 {} officer active from {:?}", res.t0, res.t1, res.activated_at);
            println!("baseline: {} samples, {} spoofed", base.len(), spoofed(&base));
            println!(
                "attacked: {} samples, {} spoofed, {} legit frames dropped",
                attacked.len(),
                spoofed(&attacked),
                res.dropped
            );
            println!("restored: {} samples, {} spoofed", restored.len(), spoofed(&restored));
            println!("attacker bus-off at {:?}", res.attacker_busoff_tick);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
