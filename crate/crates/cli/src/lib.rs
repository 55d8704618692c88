//! Subcommands of the `orbit5gc` binary. Each command writes its report to
//! the given sink and returns a process exit code.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use orbit5gc_core::harness::trace::format_hash;
use orbit5gc_core::harness::{verify_trace_text, ConfigError, Scenario, Violation, World};
use orbit5gc_core::nas::parse_vectors;
use orbit5gc_core::satlink::{
    compare_fiber_vs_leo, GeometryError, OrbitGeometry, DEFAULT_FIBER_STRETCH,
};
use orbit5gc_core::transport::{
    bus_profile, calibrate_table1, run_calibrated, run_handshake, HandshakeScheme, TransportError,
    DEFAULT_BUS_BPS,
};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATIONS: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const SEED_ENV: &str = "ORBIT5GC_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "orbit5gc",
    version,
    about = "Orbital 5G core over an emulated satellite link"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario, verify its trace and print a summary.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed and ORBIT5GC_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for trace.jsonl, metrics.csv and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pace the simulated clock against the wall clock.
        #[arg(long)]
        real_time: bool,
    },
    /// Check a JSONL trace against the core invariants.
    Verify { trace: PathBuf },
    /// Emulate the 1-RTT and 2-RTT handshakes over a bus link.
    BenchHandshake {
        #[arg(long, default_value_t = 1000)]
        delay_us: u64,
        #[arg(long, default_value_t = 500.0)]
        proc_us: f64,
        #[arg(long, default_value_t = DEFAULT_BUS_BPS)]
        bus_bps: u64,
        /// Fit delay and processing to the reference measurement first.
        #[arg(long)]
        calibrate_table1: bool,
        #[arg(long)]
        json: bool,
    },
    /// Check a file of `hex<TAB>text` codec vectors.
    CodecVectors { file: PathBuf },
    /// One-way latency of a fiber route against a LEO path.
    CompareLatency {
        #[arg(long)]
        path_km: f64,
        #[arg(long)]
        altitude_km: f64,
        #[arg(long)]
        elevation_deg: f64,
        #[arg(long, default_value_t = 2)]
        hops: u32,
        #[arg(long, default_value_t = DEFAULT_FIBER_STRETCH)]
        stretch: f64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{SEED_ENV}={0:?} is not an unsigned 64-bit integer")]
    SeedEnv(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Runs a parsed command. Configuration problems come back as `Err` and map
/// to exit code 2.
pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match cmd {
        Command::Run {
            scenario,
            seed,
            out: dir,
            real_time,
        } => {
            let env_seed = std::env::var(SEED_ENV).ok();
            run(
                &scenario,
                seed,
                env_seed.as_deref(),
                dir.as_deref(),
                real_time,
                out,
            )
        }
        Command::Verify { trace } => verify(&trace, out),
        Command::BenchHandshake {
            delay_us,
            proc_us,
            bus_bps,
            calibrate_table1,
            json,
        } => bench_handshake(delay_us, proc_us, bus_bps, calibrate_table1, json, out),
        Command::CodecVectors { file } => codec_vectors(&file, out),
        Command::CompareLatency {
            path_km,
            altitude_km,
            elevation_deg,
            hops,
            stretch,
            json,
        } => compare_latency(
            path_km,
            altitude_km,
            elevation_deg,
            hops,
            stretch,
            json,
            out,
        ),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn report_violations(violations: &[Violation], out: &mut dyn Write) {
    for v in violations {
        let _ = writeln!(
            out,
            "violation {} at lines {:?}: {}",
            v.invariant, v.lines, v.detail
        );
    }
}

/// Seed precedence: `--seed`, then the environment, then the scenario file.
pub fn run(
    path: &Path,
    seed: Option<u64>,
    env_seed: Option<&str>,
    dir: Option<&Path>,
    real_time: bool,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let mut scenario = Scenario::load(path)?;
    if let Some(raw) = env_seed {
        let parsed = raw
            .trim()
            .parse::<u64>()
            .map_err(|_| CliError::SeedEnv(raw.to_string()))?;
        scenario = scenario.with_seed(parsed);
    }
    if let Some(s) = seed {
        scenario = scenario.with_seed(s);
    }
    let mut world = World::new(scenario);
    world.set_real_time(real_time);
    let output = world.run();
    if let Some(dir) = dir {
        output.write_to_dir(dir).map_err(|source| CliError::Write {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let s = &output.summary;
    let _ = writeln!(out, "scenario {} seed {}", s.scenario, s.seed);
    let _ = writeln!(
        out,
        "events {} trace records {} metrics records {}",
        s.events_processed, s.trace_records, s.metrics_records
    );
    for (name, stats) in &s.latency {
        let _ = writeln!(
            out,
            "latency {name}: n={} min={:.3} ms mean={:.3} ms max={:.3} ms",
            stats.count,
            stats.min_us as f64 / 1000.0,
            stats.mean_us / 1000.0,
            stats.max_us as f64 / 1000.0
        );
    }
    for (name, outcomes) in &s.outcomes {
        let parts: Vec<String> = outcomes.iter().map(|(o, n)| format!("{o}={n}")).collect();
        let _ = writeln!(out, "outcomes {name}: {}", parts.join(" "));
    }
    let c = &s.counters;
    let _ = writeln!(
        out,
        "packets in_up={} in_down={} onboard={} ground={} ue={} no_rule={} link={} in_flight={}",
        c.in_uplink.packets,
        c.in_downlink.packets,
        c.delivered_onboard.packets,
        c.delivered_ground.packets,
        c.delivered_ue.packets,
        c.dropped_no_rule.packets,
        c.dropped_link.packets,
        c.in_flight.packets
    );
    let text = std::str::from_utf8(output.trace.as_bytes()).expect("trace is UTF-8");
    let violations = verify_trace_text(text).expect("own trace parses");
    report_violations(&violations, out);
    let _ = writeln!(out, "trace hash {}", format_hash(output.trace.hash()));
    let _ = writeln!(out, "violations {}", violations.len());
    Ok(if violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_VIOLATIONS
    })
}

pub fn verify(path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let text = read(path)?;
    let violations = verify_trace_text(&text).map_err(|e| CliError::Input(e.to_string()))?;
    report_violations(&violations, out);
    let _ = writeln!(
        out,
        "{} records, {} violations",
        text.lines().filter(|l| !l.trim().is_empty()).count(),
        violations.len()
    );
    Ok(if violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_VIOLATIONS
    })
}

pub fn bench_handshake(
    delay_us: u64,
    proc_us: f64,
    bus_bps: u64,
    calibrate: bool,
    json: bool,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let (one, two, delay, processing) = if calibrate {
        let cal = calibrate_table1(bus_bps)?;
        (
            run_calibrated(&HandshakeScheme::one_rtt(), &cal)?,
            run_calibrated(&HandshakeScheme::two_rtt(), &cal)?,
            cal.one_way_delay_us,
            cal.processing_us,
        )
    } else {
        let profile = bus_profile(delay_us, bus_bps);
        (
            run_handshake(&HandshakeScheme::one_rtt(), &profile, proc_us)?,
            run_handshake(&HandshakeScheme::two_rtt(), &profile, proc_us)?,
            delay_us as f64,
            proc_us,
        )
    };
    let ratio = two.connection_established_ms / one.connection_established_ms;
    if json {
        let v = serde_json::json!({
            "one_way_delay_us": delay,
            "processing_us": processing,
            "bus_bps": bus_bps,
            "one_rtt": one,
            "two_rtt": two,
            "ratio": ratio,
        });
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&v).expect("serializable")
        );
        return Ok(EXIT_OK);
    }
    let _ = writeln!(
        out,
        "one-way delay {delay:.1} us, processing {processing:.1} us, bus {bus_bps} bit/s"
    );
    let _ = writeln!(out, "\n1-RTT");
    let _ = write!(out, "{one}");
    let _ = writeln!(out, "\n2-RTT");
    let _ = write!(out, "{two}");
    let _ = writeln!(
        out,
        "\nestablished 1-RTT {:.2} ms, 2-RTT {:.2} ms, ratio {ratio:.2}",
        one.connection_established_ms, two.connection_established_ms
    );
    Ok(EXIT_OK)
}

pub fn codec_vectors(path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let text = read(path)?;
    let vectors = parse_vectors(&text)
        .map_err(|f| CliError::Input(format!("{}:{}: {}", path.display(), f.line, f.reason)))?;
    let mut failed = 0;
    for v in &vectors {
        match v.check() {
            Ok(()) => {
                let _ = writeln!(out, "ok   line {}: {}", v.line, v.text);
            }
            Err(f) => {
                failed += 1;
                let _ = writeln!(out, "FAIL line {}: {}", f.line, f.reason);
            }
        }
    }
    let _ = writeln!(out, "{} vectors, {} failed", vectors.len(), failed);
    Ok(if failed == 0 {
        EXIT_OK
    } else {
        EXIT_VIOLATIONS
    })
}

pub fn compare_latency(
    path_km: f64,
    altitude_km: f64,
    elevation_deg: f64,
    hops: u32,
    stretch: f64,
    json: bool,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let geom = OrbitGeometry::new(altitude_km, elevation_deg)?;
    let c = compare_fiber_vs_leo(path_km, &geom, hops, stretch)?;
    if json {
        let _ = writeln!(out, "{}", serde_json::to_string(&c).expect("serializable"));
    } else {
        let _ = writeln!(out, "slant range {:.3} km", geom.slant_range_km());
        let _ = writeln!(out, "fiber {:.3} ms", c.fiber_us / 1000.0);
        let _ = writeln!(out, "leo {:.3} ms", c.leo_us / 1000.0);
        let _ = writeln!(out, "improvement {:.4}", c.improvement_ratio);
    }
    Ok(EXIT_OK)
}
