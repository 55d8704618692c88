//! Timing emulation of 1-RTT and 2-RTT transport handshakes.
//!
//! Packets are opaque buffers of the declared sizes. Timestamps are taken at
//! the client: a client packet is stamped when it departs, a server packet
//! when it arrives.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::satlink::LinkProfile;

/// Calibration targets: Initial, Handshake, Handshake, Protected Payload.
pub const TABLE1_ELAPSED_MS: [f64; 4] = [0.0, 2.95, 4.93, 5.83];
pub const TABLE1_LENGTHS: [usize; 4] = [1294, 1294, 1294, 1504];
/// Default rate of the payload bus link used for calibration.
pub const DEFAULT_BUS_BPS: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("calibration has no solution: {0}")]
    Calibration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Endpoint {
    Client,
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SchemeKind {
    OneRtt,
    TwoRtt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepClass {
    Handshake,
    Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HandshakeStep {
    pub packet_type: &'static str,
    pub sender: Endpoint,
    pub size: usize,
    pub class: StepClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HandshakeScheme {
    pub kind: SchemeKind,
    steps: Vec<HandshakeStep>,
}

impl HandshakeScheme {
    pub fn one_rtt() -> Self {
        Self::one_rtt_with_sizes(TABLE1_LENGTHS).expect("default sizes are valid")
    }

    pub fn one_rtt_with_sizes(sizes: [usize; 4]) -> Result<Self, TransportError> {
        use Endpoint::*;
        use StepClass::*;
        let layout = [
            ("Initial", Client, Handshake),
            ("Handshake", Server, Handshake),
            ("Handshake", Client, Handshake),
            ("Protected Payload", Client, Payload),
        ];
        Self::build(SchemeKind::OneRtt, &layout, &sizes)
    }

    pub fn two_rtt() -> Self {
        Self::two_rtt_with_sizes([74, 74, 66, 583, 1294, 1504]).expect("default sizes are valid")
    }

    pub fn two_rtt_with_sizes(sizes: [usize; 6]) -> Result<Self, TransportError> {
        use Endpoint::*;
        use StepClass::*;
        let layout = [
            ("Syn", Client, Handshake),
            ("SynAck", Server, Handshake),
            ("Ack", Client, Handshake),
            ("Hello", Client, Handshake),
            ("Finished", Server, Handshake),
            ("Payload", Client, Payload),
        ];
        Self::build(SchemeKind::TwoRtt, &layout, &sizes)
    }

    fn build(
        kind: SchemeKind,
        layout: &[(&'static str, Endpoint, StepClass)],
        sizes: &[usize],
    ) -> Result<Self, TransportError> {
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(TransportError::PreconditionViolated(format!(
                "step {} has zero length",
                i + 1
            )));
        }
        let steps = layout
            .iter()
            .zip(sizes)
            .map(|(&(packet_type, sender, class), &size)| HandshakeStep {
                packet_type,
                sender,
                size,
                class,
            })
            .collect();
        Ok(HandshakeScheme { kind, steps })
    }

    pub fn steps(&self) -> &[HandshakeStep] {
        &self.steps
    }

    /// One-way link crossings that must complete before the connection is
    /// established, as seen from the client.
    pub fn crossings_to_established(&self) -> usize {
        let last = self.last_handshake_index();
        let mut crossings = 0;
        for w in self.steps[..=last].windows(2) {
            if w[0].sender != w[1].sender {
                crossings += 1;
            }
        }
        // A server packet is only seen once it has crossed back.
        if self.steps[last].sender == Endpoint::Server {
            crossings += 1;
        }
        crossings
    }

    fn last_handshake_index(&self) -> usize {
        self.steps
            .iter()
            .rposition(|s| s.class == StepClass::Handshake)
            .expect("every scheme has a handshake step")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HandshakeRow {
    pub number: usize,
    pub packet_type: &'static str,
    pub elapsed_ms: f64,
    pub length_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HandshakeTrace {
    pub kind: SchemeKind,
    pub rows: Vec<HandshakeRow>,
    pub connection_established_ms: f64,
    pub payload_ms: f64,
}

impl fmt::Display for HandshakeTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Number\tPacket Type\tElapsed Time(ms)\tLength(byte)")?;
        for r in &self.rows {
            writeln!(
                f,
                "{}\t{}\t{:.2}\t{}",
                r.number, r.packet_type, r.elapsed_ms, r.length_bytes
            )?;
        }
        Ok(())
    }
}

fn check_profile(profile: &LinkProfile, processing_us: f64) -> Result<(), TransportError> {
    if profile.loss_prob != 0.0 {
        return Err(TransportError::PreconditionViolated(format!(
            "handshake timing needs a lossless link, loss_prob = {}",
            profile.loss_prob
        )));
    }
    if profile.jitter_stddev_us != 0 {
        return Err(TransportError::PreconditionViolated(
            "handshake timing needs a jitter-free link".into(),
        ));
    }
    if !(processing_us >= 0.0 && processing_us.is_finite()) {
        return Err(TransportError::PreconditionViolated(format!(
            "processing time {processing_us} µs must be non-negative"
        )));
    }
    Ok(())
}

fn ser_us(size: usize, bps: u64) -> f64 {
    if bps == 0 {
        0.0
    } else {
        size as f64 * 8.0 * 1e6 / bps as f64
    }
}

/// Plays the scheme over the link. Each packet leaves `processing_us` after
/// the packet that triggered it: the previous inbound packet's arrival when
/// the sender changes, otherwise the end of the sender's own previous
/// transmission. Client-to-server uses the uplink rate.
pub fn run_handshake(
    scheme: &HandshakeScheme,
    profile: &LinkProfile,
    processing_us: f64,
) -> Result<HandshakeTrace, TransportError> {
    check_profile(profile, processing_us)?;
    Ok(play(
        scheme,
        profile,
        profile.one_way_delay_us as f64,
        processing_us,
    ))
}

fn play(
    scheme: &HandshakeScheme,
    profile: &LinkProfile,
    delay: f64,
    processing_us: f64,
) -> HandshakeTrace {
    let mut rows = Vec::with_capacity(scheme.steps.len());
    let mut prev: Option<(Endpoint, f64, f64)> = None;
    for (i, step) in scheme.steps.iter().enumerate() {
        let bps = match step.sender {
            Endpoint::Client => profile.uplink_bps,
            Endpoint::Server => profile.downlink_bps,
        };
        let ser = ser_us(step.size, bps);
        let depart = match prev {
            None => 0.0,
            Some((sender, _, arrive)) if sender != step.sender => arrive + processing_us,
            Some((_, done, _)) => done + processing_us,
        };
        let done = depart + ser;
        let arrive = done + delay;
        let stamp = match step.sender {
            Endpoint::Client => depart,
            Endpoint::Server => arrive,
        };
        rows.push(HandshakeRow {
            number: i + 1,
            packet_type: step.packet_type,
            elapsed_ms: stamp / 1000.0,
            length_bytes: step.size,
        });
        prev = Some((step.sender, done, arrive));
    }
    let established = rows[scheme.last_handshake_index()].elapsed_ms;
    let payload_ms = scheme
        .steps
        .iter()
        .position(|s| s.class == StepClass::Payload)
        .map_or(established, |i| rows[i].elapsed_ms);
    HandshakeTrace {
        kind: scheme.kind,
        rows,
        connection_established_ms: established,
        payload_ms,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchemeComparison {
    pub one_rtt_ms: f64,
    pub two_rtt_ms: f64,
    pub ratio: f64,
}

pub fn compare_schemes(
    profile: &LinkProfile,
    processing_us: f64,
) -> Result<SchemeComparison, TransportError> {
    let one = run_handshake(&HandshakeScheme::one_rtt(), profile, processing_us)?;
    let two = run_handshake(&HandshakeScheme::two_rtt(), profile, processing_us)?;
    let one_rtt_ms = one.connection_established_ms;
    let two_rtt_ms = two.connection_established_ms;
    Ok(SchemeComparison {
        one_rtt_ms,
        two_rtt_ms,
        ratio: if one_rtt_ms > 0.0 {
            two_rtt_ms / one_rtt_ms
        } else {
            f64::NAN
        },
    })
}

/// Link profile for a symmetric bus with the given delay and rate.
pub fn bus_profile(one_way_delay_us: u64, bps: u64) -> LinkProfile {
    LinkProfile::ideal(one_way_delay_us, bps, bps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub one_way_delay_us: f64,
    pub processing_us: f64,
    pub bus_bps: u64,
}

impl Calibration {
    pub fn profile(&self) -> LinkProfile {
        bus_profile(self.one_way_delay_us.round() as u64, self.bus_bps)
    }
}

/// Fits delay and processing so the 1-RTT trace hits the second and fourth
/// reference rows exactly. Every row time is affine in (delay, processing),
/// so three probe runs give the coefficients.
pub fn calibrate_table1(bus_bps: u64) -> Result<Calibration, TransportError> {
    let scheme = HandshakeScheme::one_rtt();
    let row_us = |d: u64, p: f64| -> Result<[f64; 4], TransportError> {
        let t = run_handshake(&scheme, &bus_profile(d, bus_bps), p)?;
        Ok(std::array::from_fn(|i| t.rows[i].elapsed_ms * 1000.0))
    };
    const UNIT: u64 = 1000;
    let base = row_us(0, 0.0)?;
    let with_d = row_us(UNIT, 0.0)?;
    let with_p = row_us(0, UNIT as f64)?;
    let coef = |i: usize| {
        (
            (with_d[i] - base[i]) / UNIT as f64,
            (with_p[i] - base[i]) / UNIT as f64,
            base[i],
        )
    };
    let (a1, b1, c1) = coef(1);
    let (a2, b2, c2) = coef(3);
    let r1 = TABLE1_ELAPSED_MS[1] * 1000.0 - c1;
    let r2 = TABLE1_ELAPSED_MS[3] * 1000.0 - c2;
    let det = a1 * b2 - a2 * b1;
    if det.abs() < 1e-12 {
        return Err(TransportError::Calibration("singular system".into()));
    }
    let d = (r1 * b2 - r2 * b1) / det;
    let p = (a1 * r2 - a2 * r1) / det;
    if d < 0.0 || p < 0.0 {
        return Err(TransportError::Calibration(format!(
            "negative fit (delay {d:.1} µs, processing {p:.1} µs) at {bus_bps} bit/s"
        )));
    }
    Ok(Calibration {
        one_way_delay_us: d,
        processing_us: p,
        bus_bps,
    })
}

/// Runs a scheme on the calibrated bus without rounding the fitted delay.
pub fn run_calibrated(
    scheme: &HandshakeScheme,
    cal: &Calibration,
) -> Result<HandshakeTrace, TransportError> {
    let profile = bus_profile(0, cal.bus_bps);
    check_profile(&profile, cal.processing_us)?;
    Ok(play(
        scheme,
        &profile,
        cal.one_way_delay_us,
        cal.processing_us,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_everything_is_zero() {
        for scheme in [HandshakeScheme::one_rtt(), HandshakeScheme::two_rtt()] {
            let t = run_handshake(&scheme, &bus_profile(0, 0), 0.0).unwrap();
            assert!(t.rows.iter().all(|r| r.elapsed_ms == 0.0));
        }
    }

    #[test]
    fn long_delay_crossing_count() {
        let c = compare_schemes(&bus_profile(100_000, 0), 0.0).unwrap();
        assert!((c.one_rtt_ms - 200.0).abs() < 1e-9);
        assert!((c.two_rtt_ms - 400.0).abs() < 1e-9);
        assert_eq!(HandshakeScheme::one_rtt().crossings_to_established(), 2);
        assert_eq!(HandshakeScheme::two_rtt().crossings_to_established(), 4);
    }

    #[test]
    fn crossing_law_is_exact() {
        let scheme = HandshakeScheme::one_rtt();
        let (d, p, bps) = (777u64, 333.0, 50_000_000u64);
        let t = run_handshake(&scheme, &bus_profile(d, bps), p).unwrap();
        // Initial and server Handshake are clocked before established;
        // the client's second Handshake is stamped at departure.
        let ser = 2.0 * 1294.0 * 8.0 * 1e6 / bps as f64;
        let expected = 2.0 * d as f64 + ser + 2.0 * p;
        assert!((t.connection_established_ms * 1000.0 - expected).abs() < 1e-6);
    }

    #[test]
    fn lossy_profile_rejected() {
        let mut p = bus_profile(10, 0);
        p.loss_prob = 0.1;
        assert!(matches!(
            run_handshake(&HandshakeScheme::one_rtt(), &p, 0.0),
            Err(TransportError::PreconditionViolated(_))
        ));
        assert!(compare_schemes(&p, 0.0).is_err());
        assert!(run_handshake(&HandshakeScheme::one_rtt(), &bus_profile(1, 0), -1.0).is_err());
    }

    #[test]
    fn calibration_hits_anchor_rows() {
        let cal = calibrate_table1(DEFAULT_BUS_BPS).unwrap();
        let t = run_calibrated(&HandshakeScheme::one_rtt(), &cal).unwrap();
        assert!((t.rows[1].elapsed_ms - 2.95).abs() < 1e-6);
        assert!((t.rows[3].elapsed_ms - 5.83).abs() < 1e-6);
        let types: Vec<_> = t.rows.iter().map(|r| r.packet_type).collect();
        assert_eq!(
            types,
            ["Initial", "Handshake", "Handshake", "Protected Payload"]
        );
        for (row, target) in t.rows.iter().zip(TABLE1_ELAPSED_MS) {
            if target > 0.0 {
                assert!((row.elapsed_ms - target).abs() / target <= 0.15, "{row:?}");
            } else {
                assert_eq!(row.elapsed_ms, 0.0);
            }
        }
        let two = run_calibrated(&HandshakeScheme::two_rtt(), &cal).unwrap();
        let ratio = two.connection_established_ms / t.connection_established_ms;
        assert!((1.8..=2.6).contains(&ratio), "{ratio}");
    }

    #[test]
    fn table_rendering() {
        let t = run_handshake(&HandshakeScheme::one_rtt(), &bus_profile(1000, 0), 500.0).unwrap();
        let text = t.to_string();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            "Number\tPacket Type\tElapsed Time(ms)\tLength(byte)"
        );
        assert_eq!(lines[1], "1\tInitial\t0.00\t1294");
        assert_eq!(lines[2], "2\tHandshake\t2.50\t1294");
        assert_eq!(lines[4], "4\tProtected Payload\t3.50\t1504");
    }

    #[test]
    fn elapsed_monotone_with_positive_delay() {
        for scheme in [HandshakeScheme::one_rtt(), HandshakeScheme::two_rtt()] {
            let t = run_handshake(&scheme, &bus_profile(50, 10_000_000), 20.0).unwrap();
            assert!(t.rows.windows(2).all(|w| w[0].elapsed_ms < w[1].elapsed_ms));
        }
    }
}
