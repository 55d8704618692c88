use std::path::PathBuf;

use orbit5gc_core::harness::{
    parse_trace, run_scenario, verify_trace, verify_trace_text, Scenario, TraceEvent, TraceRecord,
    World,
};
use orbit5gc_core::nas::{MessageType, NasMessage, Supi};
use orbit5gc_core::satlink::LinkDirection;
use std::net::Ipv4Addr;

const NGAP_HEADER: u64 = 11;

fn scenario(name: &str) -> Scenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name]
        .iter()
        .collect();
    Scenario::load(path).unwrap()
}

fn records(trace: &[u8]) -> Vec<TraceRecord> {
    parse_trace(std::str::from_utf8(trace).unwrap()).unwrap()
}

/// Serialization time of an NGAP-wrapped message, rounded up to whole µs.
fn ser_us(msg: &NasMessage, bps: u64) -> u64 {
    let bits = (msg.encoded_len() as u64 + NGAP_HEADER) * 8;
    (bits * 1_000_000).div_ceil(bps)
}

#[test]
fn sat200ms_registration_latency_matches_closed_form() {
    let out = run_scenario(scenario("sat200ms.toml"));
    let d = 100_000;
    let amf = 500;
    let bps = 10_000_000;
    let supi = Supi::new("001010000000001").unwrap();
    let five = [
        NasMessage::registration_request(&supi),
        NasMessage::authentication_request([0; 16], 1),
        NasMessage::authentication_response([0; 32]),
        NasMessage::registration_accept(1),
        NasMessage::registration_complete(),
    ];
    let ser: u64 = five.iter().map(|m| ser_us(m, bps)).sum();
    let expected = 5 * d + ser + 3 * amf;
    let reg = out.summary.latency_of("registration").unwrap();
    assert_eq!(reg.count, 1);
    assert_eq!(reg.min_us, expected);
    assert!((reg.min_us as f64 - 500_000.0).abs() <= 5_000.0);

    let req = NasMessage::session_establishment_request("internet", 9).unwrap();
    let acc =
        NasMessage::session_establishment_accept(1, Ipv4Addr::new(10, 45, 0, 2), 9, "internet");
    let expected = 2 * d + ser_us(&req, bps) + ser_us(&acc, bps) + 500 + 500;
    assert_eq!(
        out.summary.latency_of("session_setup").unwrap().min_us,
        expected
    );

    let c = out.summary.counters;
    assert_eq!(c.in_uplink.packets, 10);
    assert_eq!(c.delivered_ground.packets, 10);
    assert_eq!(c.in_downlink.packets, 10);
    assert_eq!(c.delivered_ue.packets, 10);
    assert_eq!(c.in_flight.packets, 0);
}

#[test]
fn registration_crosses_the_access_link_five_times() {
    let out = run_scenario(scenario("sat200ms.toml"));
    let recs = records(out.trace.as_bytes());
    let reg_done = recs
        .iter()
        .find(|r| matches!(&r.event, TraceEvent::Procedure { name, .. } if name == "registration"))
        .unwrap()
        .t_us;
    let sends: Vec<(String, String, String)> = recs
        .iter()
        .filter(|r| r.t_us <= reg_done)
        .filter_map(|r| match &r.event {
            TraceEvent::NasSend {
                src, dst, msg_type, ..
            } => Some((src.clone(), dst.clone(), msg_type.clone())),
            _ => None,
        })
        .collect();
    let types: Vec<&str> = sends.iter().map(|s| s.2.as_str()).collect();
    assert_eq!(
        types,
        [
            MessageType::RegistrationRequest.name(),
            MessageType::AuthenticationRequest.name(),
            MessageType::AuthenticationResponse.name(),
            MessageType::RegistrationAccept.name(),
            MessageType::RegistrationComplete.name(),
        ]
    );
    for w in sends.windows(2) {
        assert_eq!(
            w[0].0, w[1].1,
            "each reply comes from the previous receiver"
        );
    }
    let crossings: Vec<LinkDirection> = recs
        .iter()
        .filter(|r| r.t_us <= reg_done)
        .filter_map(|r| match &r.event {
            TraceEvent::LinkSend { link, dir, .. } if link == "access" => Some(*dir),
            _ => None,
        })
        .collect();
    use LinkDirection::*;
    assert_eq!(crossings, [Up, Down, Up, Down, Up]);
}

#[test]
fn shipped_scenarios_verify_clean() {
    for name in [
        "sat200ms.toml",
        "onboard_offload.toml",
        "idle.toml",
        "tiebreak.toml",
        "stress.toml",
    ] {
        let out = run_scenario(scenario(name));
        let text = std::str::from_utf8(out.trace.as_bytes()).unwrap();
        let v = verify_trace_text(text).unwrap();
        assert!(v.is_empty(), "{name}: {v:?}");
        assert!(out.summary.counters.is_conserved(), "{name}");
        let ticks = scenario(name).metrics_ticks() as usize;
        assert_eq!(out.metrics.len(), ticks, "{name}");
    }
}

#[test]
fn same_seed_same_bytes() {
    let a = run_scenario(scenario("stress.toml"));
    let b = run_scenario(scenario("stress.toml"));
    assert_eq!(a.trace.as_bytes(), b.trace.as_bytes());
    assert_eq!(a.metrics_csv(), b.metrics_csv());
    assert_eq!(a.summary, b.summary);
}

#[test]
fn different_seed_changes_the_run() {
    let a = run_scenario(scenario("stress.toml"));
    let b = run_scenario(scenario("stress.toml").with_seed(1235));
    assert_ne!(a.summary.trace_hash, b.summary.trace_hash);
    let body = |o: &orbit5gc_core::harness::RunOutput| {
        std::str::from_utf8(o.trace.as_bytes())
            .unwrap()
            .lines()
            .skip(1)
            .map(str::to_owned)
            .collect::<Vec<_>>()
    };
    assert_ne!(body(&a), body(&b), "traces differ beyond the header seed");
}

#[test]
fn idle_run_ticks_only() {
    let out = run_scenario(scenario("idle.toml"));
    assert_eq!(out.summary.events_processed, 10);
    assert_eq!(out.metrics.len(), 10);
    assert_eq!(out.trace.len(), 2);
    let recs = records(out.trace.as_bytes());
    assert!(matches!(recs[0].event, TraceEvent::Header { .. }));
    assert!(matches!(
        recs[1].event,
        TraceEvent::End {
            events_processed: 10,
            ..
        }
    ));
    for (i, m) in out.metrics.iter().enumerate() {
        assert_eq!(m.t_s, (i + 1) as f64);
        assert_eq!(m.active_ues, 0);
        assert_eq!(m.bytes_up + m.bytes_down, 0);
    }
}

#[test]
fn simultaneous_events_run_in_schedule_order() {
    let out = run_scenario(scenario("tiebreak.toml"));
    let recs = records(out.trace.as_bytes());
    for mt in [
        MessageType::RegistrationRequest,
        MessageType::AuthenticationRequest,
        MessageType::AuthenticationResponse,
        MessageType::RegistrationAccept,
        MessageType::RegistrationComplete,
    ] {
        let order: Vec<&str> = recs
            .iter()
            .filter_map(|r| match &r.event {
                TraceEvent::NasSend { msg_type, supi, .. } if msg_type == mt.name() => {
                    Some(supi.as_str())
                }
                _ => None,
            })
            .collect();
        assert_eq!(
            order,
            ["001010000000301", "001010000000302", "001010000000303"],
            "{mt}"
        );
    }
    assert!(recs
        .iter()
        .all(|r| r.t_us == 0 || matches!(r.event, TraceEvent::End { .. })));
    assert_eq!(out.summary.latency_of("registration").unwrap().max_us, 0);
}

#[test]
fn onboard_traffic_never_touches_the_backhaul() {
    let out = run_scenario(scenario("onboard_offload.toml"));
    let recs = records(out.trace.as_bytes());
    assert!(!recs
        .iter()
        .any(|r| matches!(&r.event, TraceEvent::LinkSend { link, .. } if link == "backhaul")));
    let c = out.summary.counters;
    assert_eq!(c.delivered_ground.packets, 0);
    assert!(c.delivered_onboard.packets > 0);
    assert_eq!(c.delivered_onboard.packets, c.in_downlink.packets);
}

#[test]
fn delivery_before_send_is_flagged() {
    let out = run_scenario(scenario("sat200ms.toml"));
    let mut recs = records(out.trace.as_bytes());
    let i = recs
        .iter()
        .position(|r| matches!(r.event, TraceEvent::LinkDeliver { .. }))
        .unwrap();
    let sent_at = recs[..i]
        .iter()
        .rev()
        .find(|r| matches!(r.event, TraceEvent::LinkSend { .. }))
        .unwrap()
        .t_us;
    recs[i].t_us = sent_at.saturating_sub(1);
    let v = verify_trace(&recs);
    assert!(
        v.iter()
            .any(|v| v.invariant == "ordering" || v.invariant == "propagation"),
        "{v:?}"
    );
    assert!(v.iter().any(|v| v.lines.contains(&(i + 1))), "{v:?}");
}

#[test]
fn counter_mismatch_is_flagged() {
    let out = run_scenario(scenario("sat200ms.toml"));
    let mut recs = records(out.trace.as_bytes());
    let last = recs.len() - 1;
    let TraceEvent::End { counters, .. } = &mut recs[last].event else {
        panic!("trace ends with End");
    };
    counters.delivered_ground.packets += 1;
    let v = verify_trace(&recs);
    assert!(
        v.iter()
            .any(|v| v.invariant == "conservation" || v.invariant == "counter_agreement"),
        "{v:?}"
    );
}

#[test]
fn dropped_record_breaks_conservation() {
    let out = run_scenario(scenario("sat200ms.toml"));
    let mut recs = records(out.trace.as_bytes());
    let i = recs
        .iter()
        .position(|r| matches!(r.event, TraceEvent::UserPktDeliver { .. }))
        .unwrap();
    recs.remove(i);
    assert!(!verify_trace(&recs).is_empty());
}

fn ran_world(extra_link: &str, ues: u32) -> World {
    let toml = format!(
        r#"
name = "ran"
seed = 9
duration_s = 120.0

[links.access]
one_way_delay_us = 0
uplink_bps = 0
downlink_bps = 0
{extra_link}

[links.backhaul]
one_way_delay_us = 0
uplink_bps = 0
downlink_bps = 0

[[ues]]
supi = "001010000000001"
count = {ues}
key = "000102030405060708090a0b0c0d0e0f"
"#
    );
    World::new(Scenario::from_toml_str(&toml).unwrap())
}

#[test]
fn zero_delay_registration_costs_only_processing() {
    let mut w = ran_world("", 1);
    assert_eq!(w.run_registration(0), Ok(3 * 500));
    assert_eq!(
        w.run_registration(0),
        Err(orbit5gc_core::ran::RanError::AlreadyRegistered)
    );
}

#[test]
fn closed_link_times_out() {
    let mut w = ran_world("windows = [[100.0, 110.0]]", 1);
    assert_eq!(
        w.run_registration(0),
        Err(orbit5gc_core::ran::RanError::Timeout)
    );
}

#[test]
fn session_needs_registration() {
    let mut w = ran_world("", 1);
    assert_eq!(
        w.run_session_setup(0, "internet"),
        Err(orbit5gc_core::ran::RanError::NotRegistered)
    );
    w.run_registration(0).unwrap();
    let (ip, latency) = w.run_session_setup(0, "internet").unwrap();
    assert_eq!(ip, Ipv4Addr::new(10, 45, 0, 2));
    assert_eq!(latency, 1000);
    assert_eq!(
        w.run_session_setup(0, "nowhere"),
        Err(orbit5gc_core::ran::RanError::Rejected)
    );
}

#[test]
fn lossless_traffic_is_all_delivered() {
    let mut w = ran_world("", 1);
    assert_eq!(
        w.generate_traffic(0, Ipv4Addr::new(8, 8, 8, 8), 1, 100, 0),
        Err(orbit5gc_core::ran::RanError::NoActiveSession)
    );
    w.run_registration(0).unwrap();
    w.run_session_setup(0, "internet").unwrap();
    let s = w
        .generate_traffic(0, Ipv4Addr::new(8, 8, 8, 8), 100, 500, 1000)
        .unwrap();
    assert_eq!((s.sent, s.delivered, s.dropped), (100, 100, 0));
    assert!(matches!(
        w.generate_traffic(0, Ipv4Addr::new(8, 8, 8, 8), 1, 1485, 0),
        Err(orbit5gc_core::ran::RanError::Oversize { limit: 1484, .. })
    ));
}

/// Loss sits on the backhaul, so the control exchange on the access link
/// always completes and only the user packets are at risk.
fn lossy_delivery(loss: f64, seed: u64) -> u64 {
    let toml = format!(
        r#"
name = "lossy"
seed = {seed}
duration_s = 120.0

[links.access]
one_way_delay_us = 1000
uplink_bps = 0
downlink_bps = 0

[links.backhaul]
one_way_delay_us = 1000
loss_prob = {loss}
uplink_bps = 0
downlink_bps = 0

[[ues]]
supi = "001010000000001"
key = "000102030405060708090a0b0c0d0e0f"
"#
    );
    let mut w = World::new(Scenario::from_toml_str(&toml).unwrap());
    w.run_registration(0).unwrap();
    w.run_session_setup(0, "internet").unwrap();
    let s = w
        .generate_traffic(0, Ipv4Addr::new(8, 8, 8, 8), 100, 200, 1000)
        .unwrap();
    assert_eq!(s.sent, 100);
    assert_eq!(s.delivered + s.dropped, 100);
    s.delivered
}

#[test]
fn lossy_link_is_reproducible_and_plausible() {
    let a = lossy_delivery(0.5, 77);
    assert_eq!(a, lossy_delivery(0.5, 77));
    let ten = lossy_delivery(0.1, 5);
    assert!(
        (75..=97).contains(&ten),
        "delivered {ten} of 100 at 10% loss"
    );
}

#[test]
fn context_estimate_scales_linearly() {
    let mut one = ran_world("", 1);
    one.run_registration(0).unwrap();
    let per = one.amf().context_table_stats().bytes_estimate;
    assert_eq!(per, orbit5gc_core::amf::PER_CONTEXT_BYTES);

    let mut many = ran_world("", 1000);
    for ue in 0..1000 {
        many.run_registration(ue).unwrap();
    }
    let stats = many.amf().context_table_stats();
    assert_eq!(stats.registered, 1000);
    assert_eq!(stats.bytes_estimate, 1000 * per);
    many.run_session_setup(0, "internet").unwrap();
    assert_eq!(
        many.amf().context_table_stats().bytes_estimate,
        1000 * per + orbit5gc_core::amf::SESSION_REF_BYTES
    );
}
