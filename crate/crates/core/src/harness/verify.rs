//! Offline invariant checks over a recorded trace.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::Ipv4Addr;

use serde::Serialize;

use crate::amf::RegistrationState;
use crate::ran::UeRegState;
use crate::satlink::LinkDirection;
use crate::smf::SessionState;
use crate::upf::{DnTarget, PacketCounters};

use super::trace::{parse_trace, LinkInfo, MalformedTrace, Origin, Plane, TraceEvent, TraceRecord};
use super::world::BACKHAUL_LINK;

pub const ORDERING: &str = "ordering";
pub const PROPAGATION: &str = "propagation";
pub const FIFO: &str = "fifo";
pub const CONTACT_WINDOW: &str = "contact_window";
pub const CONSERVATION: &str = "conservation";
pub const COUNTER_AGREEMENT: &str = "counter_agreement";
pub const SMF_UPF_AGREEMENT: &str = "smf_upf_agreement";
pub const SESSION_REGISTRATION: &str = "session_requires_registration";
pub const UE_STATE_LAG: &str = "ue_state_lag";
pub const ONBOARD_ISOLATION: &str = "onboard_isolation";
pub const STRUCTURE: &str = "structure";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub invariant: &'static str,
    /// 1-based line numbers of the offending records.
    pub lines: Vec<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Copy)]
struct SentMessage {
    line: usize,
    dir: LinkDirection,
    tx_start: u64,
    min_delay: u64,
    delivered: bool,
}

#[derive(Default)]
struct Checker {
    violations: Vec<Violation>,
    links: HashMap<String, LinkInfo>,
    sent: HashMap<(String, u64), SentMessage>,
    last_delivered: HashMap<(String, LinkDirection), u64>,
    derived: PacketCounters,
    packet_size: HashMap<u64, u64>,
    settled: HashSet<u64>,
    classified: HashMap<u64, DnTarget>,
    origin: HashMap<u64, Origin>,
    sessions: BTreeMap<u32, (String, Ipv4Addr)>,
    rules: BTreeMap<u32, Ipv4Addr>,
    amf: HashMap<String, RegistrationState>,
    ue: HashMap<String, UeRegState>,
    dirty: bool,
    step_line: usize,
}

impl Checker {
    fn flag(&mut self, invariant: &'static str, lines: Vec<usize>, detail: String) {
        self.violations.push(Violation {
            invariant,
            lines,
            detail,
        });
    }

    /// State-agreement checks, evaluated once all records of a step are in.
    fn step_boundary(&mut self) {
        if !self.dirty {
            return;
        }
        self.dirty = false;
        let line = self.step_line;
        let active: BTreeMap<u32, Ipv4Addr> =
            self.sessions.iter().map(|(k, (_, ip))| (*k, *ip)).collect();
        if active != self.rules {
            self.flag(
                SMF_UPF_AGREEMENT,
                vec![line],
                format!("active sessions {active:?} but rules {:?}", self.rules),
            );
        }
        let unregistered: Vec<String> = self
            .sessions
            .iter()
            .filter(|(_, (supi, _))| {
                self.amf.get(supi.as_str()) != Some(&RegistrationState::Registered)
            })
            .map(|(id, (supi, _))| format!("session {id} of {supi}"))
            .collect();
        if !unregistered.is_empty() {
            self.flag(
                SESSION_REGISTRATION,
                vec![line],
                format!(
                    "{} held while the AMF does not list the UE as registered",
                    unregistered.join(", ")
                ),
            );
        }
        let mut ahead: Vec<&String> = self
            .ue
            .iter()
            .filter(|(supi, s)| {
                **s == UeRegState::Registered
                    && self.amf.get(supi.as_str()) != Some(&RegistrationState::Registered)
            })
            .map(|(supi, _)| supi)
            .collect();
        if !ahead.is_empty() {
            ahead.sort();
            let detail = format!("UE reports Registered before the AMF: {ahead:?}");
            self.flag(UE_STATE_LAG, vec![line], detail);
        }
    }

    fn settle(&mut self, line: usize, pkt: u64, fate: crate::upf::Fate, size: u32) {
        if !self.packet_size.contains_key(&pkt) {
            self.flag(
                CONSERVATION,
                vec![line],
                format!("packet {pkt} settled but never sent"),
            );
            return;
        }
        if !self.settled.insert(pkt) {
            self.flag(
                CONSERVATION,
                vec![line],
                format!("packet {pkt} settled twice"),
            );
            return;
        }
        self.derived.settle(fate, u64::from(size));
    }

    fn record(&mut self, line: usize, rec: &TraceRecord) {
        match &rec.event {
            TraceEvent::Header { links, .. } => {
                if line != 1 {
                    self.flag(
                        STRUCTURE,
                        vec![line],
                        "header after the first record".into(),
                    );
                }
                for l in links {
                    self.links.insert(l.name.clone(), l.clone());
                }
            }
            TraceEvent::LinkSend {
                link,
                dir,
                id,
                plane,
                pkt,
                tx_start_us,
                min_delay_us,
                ..
            } => {
                if *tx_start_us < rec.t_us {
                    self.flag(
                        ORDERING,
                        vec![line],
                        format!("{link} message {id} starts before it was sent"),
                    );
                }
                if let Some(info) = self.links.get(link) {
                    if let Some(ws) = &info.windows {
                        if !ws
                            .iter()
                            .any(|[o, c]| *o <= *tx_start_us && *tx_start_us < *c)
                        {
                            self.flag(
                                CONTACT_WINDOW,
                                vec![line],
                                format!("{link} message {id} transmitted at {tx_start_us} µs outside every contact window"),
                            );
                        }
                    }
                } else {
                    self.flag(STRUCTURE, vec![line], format!("unknown link {link:?}"));
                }
                if link == BACKHAUL_LINK {
                    self.check_backhaul(line, *plane, *pkt);
                }
                let key = (link.clone(), *id);
                if self.sent.contains_key(&key) {
                    self.flag(
                        ORDERING,
                        vec![line],
                        format!("{link} message {id} sent twice"),
                    );
                }
                self.sent.insert(
                    key,
                    SentMessage {
                        line,
                        dir: *dir,
                        tx_start: *tx_start_us,
                        min_delay: *min_delay_us,
                        delivered: false,
                    },
                );
            }
            TraceEvent::LinkDrop {
                link, plane, pkt, ..
            } => {
                if link == BACKHAUL_LINK {
                    self.check_backhaul(line, *plane, *pkt);
                }
            }
            TraceEvent::LinkDeliver { link, dir, id, .. } => {
                let key = (link.clone(), *id);
                let Some(sent) = self.sent.get_mut(&key) else {
                    self.flag(
                        ORDERING,
                        vec![line],
                        format!("{link} message {id} delivered without a prior send"),
                    );
                    return;
                };
                let sent_line = sent.line;
                if sent.delivered {
                    self.flag(
                        ORDERING,
                        vec![sent_line, line],
                        format!("{link} message {id} delivered twice"),
                    );
                    return;
                }
                sent.delivered = true;
                let sent = *sent;
                if sent.dir != *dir {
                    self.flag(
                        ORDERING,
                        vec![sent_line, line],
                        format!("{link} message {id} changed direction"),
                    );
                }
                if rec.t_us < sent.tx_start + sent.min_delay {
                    self.flag(
                        PROPAGATION,
                        vec![sent_line, line],
                        format!(
                            "{link} message {id} delivered at {} µs, earliest possible {} µs",
                            rec.t_us,
                            sent.tx_start + sent.min_delay
                        ),
                    );
                }
                let reorder = self.links.get(link).is_some_and(|l| l.reorder_allowed);
                let last = *self
                    .last_delivered
                    .entry((link.clone(), *dir))
                    .or_insert(*id);
                if !reorder && *id < last {
                    self.flag(
                        FIFO,
                        vec![line],
                        format!("{link} {dir:?} message {id} delivered after message {last}"),
                    );
                }
                self.last_delivered
                    .insert((link.clone(), *dir), last.max(*id));
            }
            TraceEvent::UserPktSend {
                pkt,
                origin,
                direction,
                size_bytes,
                ..
            } => {
                if self
                    .packet_size
                    .insert(*pkt, u64::from(*size_bytes))
                    .is_some()
                {
                    self.flag(CONSERVATION, vec![line], format!("packet id {pkt} reused"));
                }
                self.origin.insert(*pkt, *origin);
                self.derived.admit(*direction, u64::from(*size_bytes));
            }
            TraceEvent::UpfClassify { pkt, target } => {
                self.classified.insert(*pkt, *target);
            }
            TraceEvent::UserPktDeliver {
                pkt,
                fate,
                size_bytes,
            }
            | TraceEvent::UserPktDrop {
                pkt,
                fate,
                size_bytes,
                ..
            } => self.settle(line, *pkt, *fate, *size_bytes),
            TraceEvent::Counters { counters } => self.check_counters(line, counters),
            TraceEvent::End { counters, .. } => {
                self.check_counters(line, counters);
                let unresolved = (self.packet_size.len() - self.settled.len()) as u64;
                if counters.in_flight.packets != unresolved {
                    self.flag(
                        CONSERVATION,
                        vec![line],
                        format!(
                            "{} packets in flight at end, trace leaves {unresolved} unresolved",
                            counters.in_flight.packets
                        ),
                    );
                }
            }
            TraceEvent::RuleInstall {
                session_id, ue_ip, ..
            } => {
                if self.rules.insert(*session_id, *ue_ip).is_some() {
                    self.flag(
                        SMF_UPF_AGREEMENT,
                        vec![line],
                        format!("rule {session_id} installed twice"),
                    );
                }
                self.dirty = true;
            }
            TraceEvent::RuleRemove { session_id, .. } => {
                if self.rules.remove(session_id).is_none() {
                    self.flag(
                        SMF_UPF_AGREEMENT,
                        vec![line],
                        format!("rule {session_id} removed but not installed"),
                    );
                }
                self.dirty = true;
            }
            TraceEvent::SessionState {
                session_id,
                supi,
                ue_ip,
                state,
                ..
            } => {
                match state {
                    SessionState::Active => {
                        self.sessions.insert(*session_id, (supi.clone(), *ue_ip));
                    }
                    SessionState::Released => {
                        self.sessions.remove(session_id);
                    }
                    SessionState::Activating => {}
                }
                self.dirty = true;
            }
            TraceEvent::AmfState { supi, state } => {
                self.amf.insert(supi.clone(), *state);
                self.dirty = true;
            }
            TraceEvent::UeState { supi, state } => {
                self.ue.insert(supi.clone(), *state);
                self.dirty = true;
            }
            TraceEvent::NasSend { .. }
            | TraceEvent::NasRecv { .. }
            | TraceEvent::Procedure { .. } => {}
        }
    }

    fn check_backhaul(&mut self, line: usize, plane: Plane, pkt: Option<u64>) {
        let allowed = match (plane, pkt) {
            (Plane::User, Some(p)) => {
                self.classified.get(&p) == Some(&DnTarget::Ground)
                    || self.origin.get(&p) == Some(&Origin::GroundDn)
            }
            _ => false,
        };
        if !allowed {
            self.flag(
                ONBOARD_ISOLATION,
                vec![line],
                format!("{plane:?} traffic {pkt:?} on the backhaul link was not bound for the ground network"),
            );
        }
    }

    fn check_counters(&mut self, line: usize, counters: &PacketCounters) {
        if !counters.is_conserved() {
            self.flag(
                CONSERVATION,
                vec![line],
                "admitted packets differ from delivered + dropped + in flight".into(),
            );
        }
        if *counters != self.derived {
            self.flag(
                COUNTER_AGREEMENT,
                vec![line],
                format!(
                    "recorded counters {counters:?} differ from the trace's own {:?}",
                    self.derived
                ),
            );
        }
    }
}

/// Checks every invariant; an empty result means the trace is healthy.
pub fn verify_trace(records: &[TraceRecord]) -> Vec<Violation> {
    let mut c = Checker::default();
    if !matches!(
        records.first().map(|r| &r.event),
        Some(TraceEvent::Header { .. })
    ) {
        c.flag(
            STRUCTURE,
            vec![1],
            "trace does not start with a header".into(),
        );
    }
    if !matches!(
        records.last().map(|r| &r.event),
        Some(TraceEvent::End { .. })
    ) {
        c.flag(
            STRUCTURE,
            vec![records.len()],
            "trace does not finish with an end record".into(),
        );
    }
    let mut prev: Option<(u64, u64)> = None;
    for (i, rec) in records.iter().enumerate() {
        let line = i + 1;
        if let Some((t, step)) = prev {
            if rec.t_us < t {
                c.flag(
                    ORDERING,
                    vec![line - 1, line],
                    format!("time goes back from {t} µs to {} µs", rec.t_us),
                );
            }
            if rec.step != step {
                c.step_boundary();
            }
        }
        c.step_line = line;
        prev = Some((rec.t_us, rec.step));
        c.record(line, rec);
    }
    c.step_boundary();
    c.violations
}

pub fn verify_trace_text(text: &str) -> Result<Vec<Violation>, MalformedTrace> {
    Ok(verify_trace(&parse_trace(text)?))
}
