//! The simulated system: ground gNBs and UEs, the access link, the onboard
//! AMF/SMF/UPF, and the backhaul link to the ground data network.

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::amf::{
    challenge_bytes, compute_auth_response, Amf, AmfConfig, AmfOutput, RegistrationState,
    SmfRequest, SmfResponse,
};
use crate::nas::{self, cause, MessageType, NasMessage, Supi};
use crate::ngap::{NgapEnvelope, NgapProcedure};
use crate::ran::{Pending, ProcedureKind, SimGnb, SimUe, UeRegState, UeSession};
use crate::satlink::{ContactSchedule, LinkDirection, Outcome, SatLink};
use crate::smf::{SessionState, Smf};
use crate::upf::{
    Classifier, ClassifierRule, DnTarget, Fate, PacketCounters, TrafficDirection, Upf, UpfError,
    UserPacket, TUNNEL_HEADER_LEN,
};

use super::metrics::{to_csv, MetricsRecord};
use super::scenario::{Action, Scenario, TrafficSpec};
use super::trace::{format_hash, LinkInfo, Origin, Plane, TraceEvent, TraceLog, TraceRecord};

pub const ACCESS_LINK: &str = "access";
pub const BACKHAUL_LINK: &str = "backhaul";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LinkId {
    Access,
    Backhaul,
}

impl LinkId {
    fn name(self) -> &'static str {
        match self {
            LinkId::Access => ACCESS_LINK,
            LinkId::Backhaul => BACKHAUL_LINK,
        }
    }
}

#[derive(Debug, Clone)]
enum Cargo {
    Ngap(NgapEnvelope),
    User { pkt: UserPacket, echo: bool },
}

#[derive(Debug, Clone)]
enum Event {
    MetricsTick,
    Action {
        ue: usize,
        action: Action,
    },
    TrafficTick {
        ue: usize,
        spec: TrafficSpec,
        remaining: u32,
    },
    GnbUplink {
        ue: usize,
        msg: NasMessage,
        initial: bool,
    },
    LinkArrive {
        link: LinkId,
        dir: LinkDirection,
        id: u64,
        size: usize,
        cargo: Cargo,
    },
    AmfHandle(NgapEnvelope),
    GnbDownlink(NgapEnvelope),
    UeHandle {
        ue: usize,
        msg: NasMessage,
    },
    SmfHandle(SmfRequest),
    AmfTimer {
        supi: Supi,
        generation: u64,
    },
    UeTimer {
        ue: usize,
        generation: u64,
    },
    UpfUplink {
        pkt: UserPacket,
        echo: bool,
    },
    UpfDownlink(UserPacket),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcedureRecord {
    pub supi: String,
    pub name: String,
    pub start_us: u64,
    pub latency_us: u64,
    pub outcome: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub min_us: u64,
    pub max_us: u64,
    pub mean_us: f64,
}

impl LatencyStats {
    fn of(values: &[u64]) -> Option<Self> {
        let min_us = *values.iter().min()?;
        Some(LatencyStats {
            count: values.len(),
            min_us,
            max_us: *values.iter().max()?,
            mean_us: values.iter().sum::<u64>() as f64 / values.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub duration_us: u64,
    pub trace_hash: String,
    pub trace_records: usize,
    pub events_processed: u64,
    pub metrics_records: usize,
    pub counters: PacketCounters,
    /// Successful procedures, by name.
    pub latency: BTreeMap<String, LatencyStats>,
    /// Procedure outcomes, by name then outcome.
    pub outcomes: BTreeMap<String, BTreeMap<String, usize>>,
    pub procedures: Vec<ProcedureRecord>,
}

impl RunSummary {
    pub fn latency_of(&self, name: &str) -> Option<&LatencyStats> {
        self.latency.get(name)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: TraceLog,
    pub metrics: Vec<MetricsRecord>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn metrics_csv(&self) -> String {
        to_csv(&self.metrics)
    }

    /// Writes `trace.jsonl`, `metrics.csv` and `summary.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trace.jsonl"), self.trace.as_bytes())?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        let summary = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        std::fs::write(dir.join("summary.json"), summary + "\n")
    }
}

pub struct World {
    scenario: Scenario,
    now: u64,
    step: u64,
    sched: super::scheduler::Scheduler<Event>,
    amf: Amf,
    smf: Smf,
    upf: Upf,
    access: SatLink,
    backhaul: SatLink,
    gnbs: BTreeMap<u32, SimGnb>,
    ues: Vec<SimUe>,
    ue_by_supi: HashMap<Supi, usize>,
    ue_by_ip: HashMap<Ipv4Addr, usize>,
    trace: TraceLog,
    metrics: Vec<MetricsRecord>,
    procedures: Vec<ProcedureRecord>,
    ticks_done: u64,
    next_pkt: u64,
    bytes_up: u64,
    bytes_down: u64,
    real_time: Option<Instant>,
}

fn link_info(name: &str, spec: &super::scenario::LinkSpec) -> LinkInfo {
    LinkInfo {
        name: name.to_string(),
        one_way_delay_us: spec.profile.one_way_delay_us,
        reorder_allowed: spec.profile.reorder_allowed,
        windows: match &spec.schedule {
            ContactSchedule::AlwaysOpen => None,
            ContactSchedule::Windows(ws) => {
                Some(ws.iter().map(|w| [w.open_at, w.close_at]).collect())
            }
        },
    }
}

impl World {
    pub fn new(scenario: Scenario) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(scenario.seed);
        let amf_seed = master.next_u64();
        let access_seed = master.next_u64();
        let backhaul_seed = master.next_u64();

        let mut amf = Amf::new(
            AmfConfig {
                auth_pending_timeout_us: scenario.timers.auth_pending_us,
            },
            amf_seed,
        );
        let rules = scenario.data_networks.iter().flat_map(|dn| {
            dn.prefixes.iter().map(|p| ClassifierRule {
                dst_prefix: *p,
                dn_target: dn.target,
            })
        });
        let classifier = Classifier::new(rules).expect("prefixes validated as unique");
        let upf = Upf::new(
            classifier,
            scenario.data_networks.iter().map(|d| d.target).collect(),
            scenario.access.profile.mtu,
        );
        let smf = Smf::new(scenario.ip_pool, scenario.data_networks.clone());
        let link = |name: &str, spec: &super::scenario::LinkSpec, seed| {
            SatLink::new(
                name,
                spec.profile.clone(),
                spec.schedule.clone(),
                scenario.policy,
                scenario.queue_capacity,
                seed,
            )
            .expect("link validated with the scenario")
        };
        let access = link(ACCESS_LINK, &scenario.access, access_seed);
        let backhaul = link(BACKHAUL_LINK, &scenario.backhaul, backhaul_seed);

        let mut gnbs: BTreeMap<u32, SimGnb> = scenario
            .gnbs
            .iter()
            .map(|&id| (id, SimGnb::new(id)))
            .collect();
        let mut ues = Vec::with_capacity(scenario.ues.len());
        let mut ue_by_supi = HashMap::new();
        for (i, spec) in scenario.ues.iter().enumerate() {
            amf.provision(spec.supi.clone(), spec.key.clone());
            let ran_id = gnbs
                .get_mut(&spec.gnb)
                .expect("gNB validated with the scenario")
                .attach(i);
            ues.push(SimUe::new(spec, ran_id));
            ue_by_supi.insert(spec.supi.clone(), i);
        }

        let mut world = World {
            now: 0,
            step: 0,
            sched: super::scheduler::Scheduler::new(),
            amf,
            smf,
            upf,
            access,
            backhaul,
            gnbs,
            ues,
            ue_by_supi,
            ue_by_ip: HashMap::new(),
            trace: TraceLog::new(),
            metrics: Vec::new(),
            procedures: Vec::new(),
            ticks_done: 0,
            next_pkt: 0,
            bytes_up: 0,
            bytes_down: 0,
            real_time: None,
            scenario,
        };
        world.record(TraceEvent::Header {
            scenario: world.scenario.name.clone(),
            seed: world.scenario.seed,
            duration_us: world.scenario.duration_us,
            links: vec![
                link_info(ACCESS_LINK, &world.scenario.access),
                link_info(BACKHAUL_LINK, &world.scenario.backhaul),
            ],
        });
        world.sched.schedule(
            world.scenario.cadence_us.min(world.scenario.duration_us),
            Event::MetricsTick,
        );
        let actions: Vec<_> = world.scenario.timeline.clone();
        for entry in actions {
            for (i, &ue) in entry.ues.iter().enumerate() {
                let at = entry.at_us + entry.stagger_us * i as u64;
                world.sched.schedule(
                    at,
                    Event::Action {
                        ue,
                        action: entry.action.clone(),
                    },
                );
            }
        }
        world
    }

    /// Paces the event loop against the wall clock.
    pub fn set_real_time(&mut self, on: bool) {
        self.real_time = on.then(Instant::now);
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn amf(&self) -> &Amf {
        &self.amf
    }

    pub fn smf(&self) -> &Smf {
        &self.smf
    }

    pub fn upf(&self) -> &Upf {
        &self.upf
    }

    pub fn ues(&self) -> &[SimUe] {
        &self.ues
    }

    pub fn ue_index(&self, supi: &Supi) -> Option<usize> {
        self.ue_by_supi.get(supi).copied()
    }

    pub fn procedures(&self) -> &[ProcedureRecord] {
        &self.procedures
    }

    pub fn trace(&self) -> &TraceLog {
        &self.trace
    }

    pub fn events_processed(&self) -> u64 {
        self.step
    }

    /// Starts an action for a UE at the current instant.
    pub fn inject_action(&mut self, ue: usize, action: Action) {
        self.sched.schedule(self.now, Event::Action { ue, action });
    }

    /// Processes the next event. Returns `false` once the queue is empty or
    /// the next event lies beyond the scenario duration.
    pub fn step(&mut self) -> bool {
        match self.sched.peek_time() {
            Some(t) if t <= self.scenario.duration_us => {}
            _ => return false,
        }
        let (t, event) = self.sched.pop().expect("peeked");
        if let Some(start) = self.real_time {
            let due = start + Duration::from_micros(t);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        self.now = t;
        self.step += 1;
        self.handle(event);
        true
    }

    pub fn run(mut self) -> RunOutput {
        while self.step() {}
        self.finish()
    }

    fn finish(mut self) -> RunOutput {
        self.now = self.scenario.duration_us;
        let counters = *self.upf.counters();
        self.record(TraceEvent::End {
            events_processed: self.step,
            counters,
        });
        let mut grouped: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        let mut outcomes: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for p in &self.procedures {
            if p.outcome == "ok" {
                grouped
                    .entry(p.name.clone())
                    .or_default()
                    .push(p.latency_us);
            }
            *outcomes
                .entry(p.name.clone())
                .or_default()
                .entry(p.outcome.clone())
                .or_default() += 1;
        }
        let latency = grouped
            .into_iter()
            .filter_map(|(k, v)| LatencyStats::of(&v).map(|s| (k, s)))
            .collect();
        let summary = RunSummary {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            duration_us: self.scenario.duration_us,
            trace_hash: format_hash(self.trace.hash()),
            trace_records: self.trace.len(),
            events_processed: self.step,
            metrics_records: self.metrics.len(),
            counters,
            latency,
            outcomes,
            procedures: self.procedures,
        };
        RunOutput {
            trace: self.trace,
            metrics: self.metrics,
            summary,
        }
    }

    fn record(&mut self, event: TraceEvent) {
        self.trace.push(&TraceRecord {
            t_us: self.now,
            step: self.step,
            event,
        });
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::MetricsTick => self.on_metrics_tick(),
            Event::Action { ue, action } => self.on_action(ue, action),
            Event::TrafficTick {
                ue,
                spec,
                remaining,
            } => self.on_traffic_tick(ue, spec, remaining),
            Event::GnbUplink { ue, msg, initial } => self.on_gnb_uplink(ue, &msg, initial),
            Event::LinkArrive {
                link,
                dir,
                id,
                size,
                cargo,
            } => self.on_link_arrive(link, dir, id, size, cargo),
            Event::AmfHandle(env) => {
                if let Ok(out) = self.amf.handle_uplink(&env, self.now) {
                    self.process_amf_outputs(out);
                }
            }
            Event::GnbDownlink(env) => self.on_gnb_downlink(env),
            Event::UeHandle { ue, msg } => self.on_ue_message(ue, msg),
            Event::SmfHandle(req) => self.handle_smf(req),
            Event::AmfTimer { supi, generation } => {
                let out = self.amf.handle_timer(&supi, generation);
                self.process_amf_outputs(out);
            }
            Event::UeTimer { ue, generation } => self.on_ue_timer(ue, generation),
            Event::UpfUplink { pkt, echo } => self.on_upf_uplink(pkt, echo),
            Event::UpfDownlink(pkt) => self.upf_forward_downlink(pkt),
        }
    }

    fn on_metrics_tick(&mut self) {
        self.ticks_done += 1;
        let stats = self.amf.context_table_stats();
        let counters = *self.upf.counters();
        self.metrics.push(MetricsRecord {
            t_s: self.now as f64 / 1e6,
            events_processed: self.step,
            bytes_up: self.bytes_up,
            bytes_down: self.bytes_down,
            active_ues: stats.active_ues,
            registered_ues: stats.registered,
            active_sessions: self.smf.active_count() as u64,
            context_bytes_estimate: stats.bytes_estimate,
            counters,
        });
        if counters.in_uplink.packets + counters.in_downlink.packets > 0 {
            self.record(TraceEvent::Counters { counters });
        }
        if self.ticks_done < self.scenario.metrics_ticks() {
            let next =
                ((self.ticks_done + 1) * self.scenario.cadence_us).min(self.scenario.duration_us);
            self.sched.schedule(next, Event::MetricsTick);
        }
    }

    // ---- links -------------------------------------------------------

    fn transmit(&mut self, link_id: LinkId, dir: LinkDirection, size: usize, cargo: Cargo) {
        let link = match link_id {
            LinkId::Access => &mut self.access,
            LinkId::Backhaul => &mut self.backhaul,
        };
        let tx = link
            .transmit(size, dir, self.now)
            .expect("message sizes are validated against the MTU");
        let min_delay =
            link.profile().serialization_us(size, dir) + link.profile().one_way_delay_us;
        if link_id == LinkId::Access {
            match dir {
                LinkDirection::Up => self.bytes_up += size as u64,
                LinkDirection::Down => self.bytes_down += size as u64,
            }
        }
        let (plane, pkt) = match &cargo {
            Cargo::Ngap(_) => (Plane::Control, None),
            Cargo::User { pkt, .. } => (Plane::User, Some(pkt.id)),
        };
        match tx.outcome {
            Outcome::Scheduled {
                tx_start,
                deliver_at,
                ..
            } => {
                self.record(TraceEvent::LinkSend {
                    link: link_id.name().into(),
                    dir,
                    id: tx.id,
                    size_bytes: size,
                    plane,
                    pkt,
                    tx_start_us: tx_start,
                    min_delay_us: min_delay,
                });
                self.sched.schedule(
                    deliver_at,
                    Event::LinkArrive {
                        link: link_id,
                        dir,
                        id: tx.id,
                        size,
                        cargo,
                    },
                );
            }
            Outcome::Dropped(reason) => {
                self.record(TraceEvent::LinkDrop {
                    link: link_id.name().into(),
                    dir,
                    id: tx.id,
                    size_bytes: size,
                    plane,
                    pkt,
                    reason,
                });
                if let Cargo::User { pkt, .. } = cargo {
                    self.settle(&pkt, Fate::DroppedLink, Some("link"));
                }
            }
        }
    }

    fn on_link_arrive(
        &mut self,
        link: LinkId,
        dir: LinkDirection,
        id: u64,
        size: usize,
        cargo: Cargo,
    ) {
        let (plane, pkt) = match &cargo {
            Cargo::Ngap(_) => (Plane::Control, None),
            Cargo::User { pkt, .. } => (Plane::User, Some(pkt.id)),
        };
        self.record(TraceEvent::LinkDeliver {
            link: link.name().into(),
            dir,
            id,
            size_bytes: size,
            plane,
            pkt,
        });
        let proc_ = self.scenario.processing;
        match (link, dir, cargo) {
            (LinkId::Access, LinkDirection::Up, Cargo::Ngap(env)) => {
                if let Ok(msg) = nas::decode(&env.nas_payload) {
                    let supi = self.supi_on_ran(env.gnb_id, env.ue_ran_id);
                    self.record(TraceEvent::NasRecv {
                        src: "ue".into(),
                        dst: "amf".into(),
                        msg_type: msg.message_type().name().into(),
                        size_bytes: env.nas_payload.len(),
                        supi,
                    });
                }
                self.sched
                    .schedule(self.now + proc_.amf_us, Event::AmfHandle(env));
            }
            (LinkId::Access, LinkDirection::Down, Cargo::Ngap(env)) => {
                self.sched
                    .schedule(self.now + proc_.gnb_us, Event::GnbDownlink(env));
            }
            (LinkId::Access, LinkDirection::Up, Cargo::User { pkt, echo }) => {
                self.sched
                    .schedule(self.now + proc_.upf_us, Event::UpfUplink { pkt, echo });
            }
            (LinkId::Access, LinkDirection::Down, Cargo::User { pkt, .. }) => {
                self.settle(&pkt, Fate::DeliveredUe, None);
            }
            (LinkId::Backhaul, LinkDirection::Down, Cargo::User { pkt, echo }) => {
                self.settle(&pkt, Fate::DeliveredGround, None);
                if echo {
                    let reply = self.admit_reply(&pkt, Origin::GroundDn);
                    self.transmit(
                        LinkId::Backhaul,
                        LinkDirection::Up,
                        reply.payload_len as usize,
                        Cargo::User {
                            pkt: reply,
                            echo: false,
                        },
                    );
                }
            }
            (LinkId::Backhaul, LinkDirection::Up, Cargo::User { pkt, .. }) => {
                self.sched
                    .schedule(self.now + proc_.upf_us, Event::UpfDownlink(pkt));
            }
            (LinkId::Backhaul, _, Cargo::Ngap(_)) => {
                unreachable!("no signalling crosses the backhaul link")
            }
        }
    }

    fn supi_on_ran(&self, gnb_id: u32, ue_ran_id: u32) -> String {
        self.gnbs
            .get(&gnb_id)
            .and_then(|g| g.ue_for(ue_ran_id))
            .map(|i| self.ues[i].supi.as_str().to_string())
            .unwrap_or_default()
    }

    // ---- control plane -------------------------------------------------

    fn ue_send(&mut self, ue: usize, msg: NasMessage, initial: bool) {
        let size = msg.encoded_len();
        self.record(TraceEvent::NasSend {
            src: "ue".into(),
            dst: "amf".into(),
            msg_type: msg.message_type().name().into(),
            size_bytes: size,
            supi: self.ues[ue].supi.as_str().into(),
        });
        self.sched.schedule(
            self.now + self.scenario.processing.gnb_us,
            Event::GnbUplink { ue, msg, initial },
        );
    }

    fn on_gnb_uplink(&mut self, ue: usize, msg: &NasMessage, initial: bool) {
        let u = &self.ues[ue];
        let env = NgapEnvelope {
            procedure: if initial {
                NgapProcedure::InitialUeMessage
            } else {
                NgapProcedure::UplinkNasTransport
            },
            gnb_id: u.gnb,
            ue_ran_id: u.ue_ran_id,
            nas_payload: msg.encode().expect("UE messages fit the wire format"),
        };
        let size = env.encoded_len();
        self.transmit(LinkId::Access, LinkDirection::Up, size, Cargo::Ngap(env));
    }

    fn on_gnb_downlink(&mut self, env: NgapEnvelope) {
        let Some(ue) = self
            .gnbs
            .get(&env.gnb_id)
            .and_then(|g| g.ue_for(env.ue_ran_id))
        else {
            return;
        };
        let Ok(msg) = nas::decode(&env.nas_payload) else {
            return;
        };
        self.record(TraceEvent::NasRecv {
            src: "amf".into(),
            dst: "ue".into(),
            msg_type: msg.message_type().name().into(),
            size_bytes: env.nas_payload.len(),
            supi: self.ues[ue].supi.as_str().into(),
        });
        self.sched.schedule(
            self.now + self.scenario.processing.ue_us,
            Event::UeHandle { ue, msg },
        );
    }

    fn process_amf_outputs(&mut self, outputs: Vec<AmfOutput>) {
        for out in outputs {
            match out {
                AmfOutput::Downlink(env) => {
                    if let Ok(msg) = nas::decode(&env.nas_payload) {
                        let supi = self.supi_on_ran(env.gnb_id, env.ue_ran_id);
                        self.record(TraceEvent::NasSend {
                            src: "amf".into(),
                            dst: "ue".into(),
                            msg_type: msg.message_type().name().into(),
                            size_bytes: env.nas_payload.len(),
                            supi,
                        });
                    }
                    let size = env.encoded_len();
                    self.transmit(LinkId::Access, LinkDirection::Down, size, Cargo::Ngap(env));
                }
                AmfOutput::Smf(req @ SmfRequest::ReleaseAll { .. }) => self.handle_smf(req),
                AmfOutput::Smf(req) => {
                    self.sched.schedule(
                        self.now + self.scenario.processing.smf_us,
                        Event::SmfHandle(req),
                    );
                }
                AmfOutput::StartTimer {
                    supi,
                    generation,
                    expires_at,
                } => self
                    .sched
                    .schedule(expires_at, Event::AmfTimer { supi, generation }),
                AmfOutput::StateChange { supi, state } => self.record(TraceEvent::AmfState {
                    supi: supi.as_str().into(),
                    state,
                }),
                AmfOutput::RegistrationCompleted { supi } => {
                    if let Some(&ue) = self.ue_by_supi.get(&supi) {
                        if let Some(start) = self.ues[ue].registration_started_at.take() {
                            self.push_procedure(ue, "registration", start, "ok");
                        }
                    }
                }
                AmfOutput::Rejected { .. } => {}
            }
        }
    }

    fn handle_smf(&mut self, req: SmfRequest) {
        let mut responses = Vec::new();
        match req {
            SmfRequest::Establish {
                supi,
                dn_name,
                qos_class,
                ..
            } => {
                if !self.amf.is_registered(&supi) {
                    responses.push(SmfResponse::EstablishFailed {
                        supi,
                        dn_name,
                        cause: cause::NOT_REGISTERED,
                    });
                } else {
                    match self
                        .smf
                        .establish_session(&supi, &dn_name, qos_class, &mut self.upf)
                    {
                        Ok(outcome) => {
                            let a = &outcome.accept;
                            if let Some((rule, _)) = &outcome.installed {
                                self.record(TraceEvent::RuleInstall {
                                    session_id: rule.session_id,
                                    tunnel_id: rule.tunnel_id,
                                    ue_ip: rule.ue_ip,
                                    dn_target: rule.dn_target,
                                });
                                self.record(TraceEvent::SessionState {
                                    session_id: a.session_id,
                                    supi: supi.as_str().into(),
                                    dn: a.dn_name.clone(),
                                    ue_ip: a.ue_ip,
                                    state: SessionState::Active,
                                });
                            }
                            responses.push(SmfResponse::Established {
                                supi,
                                session_id: a.session_id,
                                ue_ip: a.ue_ip,
                                qos_class: a.qos_class,
                                dn_name: a.dn_name.clone(),
                            });
                        }
                        Err(e) => responses.push(SmfResponse::EstablishFailed {
                            supi,
                            dn_name,
                            cause: e.cause(),
                        }),
                    }
                }
            }
            SmfRequest::Release { supi, session_id } => {
                if let Ok(rel) = self.smf.release_session(session_id, &mut self.upf) {
                    self.record_release(&rel);
                }
                responses.push(SmfResponse::Released {
                    supi,
                    session_id,
                    notify_ue: true,
                });
            }
            SmfRequest::ReleaseAll { supi, .. } => {
                for rel in self.smf.release_all(&supi, &mut self.upf) {
                    self.record_release(&rel);
                    responses.push(SmfResponse::Released {
                        supi: supi.clone(),
                        session_id: rel.session.session_id,
                        notify_ue: false,
                    });
                }
            }
        }
        for resp in responses {
            let out = self.amf.handle_smf_response(resp);
            self.process_amf_outputs(out);
        }
    }

    fn record_release(&mut self, rel: &crate::smf::ReleasedSession) {
        self.record(TraceEvent::RuleRemove {
            session_id: rel.removed.session_id,
            tunnel_id: rel.removed.tunnel_id,
            ue_ip: rel.removed.ue_ip,
        });
        self.record(TraceEvent::SessionState {
            session_id: rel.session.session_id,
            supi: rel.session.supi.as_str().into(),
            dn: rel.session.dn_name.clone(),
            ue_ip: rel.session.ue_ip,
            state: SessionState::Released,
        });
    }

    // ---- UE behaviour --------------------------------------------------

    fn push_procedure(&mut self, ue: usize, name: &str, start: u64, outcome: &str) {
        let rec = ProcedureRecord {
            supi: self.ues[ue].supi.as_str().into(),
            name: name.into(),
            start_us: start,
            latency_us: self.now - start,
            outcome: outcome.into(),
        };
        self.record(TraceEvent::Procedure {
            supi: rec.supi.clone(),
            name: rec.name.clone(),
            start_us: rec.start_us,
            latency_us: rec.latency_us,
            outcome: rec.outcome.clone(),
        });
        self.procedures.push(rec);
    }

    fn set_ue_state(&mut self, ue: usize, state: UeRegState) {
        if self.ues[ue].state != state {
            self.ues[ue].state = state;
            self.record(TraceEvent::UeState {
                supi: self.ues[ue].supi.as_str().into(),
                state,
            });
        }
    }

    fn arm_ue_timer(&mut self, ue: usize) {
        let u = &mut self.ues[ue];
        u.timer_generation += 1;
        let t = &self.scenario.timers;
        let wait = if t.ue_retransmit_us > 0 {
            t.ue_retransmit_us
        } else {
            t.procedure_timeout_us
        };
        self.sched.schedule(
            self.now + wait,
            Event::UeTimer {
                ue,
                generation: u.timer_generation,
            },
        );
    }

    fn begin(
        &mut self,
        ue: usize,
        kind: ProcedureKind,
        msg: NasMessage,
        initial: bool,
        dn: Option<String>,
    ) {
        self.ues[ue].pending = Some(Pending {
            kind,
            started_at: self.now,
            phase_started_at: self.now,
            last: msg.clone(),
            initial,
            dn,
            retries: 0,
        });
        self.ue_send(ue, msg, initial);
        self.arm_ue_timer(ue);
    }

    /// Sends the next message of the running procedure.
    fn next_phase(&mut self, ue: usize, msg: NasMessage) {
        if let Some(p) = self.ues[ue].pending.as_mut() {
            p.phase_started_at = self.now;
            p.last = msg.clone();
            p.initial = false;
            p.retries = 0;
        }
        self.ue_send(ue, msg, false);
        self.arm_ue_timer(ue);
    }

    /// Ends the running procedure and starts the next queued action.
    fn conclude(&mut self, ue: usize, outcome: Option<&str>) {
        let Some(p) = self.ues[ue].pending.take() else {
            return;
        };
        self.ues[ue].timer_generation += 1;
        if let Some(outcome) = outcome {
            self.push_procedure(ue, p.kind.name(), p.started_at, outcome);
        }
        while self.ues[ue].pending.is_none() {
            let Some(next) = self.ues[ue].backlog.pop_front() else {
                break;
            };
            self.start_action(ue, next);
        }
    }

    fn on_action(&mut self, ue: usize, action: Action) {
        let procedural = !matches!(action, Action::Traffic(_));
        if procedural && self.ues[ue].pending.is_some() {
            self.ues[ue].backlog.push_back(action);
            return;
        }
        self.start_action(ue, action);
    }

    fn start_action(&mut self, ue: usize, action: Action) {
        let state = self.ues[ue].state;
        match action {
            Action::Register => {
                self.drop_ue_sessions(ue);
                self.set_ue_state(ue, UeRegState::Registering);
                self.ues[ue].registration_started_at = Some(self.now);
                let msg = NasMessage::registration_request(&self.ues[ue].supi);
                self.begin(ue, ProcedureKind::Registration, msg, true, None);
            }
            Action::Session { dn, qos } => {
                if state != UeRegState::Registered {
                    self.push_procedure(ue, "session_setup", self.now, "not_registered");
                    return;
                }
                let msg = NasMessage::session_establishment_request(&dn, qos)
                    .expect("data network names validated");
                self.begin(ue, ProcedureKind::SessionSetup, msg, false, Some(dn));
            }
            Action::Release { dn } => {
                let Some(s) = self.ues[ue].session_for(Some(&dn)).cloned() else {
                    self.push_procedure(ue, "session_release", self.now, "no_active_session");
                    return;
                };
                let msg = NasMessage::session_release_request(s.session_id);
                self.begin(
                    ue,
                    ProcedureKind::SessionRelease {
                        session_id: s.session_id,
                    },
                    msg,
                    false,
                    Some(dn),
                );
            }
            Action::Deregister => {
                if state == UeRegState::Deregistered {
                    self.push_procedure(ue, "deregistration", self.now, "not_registered");
                    return;
                }
                self.set_ue_state(ue, UeRegState::Deregistered);
                self.drop_ue_sessions(ue);
                self.ues[ue].registration_started_at = None;
                let msg = NasMessage::deregistration_request(&self.ues[ue].supi);
                self.ue_send(ue, msg, false);
                self.push_procedure(ue, "deregistration", self.now, "ok");
            }
            Action::Traffic(spec) => {
                if self.ues[ue].session_for(spec.dn.as_deref()).is_none() {
                    self.push_procedure(ue, "traffic", self.now, "no_active_session");
                    return;
                }
                let remaining = spec.count;
                self.sched.schedule(
                    self.now,
                    Event::TrafficTick {
                        ue,
                        spec,
                        remaining,
                    },
                );
            }
        }
    }

    fn drop_ue_sessions(&mut self, ue: usize) {
        for s in std::mem::take(&mut self.ues[ue].sessions) {
            if self.ue_by_ip.get(&s.ue_ip) == Some(&ue) {
                self.ue_by_ip.remove(&s.ue_ip);
            }
        }
    }

    fn on_ue_timer(&mut self, ue: usize, generation: u64) {
        if self.ues[ue].timer_generation != generation {
            return;
        }
        let t = self.scenario.timers;
        let Some(p) = self.ues[ue].pending.as_mut() else {
            return;
        };
        if t.ue_retransmit_us > 0 && p.retries < t.ue_max_retries {
            p.retries += 1;
            let (msg, initial) = (p.last.clone(), p.initial);
            self.ue_send(ue, msg, initial);
            self.arm_ue_timer(ue);
            return;
        }
        if p.kind == ProcedureKind::Registration {
            self.set_ue_state(ue, UeRegState::Deregistered);
            self.ues[ue].registration_started_at = None;
        }
        self.conclude(ue, Some("timeout"));
    }

    fn pending_kind(&self, ue: usize) -> Option<ProcedureKind> {
        self.ues[ue].pending.as_ref().map(|p| p.kind)
    }

    fn exchange_done(&mut self, ue: usize, name: &str) {
        if let Some(start) = self.ues[ue].pending.as_ref().map(|p| p.phase_started_at) {
            self.push_procedure(ue, name, start, "ok");
        }
    }

    fn on_ue_message(&mut self, ue: usize, msg: NasMessage) {
        let kind = self.pending_kind(ue);
        let state = self.ues[ue].state;
        match msg.message_type() {
            MessageType::AuthenticationRequest => {
                if kind != Some(ProcedureKind::Registration)
                    || !matches!(state, UeRegState::Registering | UeRegState::Authenticating)
                {
                    return;
                }
                let (Some(nonce), Some(seq)) = (msg.nonce(), msg.auth_sequence()) else {
                    return;
                };
                if state == UeRegState::Registering {
                    self.exchange_done(ue, "auth_challenge");
                    self.set_ue_state(ue, UeRegState::Authenticating);
                }
                let digest =
                    compute_auth_response(&self.ues[ue].key, &challenge_bytes(&nonce, seq));
                self.next_phase(ue, NasMessage::authentication_response(digest));
            }
            MessageType::RegistrationAccept => {
                if state != UeRegState::Authenticating || kind != Some(ProcedureKind::Registration)
                {
                    return;
                }
                self.exchange_done(ue, "auth_accept");
                self.set_ue_state(ue, UeRegState::Registered);
                self.ue_send(ue, NasMessage::registration_complete(), false);
                self.conclude(ue, None);
            }
            MessageType::RegistrationReject => {
                if kind != Some(ProcedureKind::Registration) {
                    return;
                }
                self.set_ue_state(ue, UeRegState::Deregistered);
                self.ues[ue].registration_started_at = None;
                self.conclude(ue, Some("rejected"));
            }
            MessageType::PduSessionEstablishmentAccept => {
                if kind != Some(ProcedureKind::SessionSetup) {
                    return;
                }
                let dn = msg.dn_name().map(str::to_string);
                let pending_dn = self.ues[ue].pending.as_ref().and_then(|p| p.dn.clone());
                if dn.is_some() && dn != pending_dn {
                    return;
                }
                let (Some(session_id), Some(ue_ip)) = (msg.session_id(), msg.ue_ip()) else {
                    return;
                };
                let Some(tunnel_id) = self.smf.session(session_id).map(|s| s.tunnel_id) else {
                    return;
                };
                let u = &mut self.ues[ue];
                if !u.sessions.iter().any(|s| s.session_id == session_id) {
                    u.sessions.push(UeSession {
                        session_id,
                        dn: pending_dn.unwrap_or_default(),
                        ue_ip,
                        tunnel_id,
                    });
                }
                self.ue_by_ip.insert(ue_ip, ue);
                self.conclude(ue, Some("ok"));
            }
            MessageType::PduSessionEstablishmentReject => {
                if kind == Some(ProcedureKind::SessionSetup) {
                    self.conclude(ue, Some("rejected"));
                }
            }
            MessageType::PduSessionReleaseComplete => {
                let Some(ProcedureKind::SessionRelease { session_id }) = kind else {
                    return;
                };
                if msg.session_id() != Some(session_id) {
                    return;
                }
                let u = &mut self.ues[ue];
                if let Some(i) = u.sessions.iter().position(|s| s.session_id == session_id) {
                    let s = u.sessions.remove(i);
                    if self.ue_by_ip.get(&s.ue_ip) == Some(&ue) {
                        self.ue_by_ip.remove(&s.ue_ip);
                    }
                }
                self.conclude(ue, Some("ok"));
            }
            _ => {}
        }
    }

    // ---- user plane ----------------------------------------------------

    fn next_packet_id(&mut self) -> u64 {
        let id = self.next_pkt;
        self.next_pkt += 1;
        id
    }

    fn settle(&mut self, pkt: &UserPacket, fate: Fate, drop_reason: Option<&str>) {
        self.upf
            .counters_mut()
            .settle(fate, u64::from(pkt.payload_len));
        self.record_fate(pkt, fate, drop_reason);
    }

    fn record_fate(&mut self, pkt: &UserPacket, fate: Fate, drop_reason: Option<&str>) {
        let event = match drop_reason {
            None => TraceEvent::UserPktDeliver {
                pkt: pkt.id,
                fate,
                size_bytes: pkt.payload_len,
            },
            Some(reason) => TraceEvent::UserPktDrop {
                pkt: pkt.id,
                fate,
                reason: reason.into(),
                size_bytes: pkt.payload_len,
            },
        };
        self.record(event);
    }

    fn admit(&mut self, pkt: &UserPacket, origin: Origin, direction: TrafficDirection) {
        self.upf
            .counters_mut()
            .admit(direction, u64::from(pkt.payload_len));
        self.record(TraceEvent::UserPktSend {
            pkt: pkt.id,
            origin,
            direction,
            src_ip: pkt.src_ip,
            dst_ip: pkt.dst_ip,
            size_bytes: pkt.payload_len,
        });
    }

    fn admit_reply(&mut self, to: &UserPacket, origin: Origin) -> UserPacket {
        let reply = UserPacket {
            id: self.next_packet_id(),
            tunnel_id: None,
            src_ip: to.dst_ip,
            dst_ip: to.src_ip,
            payload_len: to.payload_len,
            enqueue_time: self.now,
        };
        self.admit(&reply, origin, TrafficDirection::Downlink);
        reply
    }

    fn on_traffic_tick(&mut self, ue: usize, spec: TrafficSpec, remaining: u32) {
        let Some(session) = self.ues[ue].session_for(spec.dn.as_deref()).cloned() else {
            return;
        };
        let pkt = UserPacket {
            id: self.next_packet_id(),
            tunnel_id: Some(session.tunnel_id),
            src_ip: session.ue_ip,
            dst_ip: spec.dst,
            payload_len: spec.size,
            enqueue_time: self.now,
        };
        self.admit(&pkt, Origin::Ue, TrafficDirection::Uplink);
        let wire = (spec.size + TUNNEL_HEADER_LEN) as usize;
        let echo = spec.echo;
        if remaining > 1 {
            self.sched.schedule(
                self.now + spec.interval_us,
                Event::TrafficTick {
                    ue,
                    spec,
                    remaining: remaining - 1,
                },
            );
        }
        self.transmit(
            LinkId::Access,
            LinkDirection::Up,
            wire,
            Cargo::User { pkt, echo },
        );
    }

    fn on_upf_uplink(&mut self, pkt: UserPacket, echo: bool) {
        match self.upf.classify_uplink(&pkt) {
            Err(_) => self.record_fate(&pkt, Fate::DroppedNoRule, Some("no_rule")),
            Ok(target) => {
                self.record(TraceEvent::UpfClassify {
                    pkt: pkt.id,
                    target,
                });
                match target {
                    DnTarget::Onboard => {
                        self.settle(&pkt, Fate::DeliveredOnboard, None);
                        if echo {
                            let reply = self.admit_reply(&pkt, Origin::OnboardDn);
                            self.upf_forward_downlink(reply);
                        }
                    }
                    DnTarget::Ground => self.transmit(
                        LinkId::Backhaul,
                        LinkDirection::Down,
                        pkt.payload_len as usize,
                        Cargo::User { pkt, echo },
                    ),
                }
            }
        }
    }

    fn upf_forward_downlink(&mut self, pkt: UserPacket) {
        match self.upf.forward_downlink(&pkt) {
            Ok((tunnel_id, wire)) => {
                let pkt = UserPacket {
                    tunnel_id: Some(tunnel_id),
                    ..pkt
                };
                self.transmit(
                    LinkId::Access,
                    LinkDirection::Down,
                    wire as usize,
                    Cargo::User { pkt, echo: false },
                );
            }
            Err(UpfError::OversizePacket { .. }) => {
                self.record_fate(&pkt, Fate::DroppedLink, Some("oversize"))
            }
            Err(_) => self.record_fate(&pkt, Fate::DroppedNoRule, Some("no_rule")),
        }
    }

    /// AMF registration state as seen by the core, for tests and checks.
    pub fn amf_state(&self, supi: &Supi) -> RegistrationState {
        self.amf.state_of(supi)
    }
}

/// Runs a scenario to completion.
pub fn run_scenario(scenario: Scenario) -> RunOutput {
    World::new(scenario).run()
}
