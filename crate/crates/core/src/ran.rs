//! Simulated UEs and gNBs, and the procedure drivers that run them against
//! the core.

use std::collections::{BTreeMap, VecDeque};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::scenario::{Action, TrafficSpec, UeSpec};
use crate::harness::world::World;
use crate::nas::{NasMessage, Supi};

/// The UE's own view of its registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UeRegState {
    Deregistered,
    /// Request sent, no challenge yet.
    Registering,
    /// Challenge answered, waiting for the accept.
    Authenticating,
    Registered,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UeSession {
    pub session_id: u32,
    pub dn: String,
    pub ue_ip: Ipv4Addr,
    pub tunnel_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcedureKind {
    Registration,
    SessionSetup,
    SessionRelease { session_id: u32 },
}

impl ProcedureKind {
    pub fn name(self) -> &'static str {
        match self {
            ProcedureKind::Registration => "registration",
            ProcedureKind::SessionSetup => "session_setup",
            ProcedureKind::SessionRelease { .. } => "session_release",
        }
    }
}

/// A procedure waiting for the core's answer.
#[derive(Debug, Clone)]
pub struct Pending {
    pub kind: ProcedureKind,
    pub started_at: u64,
    /// Start of the current request/response exchange.
    pub phase_started_at: u64,
    /// Last message sent, kept for retransmission.
    pub last: NasMessage,
    pub initial: bool,
    pub dn: Option<String>,
    pub retries: u32,
}

#[derive(Debug, Clone)]
pub struct SimUe {
    pub supi: Supi,
    pub key: Vec<u8>,
    pub gnb: u32,
    pub ue_ran_id: u32,
    pub state: UeRegState,
    pub pending: Option<Pending>,
    /// Procedures requested while another one was running.
    pub backlog: VecDeque<Action>,
    pub sessions: Vec<UeSession>,
    pub registration_started_at: Option<u64>,
    pub timer_generation: u64,
}

impl SimUe {
    pub fn new(spec: &UeSpec, ue_ran_id: u32) -> Self {
        SimUe {
            supi: spec.supi.clone(),
            key: spec.key.clone(),
            gnb: spec.gnb,
            ue_ran_id,
            state: UeRegState::Deregistered,
            pending: None,
            backlog: VecDeque::new(),
            sessions: Vec::new(),
            registration_started_at: None,
            timer_generation: 0,
        }
    }

    /// The session for `dn`, or the oldest session when `dn` is `None`.
    pub fn session_for(&self, dn: Option<&str>) -> Option<&UeSession> {
        match dn {
            Some(dn) => self.sessions.iter().find(|s| s.dn == dn),
            None => self.sessions.first(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimGnb {
    pub gnb_id: u32,
    attached: BTreeMap<u32, usize>,
    next_ran_id: u32,
}

impl SimGnb {
    pub fn new(gnb_id: u32) -> Self {
        SimGnb {
            gnb_id,
            attached: BTreeMap::new(),
            next_ran_id: 1,
        }
    }

    /// Attaches a UE and returns its RAN id, unique on this gNB.
    pub fn attach(&mut self, ue: usize) -> u32 {
        let id = self.next_ran_id;
        self.next_ran_id += 1;
        self.attached.insert(id, ue);
        id
    }

    pub fn ue_for(&self, ue_ran_id: u32) -> Option<usize> {
        self.attached.get(&ue_ran_id).copied()
    }

    pub fn attached(&self) -> usize {
        self.attached.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RanError {
    #[error("procedure timed out")]
    Timeout,
    #[error("rejected by the core")]
    Rejected,
    #[error("UE is not registered")]
    NotRegistered,
    #[error("UE is already registered or registering")]
    AlreadyRegistered,
    #[error("UE has no active session")]
    NoActiveSession,
    #[error("payload of {size} bytes exceeds {limit}")]
    Oversize { size: u32, limit: u32 },
    #[error("no UE with index {0}")]
    UnknownUe(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrafficSummary {
    pub sent: u32,
    pub delivered: u64,
    pub dropped: u64,
}

impl World {
    fn check_ue(&self, ue: usize) -> Result<(), RanError> {
        if ue < self.ues().len() {
            Ok(())
        } else {
            Err(RanError::UnknownUe(ue))
        }
    }

    /// Runs until a record named `name` appears for the UE; returns its
    /// latency and outcome.
    fn run_procedure(&mut self, ue: usize, name: &str) -> Result<(u64, String), RanError> {
        let supi = self.ues()[ue].supi.as_str().to_string();
        let mark = self.procedures().len();
        loop {
            if let Some(p) = self.procedures()[mark..]
                .iter()
                .find(|p| p.supi == supi && p.name == name)
            {
                return Ok((p.latency_us, p.outcome.clone()));
            }
            if !self.step() {
                return Err(RanError::Timeout);
            }
        }
    }

    /// Registers a deregistered UE and returns the latency from the first
    /// request to the core processing RegistrationComplete.
    pub fn run_registration(&mut self, ue: usize) -> Result<u64, RanError> {
        self.check_ue(ue)?;
        if self.ues()[ue].state != UeRegState::Deregistered || self.ues()[ue].pending.is_some() {
            return Err(RanError::AlreadyRegistered);
        }
        self.inject_action(ue, Action::Register);
        match self.run_procedure(ue, "registration")? {
            (latency, o) if o == "ok" => Ok(latency),
            (_, o) if o == "timeout" => Err(RanError::Timeout),
            _ => Err(RanError::Rejected),
        }
    }

    /// Establishes a session; returns the UE address and setup latency.
    pub fn run_session_setup(&mut self, ue: usize, dn: &str) -> Result<(Ipv4Addr, u64), RanError> {
        self.check_ue(ue)?;
        if self.ues()[ue].state != UeRegState::Registered {
            return Err(RanError::NotRegistered);
        }
        self.inject_action(
            ue,
            Action::Session {
                dn: dn.to_string(),
                qos: crate::amf::DEFAULT_QOS_CLASS,
            },
        );
        match self.run_procedure(ue, "session_setup")? {
            (latency, o) if o == "ok" => {
                let ip = self.ues()[ue]
                    .session_for(Some(dn))
                    .expect("accepted session recorded")
                    .ue_ip;
                Ok((ip, latency))
            }
            (_, o) if o == "timeout" => Err(RanError::Timeout),
            _ => Err(RanError::Rejected),
        }
    }

    /// Sends `count` uplink packets on the UE's first session and runs
    /// until every one of them has been delivered or dropped.
    pub fn generate_traffic(
        &mut self,
        ue: usize,
        dst: Ipv4Addr,
        count: u32,
        size: u32,
        interval_us: u64,
    ) -> Result<TrafficSummary, RanError> {
        self.check_ue(ue)?;
        if self.ues()[ue].sessions.is_empty() {
            return Err(RanError::NoActiveSession);
        }
        let limit = self.upf().max_payload();
        if size == 0 || size > limit {
            return Err(RanError::Oversize { size, limit });
        }
        let before = *self.upf().counters();
        self.inject_action(
            ue,
            Action::Traffic(TrafficSpec {
                dn: None,
                dst,
                count,
                size,
                interval_us,
                echo: false,
            }),
        );
        loop {
            let c = self.upf().counters();
            let sent = c.in_uplink.packets - before.in_uplink.packets;
            if sent == u64::from(count) && c.in_flight.packets == before.in_flight.packets {
                break;
            }
            if !self.step() {
                break;
            }
        }
        let c = self.upf().counters();
        let delivered = (c.delivered_onboard.packets + c.delivered_ground.packets)
            - (before.delivered_onboard.packets + before.delivered_ground.packets);
        let dropped = (c.dropped_link.packets + c.dropped_no_rule.packets)
            - (before.dropped_link.packets + before.dropped_no_rule.packets);
        Ok(TrafficSummary {
            sent: (c.in_uplink.packets - before.in_uplink.packets) as u32,
            delivered,
            dropped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gnb_assigns_unique_ran_ids() {
        let mut g = SimGnb::new(1);
        let ids: Vec<_> = (0..5).map(|ue| g.attach(ue)).collect();
        assert_eq!(ids, [1, 2, 3, 4, 5]);
        assert_eq!(g.ue_for(3), Some(2));
        assert_eq!(g.ue_for(9), None);
        assert_eq!(g.attached(), 5);
    }
}
