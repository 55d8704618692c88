//! Session management: UE address pool, PDU session table, and N4 rule
//! programming of the UPF.

use std::collections::{BTreeMap, HashSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nas::{cause, Supi};
use crate::net::Ipv4Cidr;
use crate::upf::{DnTarget, ForwardingRule, N4Message, Upf, UpfError, N4_INSTALL, N4_REMOVE};

pub const DEFAULT_POOL: &str = "10.45.0.0/16";
/// Offset of the first issued address; `.0` is the network, `.1` the gateway.
pub const FIRST_HOST_OFFSET: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmfError {
    #[error("data network {0:?} is not configured")]
    UnknownDataNetwork(String),
    #[error("address pool exhausted")]
    PoolExhausted,
    #[error("no active session {0}")]
    UnknownSession(u32),
    #[error("UPF refused the rule: {0}")]
    Upf(#[from] UpfError),
}

impl SmfError {
    /// Cause value reported to the UE in a session reject.
    pub fn cause(&self) -> u8 {
        match self {
            SmfError::UnknownDataNetwork(_) => cause::UNKNOWN_DATA_NETWORK,
            SmfError::PoolExhausted => cause::POOL_EXHAUSTED,
            _ => cause::PROTOCOL_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataNetwork {
    pub name: String,
    pub target: DnTarget,
    /// Destination prefixes the UPF classifier sends to this network.
    #[serde(default)]
    pub prefixes: Vec<Ipv4Cidr>,
}

impl DataNetwork {
    /// `internet` on the ground plus `onboard` services on 10.64.0.0/16.
    pub fn defaults() -> Vec<DataNetwork> {
        vec![
            DataNetwork {
                name: "internet".into(),
                target: DnTarget::Ground,
                prefixes: vec!["0.0.0.0/0".parse().unwrap()],
            },
            DataNetwork {
                name: "onboard".into(),
                target: DnTarget::Onboard,
                prefixes: vec!["10.64.0.0/16".parse().unwrap()],
            },
        ]
    }
}

/// Sequential allocation from `.2` upward with LIFO reuse of returned
/// addresses. Network, gateway (`.1`) and broadcast are never issued.
#[derive(Debug, Clone)]
pub struct IpPool {
    cidr: Ipv4Cidr,
    next_offset: u64,
    free_list: Vec<Ipv4Addr>,
    allocated: HashSet<Ipv4Addr>,
}

impl IpPool {
    pub fn new(cidr: Ipv4Cidr) -> Self {
        IpPool {
            cidr,
            next_offset: FIRST_HOST_OFFSET,
            free_list: Vec::new(),
            allocated: HashSet::new(),
        }
    }

    pub fn cidr(&self) -> Ipv4Cidr {
        self.cidr
    }

    /// Number of issuable addresses.
    pub fn capacity(&self) -> u64 {
        self.cidr.size().saturating_sub(FIRST_HOST_OFFSET + 1)
    }

    pub fn allocated(&self) -> usize {
        self.allocated.len()
    }

    pub fn free_list(&self) -> &[Ipv4Addr] {
        &self.free_list
    }

    pub fn never_issued(&self) -> u64 {
        (self.capacity() + FIRST_HOST_OFFSET).saturating_sub(self.next_offset)
    }

    pub fn allocate(&mut self) -> Result<Ipv4Addr, SmfError> {
        let addr = match self.free_list.pop() {
            Some(addr) => addr,
            None => {
                if self.never_issued() == 0 {
                    return Err(SmfError::PoolExhausted);
                }
                let addr = self
                    .cidr
                    .nth(self.next_offset)
                    .expect("offset inside prefix");
                self.next_offset += 1;
                addr
            }
        };
        self.allocated.insert(addr);
        Ok(addr)
    }

    /// Returns an address to the pool. Addresses not currently allocated
    /// are ignored.
    pub fn release(&mut self, addr: Ipv4Addr) {
        if self.allocated.remove(&addr) {
            self.free_list.push(addr);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Activating,
    Active,
    Released,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PduSession {
    pub session_id: u32,
    pub supi: Supi,
    pub dn_name: String,
    pub ue_ip: Ipv4Addr,
    pub tunnel_id: u32,
    pub qos_class: u8,
    pub state: SessionState,
}

/// Parameters carried back to the UE in the establishment accept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionAccept {
    pub session_id: u32,
    pub ue_ip: Ipv4Addr,
    pub qos_class: u8,
    pub dn_name: String,
    pub tunnel_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EstablishOutcome {
    pub accept: SessionAccept,
    /// The N4 install sent to the UPF; `None` when an existing session was
    /// returned.
    pub installed: Option<(ForwardingRule, [u8; crate::upf::N4_MESSAGE_LEN])>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleasedSession {
    pub session: PduSession,
    pub removed: ForwardingRule,
    pub n4: [u8; crate::upf::N4_MESSAGE_LEN],
}

#[derive(Debug, Clone)]
pub struct Smf {
    pool: IpPool,
    data_networks: Vec<DataNetwork>,
    sessions: BTreeMap<u32, PduSession>,
    next_session_id: u32,
    next_tunnel_id: u32,
}

impl Smf {
    pub fn new(pool: Ipv4Cidr, data_networks: Vec<DataNetwork>) -> Self {
        Smf {
            pool: IpPool::new(pool),
            data_networks,
            sessions: BTreeMap::new(),
            next_session_id: 1,
            next_tunnel_id: 1,
        }
    }

    pub fn pool(&self) -> &IpPool {
        &self.pool
    }

    pub fn data_networks(&self) -> &[DataNetwork] {
        &self.data_networks
    }

    pub fn sessions(&self) -> impl Iterator<Item = &PduSession> {
        self.sessions.values()
    }

    pub fn session(&self, session_id: u32) -> Option<&PduSession> {
        self.sessions.get(&session_id)
    }

    pub fn active_count(&self) -> usize {
        self.sessions
            .values()
            .filter(|s| s.state == SessionState::Active)
            .count()
    }

    pub fn establish_session(
        &mut self,
        supi: &Supi,
        dn_name: &str,
        qos_class: u8,
        upf: &mut Upf,
    ) -> Result<EstablishOutcome, SmfError> {
        let dn_index = self
            .data_networks
            .iter()
            .position(|d| d.name == dn_name)
            .ok_or_else(|| SmfError::UnknownDataNetwork(dn_name.to_string()))?;

        if let Some(existing) = self
            .sessions
            .values()
            .find(|s| &s.supi == supi && s.dn_name == dn_name && s.state == SessionState::Active)
        {
            return Ok(EstablishOutcome {
                accept: accept_of(existing),
                installed: None,
            });
        }

        let ue_ip = self.pool.allocate()?;
        let session_id = self.next_session_id;
        let tunnel_id = self.next_tunnel_id;
        self.next_session_id += 1;
        self.next_tunnel_id += 1;

        let mut session = PduSession {
            session_id,
            supi: supi.clone(),
            dn_name: dn_name.to_string(),
            ue_ip,
            tunnel_id,
            qos_class,
            state: SessionState::Activating,
        };
        let n4 = N4Message {
            op: N4_INSTALL,
            session_id,
            tunnel_id,
            ue_ip,
            dn_index: dn_index as u8,
        }
        .encode();
        let rule = match upf.apply_n4(&n4) {
            Ok(rule) => rule,
            Err(e) => {
                self.pool.release(ue_ip);
                return Err(e.into());
            }
        };
        session.state = SessionState::Active;
        let accept = accept_of(&session);
        self.sessions.insert(session_id, session);
        Ok(EstablishOutcome {
            accept,
            installed: Some((rule, n4)),
        })
    }

    pub fn release_session(
        &mut self,
        session_id: u32,
        upf: &mut Upf,
    ) -> Result<ReleasedSession, SmfError> {
        let mut session = self
            .sessions
            .remove(&session_id)
            .filter(|s| s.state == SessionState::Active)
            .ok_or(SmfError::UnknownSession(session_id))?;
        let dn_index = self
            .data_networks
            .iter()
            .position(|d| d.name == session.dn_name)
            .unwrap_or(0);
        let n4 = N4Message {
            op: N4_REMOVE,
            session_id,
            tunnel_id: session.tunnel_id,
            ue_ip: session.ue_ip,
            dn_index: dn_index as u8,
        }
        .encode();
        let removed = upf.apply_n4(&n4)?;
        self.pool.release(session.ue_ip);
        session.state = SessionState::Released;
        Ok(ReleasedSession {
            session,
            removed,
            n4,
        })
    }

    /// Releases every active session of `supi`, in session-id order.
    pub fn release_all(&mut self, supi: &Supi, upf: &mut Upf) -> Vec<ReleasedSession> {
        let ids: Vec<u32> = self
            .sessions
            .values()
            .filter(|s| &s.supi == supi)
            .map(|s| s.session_id)
            .collect();
        ids.into_iter()
            .filter_map(|id| self.release_session(id, upf).ok())
            .collect()
    }
}

fn accept_of(s: &PduSession) -> SessionAccept {
    SessionAccept {
        session_id: s.session_id,
        ue_ip: s.ue_ip,
        qos_class: s.qos_class,
        dn_name: s.dn_name.clone(),
        tunnel_id: s.tunnel_id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::upf::{Classifier, ClassifierRule};

    fn supi(n: u64) -> Supi {
        Supi::new("001010000000000").unwrap().offset(n)
    }

    fn setup(pool: &str) -> (Smf, Upf) {
        let dns = DataNetwork::defaults();
        let classifier = Classifier::new(dns.iter().flat_map(|d| {
            d.prefixes.iter().map(|p| ClassifierRule {
                dst_prefix: *p,
                dn_target: d.target,
            })
        }))
        .unwrap();
        let upf = Upf::new(classifier, dns.iter().map(|d| d.target).collect(), 1500);
        (Smf::new(pool.parse().unwrap(), dns), upf)
    }

    /// Enumerates the issuable addresses of a prefix directly.
    fn usable_oracle(cidr: &str) -> Vec<Ipv4Addr> {
        let c: Ipv4Cidr = cidr.parse().unwrap();
        let base = u32::from(c.network()) as u64;
        let last = base + c.size() - 1;
        (base..=last)
            .filter(|a| *a != base && *a != base + 1 && *a != last)
            .map(|a| Ipv4Addr::from(a as u32))
            .collect()
    }

    #[test]
    fn first_session_gets_dot_two() {
        let (mut smf, mut upf) = setup(DEFAULT_POOL);
        let out = smf
            .establish_session(&supi(1), "internet", 9, &mut upf)
            .unwrap();
        assert_eq!(out.accept.ue_ip, Ipv4Addr::new(10, 45, 0, 2));
        assert_eq!(out.accept.ue_ip, usable_oracle("10.45.0.0/16")[0]);
        assert_eq!(out.accept.session_id, 1);
        assert_eq!(smf.session(1).unwrap().state, SessionState::Active);
        assert_eq!(upf.rule(1).unwrap().ue_ip, out.accept.ue_ip);
    }

    #[test]
    fn unknown_dn_rejected() {
        let (mut smf, mut upf) = setup(DEFAULT_POOL);
        assert_eq!(
            smf.establish_session(&supi(1), "mars", 9, &mut upf),
            Err(SmfError::UnknownDataNetwork("mars".into()))
        );
    }

    #[test]
    fn slash_30_holds_one_session() {
        assert_eq!(usable_oracle("10.45.0.0/30").len(), 1);
        let (mut smf, mut upf) = setup("10.45.0.0/30");
        assert_eq!(smf.pool().capacity(), 1);
        smf.establish_session(&supi(1), "internet", 9, &mut upf)
            .unwrap();
        assert_eq!(
            smf.establish_session(&supi(2), "internet", 9, &mut upf),
            Err(SmfError::PoolExhausted)
        );
    }

    #[test]
    fn sequential_allocation_matches_enumeration() {
        let (mut smf, mut upf) = setup("10.45.0.0/28");
        let oracle = usable_oracle("10.45.0.0/28");
        let got: Vec<Ipv4Addr> = (0..oracle.len() as u64)
            .map(|i| {
                smf.establish_session(&supi(i), "internet", 9, &mut upf)
                    .unwrap()
                    .accept
                    .ue_ip
            })
            .collect();
        assert_eq!(got, oracle);
        assert!(smf
            .establish_session(&supi(99), "internet", 9, &mut upf)
            .is_err());
    }

    #[test]
    fn released_address_is_reused() {
        let (mut smf, mut upf) = setup(DEFAULT_POOL);
        let a = smf
            .establish_session(&supi(1), "internet", 9, &mut upf)
            .unwrap();
        smf.establish_session(&supi(2), "internet", 9, &mut upf)
            .unwrap();
        let released = smf.release_session(a.accept.session_id, &mut upf).unwrap();
        assert_eq!(released.session.state, SessionState::Released);
        assert!(upf.rule(a.accept.session_id).is_none());
        let again = smf
            .establish_session(&supi(1), "internet", 9, &mut upf)
            .unwrap();
        assert_eq!(again.accept.ue_ip, a.accept.ue_ip);
        assert_ne!(again.accept.session_id, a.accept.session_id);
    }

    #[test]
    fn double_release_is_unknown() {
        let (mut smf, mut upf) = setup(DEFAULT_POOL);
        let a = smf
            .establish_session(&supi(1), "internet", 9, &mut upf)
            .unwrap();
        smf.release_session(a.accept.session_id, &mut upf).unwrap();
        assert_eq!(
            smf.release_session(a.accept.session_id, &mut upf),
            Err(SmfError::UnknownSession(a.accept.session_id))
        );
    }

    #[test]
    fn duplicate_establish_is_idempotent() {
        let (mut smf, mut upf) = setup(DEFAULT_POOL);
        let a = smf
            .establish_session(&supi(1), "onboard", 5, &mut upf)
            .unwrap();
        let b = smf
            .establish_session(&supi(1), "onboard", 5, &mut upf)
            .unwrap();
        assert_eq!(a.accept, b.accept);
        assert!(b.installed.is_none());
        assert_eq!(smf.active_count(), 1);
        assert_eq!(upf.rules().count(), 1);
    }

    #[test]
    fn release_all_for_one_subscriber() {
        let (mut smf, mut upf) = setup(DEFAULT_POOL);
        smf.establish_session(&supi(1), "onboard", 5, &mut upf)
            .unwrap();
        smf.establish_session(&supi(1), "internet", 9, &mut upf)
            .unwrap();
        smf.establish_session(&supi(2), "internet", 9, &mut upf)
            .unwrap();
        let released = smf.release_all(&supi(1), &mut upf);
        assert_eq!(released.len(), 2);
        assert_eq!(smf.active_count(), 1);
        assert_eq!(upf.rules().count(), 1);
    }
}
