//! User plane function: tunnel termination, uplink classification between
//! the onboard and ground data networks, downlink encapsulation.

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::Ipv4Cidr;

/// flags(1) msg type(1) length(2) tunnel id(4) sequence(4) spare(4).
pub const TUNNEL_HEADER_LEN: u32 = 16;

pub const N4_MESSAGE_LEN: usize = 14;
pub const N4_INSTALL: u8 = 0x01;
pub const N4_REMOVE: u8 = 0x02;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UpfError {
    #[error("no forwarding rule matches the packet")]
    NoSession,
    #[error("payload of {payload} bytes exceeds the {limit}-byte limit after encapsulation")]
    OversizePacket { payload: u32, limit: u32 },
    #[error("a rule for session {session_id} or address {ue_ip} already exists")]
    DuplicateRule { session_id: u32, ue_ip: Ipv4Addr },
    #[error("no rule for session {0}")]
    UnknownRule(u32),
    #[error("classifier prefix {0} configured twice")]
    DuplicatePrefix(Ipv4Cidr),
    #[error("malformed N4 message: {0}")]
    MalformedN4(&'static str),
    #[error("N4 message names data network index {0}, which is not configured")]
    UnknownDataNetwork(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DnTarget {
    Onboard,
    Ground,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardingRule {
    pub session_id: u32,
    pub tunnel_id: u32,
    pub ue_ip: Ipv4Addr,
    pub dn_target: DnTarget,
}

/// Rule-install/remove message from the SMF:
/// `op(1) | session_id(4) | tunnel_id(4) | ue_ip(4) | dn index(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct N4Message {
    pub op: u8,
    pub session_id: u32,
    pub tunnel_id: u32,
    pub ue_ip: Ipv4Addr,
    pub dn_index: u8,
}

impl N4Message {
    pub fn encode(&self) -> [u8; N4_MESSAGE_LEN] {
        let mut out = [0u8; N4_MESSAGE_LEN];
        out[0] = self.op;
        out[1..5].copy_from_slice(&self.session_id.to_be_bytes());
        out[5..9].copy_from_slice(&self.tunnel_id.to_be_bytes());
        out[9..13].copy_from_slice(&self.ue_ip.octets());
        out[13] = self.dn_index;
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, UpfError> {
        if buf.len() != N4_MESSAGE_LEN {
            return Err(UpfError::MalformedN4("wrong length"));
        }
        if buf[0] != N4_INSTALL && buf[0] != N4_REMOVE {
            return Err(UpfError::MalformedN4("unknown operation"));
        }
        Ok(N4Message {
            op: buf[0],
            session_id: u32::from_be_bytes(buf[1..5].try_into().unwrap()),
            tunnel_id: u32::from_be_bytes(buf[5..9].try_into().unwrap()),
            ue_ip: Ipv4Addr::new(buf[9], buf[10], buf[11], buf[12]),
            dn_index: buf[13],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierRule {
    pub dst_prefix: Ipv4Cidr,
    pub dn_target: DnTarget,
}

impl ClassifierRule {
    pub fn priority(&self) -> u8 {
        self.dst_prefix.prefix_len()
    }
}

/// Longest-prefix-match table. Always holds a `0.0.0.0/0 → Ground` entry
/// unless the configuration supplies its own catch-all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classifier {
    rules: Vec<ClassifierRule>,
}

impl Classifier {
    pub fn new(rules: impl IntoIterator<Item = ClassifierRule>) -> Result<Self, UpfError> {
        let mut sorted: Vec<ClassifierRule> = Vec::new();
        for rule in rules {
            if sorted.iter().any(|r| r.dst_prefix == rule.dst_prefix) {
                return Err(UpfError::DuplicatePrefix(rule.dst_prefix));
            }
            sorted.push(rule);
        }
        if !sorted.iter().any(|r| r.priority() == 0) {
            sorted.push(ClassifierRule {
                dst_prefix: Ipv4Cidr::new(Ipv4Addr::UNSPECIFIED, 0).unwrap(),
                dn_target: DnTarget::Ground,
            });
        }
        sorted.sort_by_key(|r| std::cmp::Reverse(r.priority()));
        Ok(Classifier { rules: sorted })
    }

    pub fn rules(&self) -> &[ClassifierRule] {
        &self.rules
    }

    pub fn classify(&self, dst: Ipv4Addr) -> DnTarget {
        self.rules
            .iter()
            .find(|r| r.dst_prefix.contains(dst))
            .map(|r| r.dn_target)
            .expect("catch-all rule present")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserPacket {
    pub id: u64,
    /// Set on uplink packets arriving through the N3 tunnel.
    pub tunnel_id: Option<u32>,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub payload_len: u32,
    pub enqueue_time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub packets: u64,
    pub bytes: u64,
}

impl Tally {
    fn add(&mut self, bytes: u64) {
        self.packets += 1;
        self.bytes += bytes;
    }

    fn sub(&mut self, bytes: u64) {
        self.packets -= 1;
        self.bytes -= bytes;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    DeliveredOnboard,
    DeliveredGround,
    DeliveredUe,
    DroppedNoRule,
    DroppedLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficDirection {
    Uplink,
    Downlink,
}

/// User-plane packet accounting. Every admitted packet is `in_flight`
/// until settled with exactly one [`Fate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PacketCounters {
    pub in_uplink: Tally,
    pub in_downlink: Tally,
    pub delivered_onboard: Tally,
    pub delivered_ground: Tally,
    pub delivered_ue: Tally,
    pub dropped_no_rule: Tally,
    pub dropped_link: Tally,
    pub in_flight: Tally,
}

impl PacketCounters {
    pub fn admit(&mut self, dir: TrafficDirection, bytes: u64) {
        match dir {
            TrafficDirection::Uplink => self.in_uplink.add(bytes),
            TrafficDirection::Downlink => self.in_downlink.add(bytes),
        }
        self.in_flight.add(bytes);
    }

    pub fn settle(&mut self, fate: Fate, bytes: u64) {
        match fate {
            Fate::DeliveredOnboard => self.delivered_onboard.add(bytes),
            Fate::DeliveredGround => self.delivered_ground.add(bytes),
            Fate::DeliveredUe => self.delivered_ue.add(bytes),
            Fate::DroppedNoRule => self.dropped_no_rule.add(bytes),
            Fate::DroppedLink => self.dropped_link.add(bytes),
        }
        self.in_flight.sub(bytes);
    }

    /// `in = delivered + dropped + in_flight`, for packets and for bytes.
    pub fn is_conserved(&self) -> bool {
        let lhs = |f: fn(&Tally) -> u64| f(&self.in_uplink) + f(&self.in_downlink);
        let rhs = |f: fn(&Tally) -> u64| {
            f(&self.delivered_onboard)
                + f(&self.delivered_ground)
                + f(&self.delivered_ue)
                + f(&self.dropped_no_rule)
                + f(&self.dropped_link)
                + f(&self.in_flight)
        };
        lhs(|t| t.packets) == rhs(|t| t.packets) && lhs(|t| t.bytes) == rhs(|t| t.bytes)
    }
}

#[derive(Debug, Clone)]
pub struct Upf {
    rules: BTreeMap<u32, ForwardingRule>,
    by_tunnel: HashMap<u32, u32>,
    by_ue_ip: HashMap<Ipv4Addr, u32>,
    classifier: Classifier,
    /// Data network targets indexed by the N4 dn index.
    dn_targets: Vec<DnTarget>,
    mtu: u32,
    counters: PacketCounters,
}

impl Upf {
    pub fn new(classifier: Classifier, dn_targets: Vec<DnTarget>, mtu: u32) -> Self {
        Upf {
            rules: BTreeMap::new(),
            by_tunnel: HashMap::new(),
            by_ue_ip: HashMap::new(),
            classifier,
            dn_targets,
            mtu,
            counters: PacketCounters::default(),
        }
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn rules(&self) -> impl Iterator<Item = &ForwardingRule> {
        self.rules.values()
    }

    pub fn rule(&self, session_id: u32) -> Option<&ForwardingRule> {
        self.rules.get(&session_id)
    }

    pub fn counters(&self) -> &PacketCounters {
        &self.counters
    }

    pub fn counters_mut(&mut self) -> &mut PacketCounters {
        &mut self.counters
    }

    /// Largest payload that fits the link MTU once tunnelled.
    pub fn max_payload(&self) -> u32 {
        self.mtu.saturating_sub(TUNNEL_HEADER_LEN)
    }

    pub fn install_rule(&mut self, rule: ForwardingRule) -> Result<(), UpfError> {
        if self.rules.contains_key(&rule.session_id)
            || self.by_ue_ip.contains_key(&rule.ue_ip)
            || self.by_tunnel.contains_key(&rule.tunnel_id)
        {
            return Err(UpfError::DuplicateRule {
                session_id: rule.session_id,
                ue_ip: rule.ue_ip,
            });
        }
        self.by_tunnel.insert(rule.tunnel_id, rule.session_id);
        self.by_ue_ip.insert(rule.ue_ip, rule.session_id);
        self.rules.insert(rule.session_id, rule);
        Ok(())
    }

    pub fn remove_rule(&mut self, session_id: u32) -> Result<ForwardingRule, UpfError> {
        let rule = self
            .rules
            .remove(&session_id)
            .ok_or(UpfError::UnknownRule(session_id))?;
        self.by_tunnel.remove(&rule.tunnel_id);
        self.by_ue_ip.remove(&rule.ue_ip);
        Ok(rule)
    }

    /// Applies an encoded N4 message; returns the rule installed or removed.
    pub fn apply_n4(&mut self, bytes: &[u8]) -> Result<ForwardingRule, UpfError> {
        let msg = N4Message::decode(bytes)?;
        match msg.op {
            N4_INSTALL => {
                let dn_target = *self
                    .dn_targets
                    .get(msg.dn_index as usize)
                    .ok_or(UpfError::UnknownDataNetwork(msg.dn_index))?;
                let rule = ForwardingRule {
                    session_id: msg.session_id,
                    tunnel_id: msg.tunnel_id,
                    ue_ip: msg.ue_ip,
                    dn_target,
                };
                self.install_rule(rule).map(|_| rule)
            }
            _ => self.remove_rule(msg.session_id),
        }
    }

    /// Looks up the tunnel and classifies by destination. An unknown tunnel
    /// settles the packet as `dropped_no_rule`.
    pub fn classify_uplink(&mut self, pkt: &UserPacket) -> Result<DnTarget, UpfError> {
        let known = pkt
            .tunnel_id
            .is_some_and(|t| self.by_tunnel.contains_key(&t));
        if !known {
            self.counters
                .settle(Fate::DroppedNoRule, u64::from(pkt.payload_len));
            return Err(UpfError::NoSession);
        }
        Ok(self.classifier.classify(pkt.dst_ip))
    }

    /// Returns `(tunnel_id, bytes on the wire)` for a packet towards a UE.
    pub fn forward_downlink(&mut self, pkt: &UserPacket) -> Result<(u32, u32), UpfError> {
        let Some(session_id) = self.by_ue_ip.get(&pkt.dst_ip) else {
            self.counters
                .settle(Fate::DroppedNoRule, u64::from(pkt.payload_len));
            return Err(UpfError::NoSession);
        };
        if pkt.payload_len > self.max_payload() {
            self.counters
                .settle(Fate::DroppedLink, u64::from(pkt.payload_len));
            return Err(UpfError::OversizePacket {
                payload: pkt.payload_len,
                limit: self.max_payload(),
            });
        }
        let tunnel_id = self.rules[session_id].tunnel_id;
        Ok((tunnel_id, pkt.payload_len + TUNNEL_HEADER_LEN))
    }
}
