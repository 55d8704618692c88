//! JSON Lines event trace.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::amf::RegistrationState;
use crate::ran::UeRegState;
use crate::satlink::{DropReason, LinkDirection};
use crate::smf::SessionState;
use crate::upf::{DnTarget, Fate, PacketCounters, TrafficDirection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Control,
    User,
}

/// Where a user packet entered the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Ue,
    GroundDn,
    OnboardDn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkInfo {
    pub name: String,
    pub one_way_delay_us: u64,
    pub reorder_allowed: bool,
    /// `[open, close)` pairs in µs; absent when always in contact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<Vec<[u64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TraceEvent {
    Header {
        scenario: String,
        seed: u64,
        duration_us: u64,
        links: Vec<LinkInfo>,
    },
    NasSend {
        src: String,
        dst: String,
        msg_type: String,
        size_bytes: usize,
        supi: String,
    },
    NasRecv {
        src: String,
        dst: String,
        msg_type: String,
        size_bytes: usize,
        supi: String,
    },
    LinkSend {
        link: String,
        dir: LinkDirection,
        id: u64,
        size_bytes: usize,
        plane: Plane,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pkt: Option<u64>,
        tx_start_us: u64,
        /// Serialization plus propagation.
        min_delay_us: u64,
    },
    LinkDeliver {
        link: String,
        dir: LinkDirection,
        id: u64,
        size_bytes: usize,
        plane: Plane,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pkt: Option<u64>,
    },
    LinkDrop {
        link: String,
        dir: LinkDirection,
        id: u64,
        size_bytes: usize,
        plane: Plane,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pkt: Option<u64>,
        reason: DropReason,
    },
    RuleInstall {
        session_id: u32,
        tunnel_id: u32,
        ue_ip: Ipv4Addr,
        dn_target: DnTarget,
    },
    RuleRemove {
        session_id: u32,
        tunnel_id: u32,
        ue_ip: Ipv4Addr,
    },
    SessionState {
        session_id: u32,
        supi: String,
        dn: String,
        ue_ip: Ipv4Addr,
        state: SessionState,
    },
    AmfState {
        supi: String,
        state: RegistrationState,
    },
    UeState {
        supi: String,
        state: UeRegState,
    },
    UserPktSend {
        pkt: u64,
        origin: Origin,
        direction: TrafficDirection,
        src_ip: Ipv4Addr,
        dst_ip: Ipv4Addr,
        size_bytes: u32,
    },
    UpfClassify {
        pkt: u64,
        target: DnTarget,
    },
    UserPktDeliver {
        pkt: u64,
        fate: Fate,
        size_bytes: u32,
    },
    UserPktDrop {
        pkt: u64,
        fate: Fate,
        reason: String,
        size_bytes: u32,
    },
    Counters {
        counters: PacketCounters,
    },
    Procedure {
        supi: String,
        name: String,
        start_us: u64,
        latency_us: u64,
        outcome: String,
    },
    End {
        events_processed: u64,
        counters: PacketCounters,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t_us: u64,
    /// Scheduler event that produced the record; 0 before the first event.
    pub step: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed trace at line {line}: {message}")]
pub struct MalformedTrace {
    pub line: usize,
    pub message: String,
}

/// In-memory trace; serialized record by record as it grows.
#[derive(Debug, Default, Clone)]
pub struct TraceLog {
    bytes: Vec<u8>,
    records: usize,
}

impl TraceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: &TraceRecord) {
        serde_json::to_writer(&mut self.bytes, record).expect("trace records serialize");
        self.bytes.push(b'\n');
        self.records += 1;
    }

    pub fn len(&self) -> usize {
        self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn hash(&self) -> u64 {
        trace_hash(&self.bytes)
    }
}

/// First eight bytes of the SHA-256 of the trace, big-endian.
pub fn trace_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_be_bytes(digest[..8].try_into().expect("eight bytes"))
}

pub fn format_hash(hash: u64) -> String {
    format!("{hash:016x}")
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, MalformedTrace> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| MalformedTrace {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
