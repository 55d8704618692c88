//! Scenario files: TOML input, validated into microsecond units.

use std::collections::{HashMap, HashSet};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::nas::Supi;
use crate::net::Ipv4Cidr;
use crate::satlink::{
    ContactSchedule, ContactWindow, LinkProfile, WindowPolicy, DEFAULT_QUEUE_CAPACITY,
};
use crate::smf::DataNetwork;
use crate::upf::TUNNEL_HEADER_LEN;

pub const DEFAULT_NF_PROCESSING_US: u64 = 500;
pub const DEFAULT_PROCEDURE_TIMEOUT_US: u64 = 10_000_000;
pub const DEFAULT_MAX_RETRIES: u32 = 3;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_cadence")]
    pub metrics_cadence_s: f64,
    #[serde(default)]
    pub contact_policy: WindowPolicy,
    #[serde(default = "default_queue_capacity")]
    pub queue_capacity: usize,
    #[serde(default = "default_pool")]
    pub ip_pool: Ipv4Cidr,
    #[serde(default)]
    pub processing: ProcessingConfig,
    #[serde(default)]
    pub timers: TimerConfig,
    pub links: LinksConfig,
    #[serde(default = "DataNetwork::defaults")]
    pub data_networks: Vec<DataNetwork>,
    #[serde(default = "default_gnbs")]
    pub gnbs: Vec<GnbConfig>,
    #[serde(default)]
    pub ues: Vec<UeGroupConfig>,
    #[serde(default)]
    pub timeline: Vec<TimelineEntry>,
}

fn default_cadence() -> f64 {
    1.0
}

fn default_queue_capacity() -> usize {
    DEFAULT_QUEUE_CAPACITY
}

fn default_pool() -> Ipv4Cidr {
    crate::smf::DEFAULT_POOL
        .parse()
        .expect("valid default pool")
}

fn default_gnbs() -> Vec<GnbConfig> {
    vec![GnbConfig { id: 1 }]
}

/// Per-node processing delay applied when a node handles a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessingConfig {
    pub amf_us: u64,
    pub smf_us: u64,
    pub upf_us: u64,
    pub gnb_us: u64,
    pub ue_us: u64,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        ProcessingConfig {
            amf_us: DEFAULT_NF_PROCESSING_US,
            smf_us: DEFAULT_NF_PROCESSING_US,
            upf_us: DEFAULT_NF_PROCESSING_US,
            gnb_us: 0,
            ue_us: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimerConfig {
    pub auth_pending_us: u64,
    pub procedure_timeout_us: u64,
    /// UE retransmission interval; 0 disables retransmission.
    pub ue_retransmit_us: u64,
    pub ue_max_retries: u32,
}

impl Default for TimerConfig {
    fn default() -> Self {
        TimerConfig {
            auth_pending_us: crate::amf::DEFAULT_AUTH_PENDING_TIMEOUT_US,
            procedure_timeout_us: DEFAULT_PROCEDURE_TIMEOUT_US,
            ue_retransmit_us: 0,
            ue_max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinksConfig {
    /// Ground gNBs to the satellite.
    pub access: LinkConfig,
    /// Satellite UPF to the ground data network; defaults to the access
    /// profile without contact windows.
    pub backhaul: Option<LinkConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub one_way_delay_us: u64,
    #[serde(default)]
    pub jitter_stddev_us: u64,
    #[serde(default)]
    pub loss_prob: f64,
    pub uplink_bps: u64,
    pub downlink_bps: u64,
    #[serde(default = "default_mtu")]
    pub mtu: u32,
    #[serde(default)]
    pub reorder_allowed: bool,
    /// `[open_s, close_s]` pairs; absent means always in contact.
    pub windows: Option<Vec<[f64; 2]>>,
}

fn default_mtu() -> u32 {
    1500
}

impl LinkConfig {
    fn profile(&self) -> LinkProfile {
        LinkProfile {
            one_way_delay_us: self.one_way_delay_us,
            jitter_stddev_us: self.jitter_stddev_us,
            loss_prob: self.loss_prob,
            uplink_bps: self.uplink_bps,
            downlink_bps: self.downlink_bps,
            mtu: self.mtu,
            reorder_allowed: self.reorder_allowed,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnbConfig {
    pub id: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeGroupConfig {
    /// First SUPI of the group; further UEs count upwards.
    pub supi: String,
    #[serde(default = "one")]
    pub count: u32,
    /// Preshared key, hex.
    pub key: String,
    #[serde(default = "first_gnb")]
    pub gnb: u32,
}

fn one() -> u32 {
    1
}

fn first_gnb() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Register,
    Session,
    Traffic,
    Release,
    Deregister,
}

/// One timeline line. Which optional fields are required depends on
/// `action`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineEntry {
    pub at_s: f64,
    /// A SUPI, or `*` for every UE.
    pub ue: String,
    pub action: ActionKind,
    #[serde(default)]
    pub stagger_us: u64,
    pub dn: Option<String>,
    pub qos: Option<u8>,
    pub dst: Option<Ipv4Addr>,
    pub count: Option<u32>,
    pub size: Option<u32>,
    pub interval_us: Option<u64>,
    #[serde(default)]
    pub echo: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub profile: LinkProfile,
    pub schedule: ContactSchedule,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UeSpec {
    pub supi: Supi,
    pub key: Vec<u8>,
    pub gnb: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficSpec {
    /// Session to send on; the UE's first active session when absent.
    pub dn: Option<String>,
    pub dst: Ipv4Addr,
    pub count: u32,
    pub size: u32,
    pub interval_us: u64,
    pub echo: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Register,
    Session { dn: String, qos: u8 },
    Traffic(TrafficSpec),
    Release { dn: String },
    Deregister,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Register => "register",
            Action::Session { .. } => "session",
            Action::Traffic(_) => "traffic",
            Action::Release { .. } => "release",
            Action::Deregister => "deregister",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineAction {
    pub at_us: u64,
    /// Indices into [`Scenario::ues`].
    pub ues: Vec<usize>,
    pub stagger_us: u64,
    pub action: Action,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration_us: u64,
    pub cadence_us: u64,
    pub policy: WindowPolicy,
    pub queue_capacity: usize,
    pub ip_pool: Ipv4Cidr,
    pub processing: ProcessingConfig,
    pub timers: TimerConfig,
    pub access: LinkSpec,
    pub backhaul: LinkSpec,
    pub data_networks: Vec<DataNetwork>,
    pub gnbs: Vec<u32>,
    pub ues: Vec<UeSpec>,
    pub timeline: Vec<TimelineAction>,
}

fn seconds_to_us(field: &str, s: f64) -> Result<u64, ConfigError> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(invalid(
            field,
            format!("{s} is not a non-negative number of seconds"),
        ));
    }
    Ok((s * 1e6).round() as u64)
}

fn link_spec(field: &str, cfg: &LinkConfig) -> Result<LinkSpec, ConfigError> {
    let profile = cfg.profile();
    profile
        .validate()
        .map_err(|e| invalid(field, e.to_string()))?;
    let schedule = match &cfg.windows {
        None => ContactSchedule::AlwaysOpen,
        Some(ws) => {
            let mut windows = Vec::with_capacity(ws.len());
            for (i, [open, close]) in ws.iter().enumerate() {
                let f = format!("{field}.windows[{i}]");
                windows.push(ContactWindow {
                    open_at: seconds_to_us(&f, *open)?,
                    close_at: seconds_to_us(&f, *close)?,
                });
            }
            ContactSchedule::windows(windows)
                .map_err(|e| invalid(format!("{field}.windows"), e.to_string()))?
        }
    };
    Ok(LinkSpec { profile, schedule })
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_config(cfg)
    }

    /// Number of metrics records a full run produces.
    pub fn metrics_ticks(&self) -> u64 {
        self.duration_us.div_ceil(self.cadence_us)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_config(cfg: ScenarioConfig) -> Result<Self, ConfigError> {
        let duration_us = seconds_to_us("duration_s", cfg.duration_s)?;
        if duration_us == 0 {
            return Err(invalid("duration_s", "must be positive"));
        }
        let cadence_us = seconds_to_us("metrics_cadence_s", cfg.metrics_cadence_s)?;
        if cadence_us == 0 {
            return Err(invalid("metrics_cadence_s", "must be positive"));
        }
        if cfg.ip_pool.size() < 4 {
            return Err(invalid("ip_pool", "needs at least 4 addresses"));
        }

        let access = link_spec("links.access", &cfg.links.access)?;
        let backhaul = match &cfg.links.backhaul {
            Some(b) => link_spec("links.backhaul", b)?,
            None => LinkSpec {
                profile: access.profile.clone(),
                schedule: ContactSchedule::AlwaysOpen,
            },
        };

        if cfg.data_networks.is_empty() {
            return Err(invalid(
                "data_networks",
                "at least one data network is required",
            ));
        }
        let mut dn_names = HashSet::new();
        let mut prefixes = HashSet::new();
        for (i, dn) in cfg.data_networks.iter().enumerate() {
            if crate::nas::NasMessage::session_establishment_request(&dn.name, 0).is_err() {
                return Err(invalid(
                    format!("data_networks[{i}].name"),
                    format!("{:?} is not a valid DNN label", dn.name),
                ));
            }
            if !dn_names.insert(dn.name.as_str()) {
                return Err(invalid(
                    format!("data_networks[{i}].name"),
                    format!("duplicate data network {:?}", dn.name),
                ));
            }
            for p in &dn.prefixes {
                if !prefixes.insert(*p) {
                    return Err(invalid(
                        format!("data_networks[{i}].prefixes"),
                        format!("prefix {p} is already claimed"),
                    ));
                }
            }
        }
        if cfg.data_networks.len() > usize::from(u8::MAX) {
            return Err(invalid("data_networks", "at most 255 data networks"));
        }

        let mut gnbs = Vec::new();
        for (i, g) in cfg.gnbs.iter().enumerate() {
            if gnbs.contains(&g.id) {
                return Err(invalid(
                    format!("gnbs[{i}].id"),
                    format!("duplicate gNB id {}", g.id),
                ));
            }
            gnbs.push(g.id);
        }

        let mut ues = Vec::new();
        let mut by_supi = HashMap::new();
        for (i, group) in cfg.ues.iter().enumerate() {
            let base = Supi::new(group.supi.clone())
                .map_err(|_| invalid(format!("ues[{i}].supi"), "SUPI must be 15 decimal digits"))?;
            let key = hex::decode(&group.key)
                .map_err(|e| invalid(format!("ues[{i}].key"), format!("not hex: {e}")))?;
            if key.is_empty() {
                return Err(invalid(format!("ues[{i}].key"), "key must not be empty"));
            }
            if !gnbs.contains(&group.gnb) {
                return Err(invalid(
                    format!("ues[{i}].gnb"),
                    format!("no gNB with id {}", group.gnb),
                ));
            }
            if group.count == 0 {
                return Err(invalid(format!("ues[{i}].count"), "must be at least 1"));
            }
            for n in 0..u64::from(group.count) {
                let supi = base.offset(n);
                if by_supi.insert(supi.clone(), ues.len()).is_some() {
                    return Err(invalid(
                        format!("ues[{i}]"),
                        format!("SUPI {supi} appears more than once"),
                    ));
                }
                ues.push(UeSpec {
                    supi,
                    key: key.clone(),
                    gnb: group.gnb,
                });
            }
        }

        let max_payload = access.profile.mtu.saturating_sub(TUNNEL_HEADER_LEN);
        let mut timeline = Vec::new();
        for (i, e) in cfg.timeline.iter().enumerate() {
            let field = |name: &str| format!("timeline[{i}].{name}");
            let at_us = seconds_to_us(&field("at_s"), e.at_s)?;
            if at_us > duration_us {
                return Err(invalid(field("at_s"), "scheduled after the end of the run"));
            }
            let targets = if e.ue == "*" {
                (0..ues.len()).collect()
            } else {
                let supi = Supi::new(e.ue.clone())
                    .map_err(|_| invalid(field("ue"), "expected a SUPI or \"*\""))?;
                vec![*by_supi
                    .get(&supi)
                    .ok_or_else(|| invalid(field("ue"), format!("no UE {supi}")))?]
            };
            let need_dn = || -> Result<String, ConfigError> {
                let dn =
                    e.dn.clone()
                        .ok_or_else(|| invalid(field("dn"), "required for this action"))?;
                if !dn_names.contains(dn.as_str()) {
                    return Err(invalid(field("dn"), format!("unknown data network {dn:?}")));
                }
                Ok(dn)
            };
            let action = match e.action {
                ActionKind::Register => Action::Register,
                ActionKind::Deregister => Action::Deregister,
                ActionKind::Session => Action::Session {
                    dn: need_dn()?,
                    qos: e.qos.unwrap_or(crate::amf::DEFAULT_QOS_CLASS),
                },
                ActionKind::Release => Action::Release { dn: need_dn()? },
                ActionKind::Traffic => {
                    let dn = match e.dn {
                        Some(_) => Some(need_dn()?),
                        None => None,
                    };
                    let dst = e
                        .dst
                        .ok_or_else(|| invalid(field("dst"), "required for traffic"))?;
                    let count = e.count.unwrap_or(1);
                    let size = e
                        .size
                        .ok_or_else(|| invalid(field("size"), "required for traffic"))?;
                    if size == 0 || size > max_payload {
                        return Err(invalid(
                            field("size"),
                            format!("must lie in 1..={max_payload} (MTU minus tunnel header)"),
                        ));
                    }
                    if count == 0 {
                        return Err(invalid(field("count"), "must be at least 1"));
                    }
                    let interval_us = e.interval_us.unwrap_or(0);
                    if count > 1 && interval_us == 0 {
                        return Err(invalid(
                            field("interval_us"),
                            "must be positive when count > 1",
                        ));
                    }
                    Action::Traffic(TrafficSpec {
                        dn,
                        dst,
                        count,
                        size,
                        interval_us,
                        echo: e.echo,
                    })
                }
            };
            timeline.push(TimelineAction {
                at_us,
                ues: targets,
                stagger_us: e.stagger_us,
                action,
            });
        }

        Ok(Scenario {
            name: cfg.name,
            seed: cfg.seed,
            duration_us,
            cadence_us,
            policy: cfg.contact_policy,
            queue_capacity: cfg.queue_capacity,
            ip_pool: cfg.ip_pool,
            processing: cfg.processing,
            timers: cfg.timers,
            access,
            backhaul,
            data_networks: cfg.data_networks,
            gnbs,
            ues,
            timeline,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
duration_s = 2.5

[links.access]
one_way_delay_us = 100000
uplink_bps = 10000000
downlink_bps = 10000000

[[ues]]
supi = "001010000000001"
count = 3
key = "000102030405060708090a0b0c0d0e0f"

[[timeline]]
at_s = 0.0
ue = "*"
action = "register"
stagger_us = 1000

[[timeline]]
at_s = 1.0
ue = "001010000000002"
action = "session"
dn = "onboard"
"#;

    #[test]
    fn minimal_scenario_gets_defaults() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.duration_us, 2_500_000);
        assert_eq!(s.metrics_ticks(), 3);
        assert_eq!(s.ues.len(), 3);
        assert_eq!(s.ues[2].supi.as_str(), "001010000000003");
        assert_eq!(s.processing.amf_us, 500);
        assert_eq!(s.backhaul.profile, s.access.profile);
        assert_eq!(s.timeline[0].ues, vec![0, 1, 2]);
        assert_eq!(
            s.timeline[1].action,
            Action::Session {
                dn: "onboard".into(),
                qos: 9
            }
        );
        assert_eq!(s.data_networks.len(), 2);
    }

    fn err_field(text: &str) -> String {
        match Scenario::from_toml_str(text).unwrap_err() {
            ConfigError::Invalid { field, .. } => field,
            other => panic!("{other}"),
        }
    }

    #[test]
    fn field_level_diagnostics() {
        assert_eq!(
            err_field(&MINIMAL.replace("dn = \"onboard\"", "dn = \"mars\"")),
            "timeline[1].dn"
        );
        assert_eq!(
            err_field(&MINIMAL.replace("ue = \"001010000000002\"", "ue = \"001010000000009\"")),
            "timeline[1].ue"
        );
        assert_eq!(
            err_field(&MINIMAL.replace("at_s = 1.0", "at_s = 3.0")),
            "timeline[1].at_s"
        );
        assert_eq!(
            err_field(&MINIMAL.replace("key = \"0001", "key = \"zz01")),
            "ues[0].key"
        );
        assert_eq!(
            err_field(&MINIMAL.replace("uplink_bps", "loss_prob = 1.5\nuplink_bps")),
            "links.access"
        );
    }

    #[test]
    fn syntax_and_unknown_keys_are_parse_errors() {
        assert!(matches!(
            Scenario::from_toml_str("seed = "),
            Err(ConfigError::Parse(_))
        ));
        let e = Scenario::from_toml_str(&MINIMAL.replace("seed = 1", "seed = 1\nbogus = 2"))
            .unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn windows_convert_to_microseconds() {
        let text = MINIMAL.replace(
            "downlink_bps = 10000000",
            "downlink_bps = 10000000\nwindows = [[0.0, 1.0], [1.5, 2.5]]",
        );
        let s = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(
            s.access.schedule,
            ContactSchedule::Windows(vec![
                ContactWindow {
                    open_at: 0,
                    close_at: 1_000_000
                },
                ContactWindow {
                    open_at: 1_500_000,
                    close_at: 2_500_000
                }
            ])
        );
        let bad = MINIMAL.replace(
            "downlink_bps = 10000000",
            "downlink_bps = 10000000\nwindows = [[1.0, 0.5]]",
        );
        assert_eq!(err_field(&bad), "links.access.windows");
    }

    #[test]
    fn oversize_traffic_rejected() {
        let text = format!(
            "{MINIMAL}\n[[timeline]]\nat_s = 2.0\nue = \"*\"\naction = \"traffic\"\ndst = \"8.8.8.8\"\nsize = 1485\n"
        );
        assert_eq!(err_field(&text), "timeline[2].size");
        let ok = text.replace("size = 1485", "size = 1484");
        assert!(Scenario::from_toml_str(&ok).is_ok());
    }
}
