//! Impaired point-to-point link with contact windows.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("{size}-byte message exceeds the {mtu}-byte MTU")]
    OversizePacket { size: usize, mtu: u32 },
    #[error("loss probability {0} outside [0, 1]")]
    LossProbability(f64),
    #[error("MTU must be positive")]
    ZeroMtu,
    #[error("contact window {index} is empty or reversed")]
    EmptyWindow { index: usize },
    #[error("contact windows {index} and {next} overlap or are out of order", next = index + 1)]
    UnsortedWindows { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkDirection {
    Up,
    Down,
}

impl LinkDirection {
    fn index(self) -> usize {
        match self {
            LinkDirection::Up => 0,
            LinkDirection::Down => 1,
        }
    }
}

/// Link impairments. A rate of 0 bit/s means serialization is not modelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkProfile {
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
}

fn default_mtu() -> u32 {
    1500
}

impl LinkProfile {
    /// Lossless, jitter-free profile with the given delay and rates.
    pub fn ideal(one_way_delay_us: u64, uplink_bps: u64, downlink_bps: u64) -> Self {
        LinkProfile {
            one_way_delay_us,
            jitter_stddev_us: 0,
            loss_prob: 0.0,
            uplink_bps,
            downlink_bps,
            mtu: default_mtu(),
            reorder_allowed: false,
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(LinkError::LossProbability(self.loss_prob));
        }
        if self.mtu == 0 {
            return Err(LinkError::ZeroMtu);
        }
        Ok(())
    }

    pub fn rate_bps(&self, dir: LinkDirection) -> u64 {
        match dir {
            LinkDirection::Up => self.uplink_bps,
            LinkDirection::Down => self.downlink_bps,
        }
    }

    pub fn serialization_us(&self, size: usize, dir: LinkDirection) -> u64 {
        serialization_us(size, self.rate_bps(dir))
    }
}

/// Time to clock `size` bytes onto a link of `bps`, rounded up to whole µs.
pub fn serialization_us(size: usize, bps: u64) -> u64 {
    if bps == 0 {
        return 0;
    }
    let bits = size as u128 * 8 * 1_000_000;
    bits.div_ceil(u128::from(bps)) as u64
}

/// Half-open interval `[open_at, close_at)` in simulated µs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactWindow {
    pub open_at: u64,
    pub close_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactSchedule {
    AlwaysOpen,
    /// Sorted, disjoint windows; the link is closed outside them.
    Windows(Vec<ContactWindow>),
}

impl ContactSchedule {
    pub fn windows(windows: Vec<ContactWindow>) -> Result<Self, LinkError> {
        for (i, w) in windows.iter().enumerate() {
            if w.open_at >= w.close_at {
                return Err(LinkError::EmptyWindow { index: i });
            }
            if let Some(next) = windows.get(i + 1) {
                if next.open_at < w.close_at {
                    return Err(LinkError::UnsortedWindows { index: i });
                }
            }
        }
        Ok(ContactSchedule::Windows(windows))
    }

    pub fn is_open(&self, t: u64) -> bool {
        match self {
            ContactSchedule::AlwaysOpen => true,
            ContactSchedule::Windows(ws) => ws.iter().any(|w| w.open_at <= t && t < w.close_at),
        }
    }

    /// Earliest instant `>= t` at which the link is open.
    pub fn next_open(&self, t: u64) -> Option<u64> {
        match self {
            ContactSchedule::AlwaysOpen => Some(t),
            ContactSchedule::Windows(ws) => {
                ws.iter().find(|w| t < w.close_at).map(|w| w.open_at.max(t))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowPolicy {
    /// Hold messages until the next window opens, up to the queue capacity.
    #[default]
    Queue,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Loss,
    QueueFull,
    WindowClosed,
    /// Closed now and no later window exists.
    NoContact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Scheduled {
        tx_start: u64,
        deliver_at: u64,
        /// Held for a contact window.
        deferred: bool,
    },
    Dropped(DropReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub id: u64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default)]
struct DirectionState {
    busy_until: u64,
    last_delivery: u64,
    /// Start times of accepted messages still waiting to be clocked out.
    waiting: VecDeque<u64>,
}

#[derive(Debug, Clone)]
pub struct SatLink {
    name: String,
    profile: LinkProfile,
    schedule: ContactSchedule,
    policy: WindowPolicy,
    queue_capacity: usize,
    rng: ChaCha8Rng,
    jitter: Option<Normal<f64>>,
    dirs: [DirectionState; 2],
    next_id: u64,
}

impl SatLink {
    pub fn new(
        name: impl Into<String>,
        profile: LinkProfile,
        schedule: ContactSchedule,
        policy: WindowPolicy,
        queue_capacity: usize,
        seed: u64,
    ) -> Result<Self, LinkError> {
        profile.validate()?;
        if let ContactSchedule::Windows(ws) = &schedule {
            ContactSchedule::windows(ws.clone())?;
        }
        let jitter = (profile.jitter_stddev_us > 0)
            .then(|| Normal::new(0.0, profile.jitter_stddev_us as f64).expect("positive stddev"));
        Ok(SatLink {
            name: name.into(),
            profile,
            schedule,
            policy,
            queue_capacity,
            rng: ChaCha8Rng::seed_from_u64(seed),
            jitter,
            dirs: Default::default(),
            next_id: 0,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn profile(&self) -> &LinkProfile {
        &self.profile
    }

    pub fn schedule(&self) -> &ContactSchedule {
        &self.schedule
    }

    /// Messages accepted in `dir` that have not started transmitting at `now`.
    pub fn queued(&mut self, dir: LinkDirection, now: u64) -> usize {
        let st = &mut self.dirs[dir.index()];
        while st.waiting.front().is_some_and(|&t| t <= now) {
            st.waiting.pop_front();
        }
        st.waiting.len()
    }

    /// Schedules one message. Per direction the link is a FIFO: a message
    /// starts once the previous one has been clocked out and the link is in
    /// contact, then arrives after the propagation delay plus a non-negative
    /// jitter sample.
    pub fn transmit(
        &mut self,
        size: usize,
        dir: LinkDirection,
        now: u64,
    ) -> Result<Transmission, LinkError> {
        if size > self.profile.mtu as usize {
            return Err(LinkError::OversizePacket {
                size,
                mtu: self.profile.mtu,
            });
        }
        let id = self.next_id;
        self.next_id += 1;
        let queued = self.queued(dir, now);
        let st = &mut self.dirs[dir.index()];

        let mut tx_start = now.max(st.busy_until);
        let mut deferred = false;
        if !self.schedule.is_open(tx_start) {
            let Some(open) = self.schedule.next_open(tx_start) else {
                return Ok(Transmission {
                    id,
                    outcome: Outcome::Dropped(DropReason::NoContact),
                });
            };
            match self.policy {
                WindowPolicy::Drop => {
                    return Ok(Transmission {
                        id,
                        outcome: Outcome::Dropped(DropReason::WindowClosed),
                    })
                }
                WindowPolicy::Queue => tx_start = open,
            }
        }
        if tx_start > now {
            if queued >= self.queue_capacity {
                return Ok(Transmission {
                    id,
                    outcome: Outcome::Dropped(DropReason::QueueFull),
                });
            }
            deferred = !self.schedule.is_open(now);
        }

        let ser = serialization_us(size, self.profile.rate_bps(dir));
        st.busy_until = tx_start + ser;
        if tx_start > now {
            st.waiting.push_back(tx_start);
        }

        if self.profile.loss_prob > 0.0 && self.rng.random_bool(self.profile.loss_prob) {
            return Ok(Transmission {
                id,
                outcome: Outcome::Dropped(DropReason::Loss),
            });
        }
        let jitter = self
            .jitter
            .map_or(0, |n| n.sample(&mut self.rng).max(0.0).round() as u64);
        let mut deliver_at = tx_start + ser + self.profile.one_way_delay_us + jitter;
        if !self.profile.reorder_allowed {
            deliver_at = deliver_at.max(st.last_delivery);
            st.last_delivery = deliver_at;
        }
        Ok(Transmission {
            id,
            outcome: Outcome::Scheduled {
                tx_start,
                deliver_at,
                deferred,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(profile: LinkProfile, schedule: ContactSchedule, policy: WindowPolicy) -> SatLink {
        SatLink::new("t", profile, schedule, policy, DEFAULT_QUEUE_CAPACITY, 1).unwrap()
    }

    fn deliver_at(t: Transmission) -> u64 {
        match t.outcome {
            Outcome::Scheduled { deliver_at, .. } => deliver_at,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn serialization_plus_delay() {
        // 1294 B at 10 Mbit/s is 1035.2 µs, rounded up to 1036.
        let mut l = link(
            LinkProfile::ideal(100_000, 1_000_000, 10_000_000),
            ContactSchedule::AlwaysOpen,
            WindowPolicy::Queue,
        );
        let t = l.transmit(1294, LinkDirection::Down, 5_000).unwrap();
        assert_eq!(deliver_at(t), 5_000 + 1036 + 100_000);
        assert_eq!(serialization_us(1294, 10_000_000), 1036);
        assert_eq!(serialization_us(1250, 10_000_000), 1000);
        assert_eq!(serialization_us(1294, 0), 0);
    }

    #[test]
    fn back_to_back_messages_queue_behind_each_other() {
        let mut l = link(
            LinkProfile::ideal(10, 8_000_000, 8_000_000),
            ContactSchedule::AlwaysOpen,
            WindowPolicy::Queue,
        );
        // 1000 B at 8 Mbit/s = 1000 µs.
        let a = deliver_at(l.transmit(1000, LinkDirection::Up, 0).unwrap());
        let b = deliver_at(l.transmit(1000, LinkDirection::Up, 0).unwrap());
        assert_eq!((a, b), (1010, 2010));
        assert_eq!(l.queued(LinkDirection::Up, 0), 1);
        assert_eq!(l.queued(LinkDirection::Up, 1000), 0);
        // The other direction is independent.
        assert_eq!(
            deliver_at(l.transmit(1000, LinkDirection::Down, 0).unwrap()),
            1010
        );
    }

    #[test]
    fn total_loss_drops_everything() {
        let mut p = LinkProfile::ideal(1000, 0, 0);
        p.loss_prob = 1.0;
        let mut l = link(p, ContactSchedule::AlwaysOpen, WindowPolicy::Queue);
        for i in 0..100 {
            let t = l.transmit(100, LinkDirection::Up, i).unwrap();
            assert_eq!(t.outcome, Outcome::Dropped(DropReason::Loss));
        }
    }

    #[test]
    fn closed_window_defers_to_next_open() {
        let schedule = ContactSchedule::windows(vec![
            ContactWindow {
                open_at: 0,
                close_at: 1_000,
            },
            ContactWindow {
                open_at: 5_000,
                close_at: 9_000,
            },
        ])
        .unwrap();
        let mut l = link(
            LinkProfile::ideal(200, 0, 0),
            schedule.clone(),
            WindowPolicy::Queue,
        );
        assert_eq!(
            deliver_at(l.transmit(10, LinkDirection::Up, 500).unwrap()),
            700
        );
        let t = l.transmit(10, LinkDirection::Up, 2_000).unwrap();
        assert_eq!(
            t.outcome,
            Outcome::Scheduled {
                tx_start: 5_000,
                deliver_at: 5_200,
                deferred: true
            }
        );
        assert_eq!(
            l.transmit(10, LinkDirection::Up, 9_500).unwrap().outcome,
            Outcome::Dropped(DropReason::NoContact)
        );

        let mut d = link(LinkProfile::ideal(200, 0, 0), schedule, WindowPolicy::Drop);
        assert_eq!(
            d.transmit(10, LinkDirection::Up, 2_000).unwrap().outcome,
            Outcome::Dropped(DropReason::WindowClosed)
        );
    }

    #[test]
    fn queue_capacity_bounds_deferred_messages() {
        let schedule = ContactSchedule::windows(vec![ContactWindow {
            open_at: 1_000,
            close_at: 2_000,
        }])
        .unwrap();
        let mut l = SatLink::new(
            "t",
            LinkProfile::ideal(0, 0, 0),
            schedule,
            WindowPolicy::Queue,
            3,
            1,
        )
        .unwrap();
        for _ in 0..3 {
            assert!(matches!(
                l.transmit(10, LinkDirection::Up, 0).unwrap().outcome,
                Outcome::Scheduled { deferred: true, .. }
            ));
        }
        assert_eq!(
            l.transmit(10, LinkDirection::Up, 0).unwrap().outcome,
            Outcome::Dropped(DropReason::QueueFull)
        );
    }

    #[test]
    fn oversize_rejected() {
        let mut l = link(
            LinkProfile::ideal(0, 0, 0),
            ContactSchedule::AlwaysOpen,
            WindowPolicy::Queue,
        );
        assert_eq!(
            l.transmit(1501, LinkDirection::Up, 0),
            Err(LinkError::OversizePacket {
                size: 1501,
                mtu: 1500
            })
        );
    }

    #[test]
    fn jitter_is_non_negative_and_fifo_preserved() {
        let mut p = LinkProfile::ideal(1_000, 0, 0);
        p.jitter_stddev_us = 800;
        let mut l = link(p, ContactSchedule::AlwaysOpen, WindowPolicy::Queue);
        let mut last = 0;
        for i in 0..500u64 {
            let now = i * 10;
            let d = deliver_at(l.transmit(64, LinkDirection::Down, now).unwrap());
            assert!(d >= now + 1_000);
            assert!(d >= last);
            last = d;
        }
    }

    #[test]
    fn same_seed_same_schedule() {
        let mut p = LinkProfile::ideal(1_000, 1_000_000, 1_000_000);
        p.jitter_stddev_us = 300;
        p.loss_prob = 0.2;
        let run = |seed| {
            let mut l = SatLink::new(
                "t",
                p.clone(),
                ContactSchedule::AlwaysOpen,
                WindowPolicy::Queue,
                1024,
                seed,
            )
            .unwrap();
            (0..200u64)
                .map(|i| {
                    l.transmit(100, LinkDirection::Up, i * 1000)
                        .unwrap()
                        .outcome
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn window_validation() {
        assert!(ContactSchedule::windows(vec![ContactWindow {
            open_at: 5,
            close_at: 5
        }])
        .is_err());
        assert!(ContactSchedule::windows(vec![
            ContactWindow {
                open_at: 0,
                close_at: 10
            },
            ContactWindow {
                open_at: 5,
                close_at: 20
            }
        ])
        .is_err());
    }
}
