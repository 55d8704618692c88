//! Access and mobility management function.
//!
//! Terminates NAS carried in N2 envelopes, runs the registration and
//! challenge-response state machine per subscriber, and relays session
//! requests to the SMF. The AMF never touches the SMF directly: it returns
//! [`AmfOutput`] values and the caller routes them.

pub mod auth;

use std::collections::{BTreeSet, HashMap};
use std::net::Ipv4Addr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nas::{self, cause, MessageType, NasError, NasMessage, Supi, NONCE_LEN};
use crate::ngap::{NgapEnvelope, NgapProcedure};

pub use auth::{challenge_bytes, compute_auth_response};

/// Declared serialized size of one UE context, without session references.
///
/// | field              | bytes |
/// |--------------------|-------|
/// | supi               | 15    |
/// | state              | 1     |
/// | key id             | 4     |
/// | sequence counter   | 4     |
/// | challenge nonce    | 16    |
/// | serving gNB id     | 4     |
/// | RAN UE id          | 4     |
/// | registered_at (µs) | 8     |
/// | slice id           | 1     |
/// | flags              | 1     |
pub const PER_CONTEXT_BYTES: u64 = 58;
/// Each session id held by a context.
pub const SESSION_REF_BYTES: u64 = 4;
pub const DEFAULT_AUTH_PENDING_TIMEOUT_US: u64 = 6_000_000;
pub const DEFAULT_QOS_CLASS: u8 = 9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AmfError {
    #[error("NAS decode failed: {0}")]
    Nas(#[from] NasError),
    #[error("procedure {0:?} is not an uplink procedure")]
    UnexpectedProcedure(NgapProcedure),
    #[error("no UE context for gNB {gnb_id} RAN id {ue_ran_id}")]
    UnknownUe { gnb_id: u32, ue_ran_id: u32 },
    #[error("no UE context for {0}")]
    UnknownContext(Supi),
    #[error("subscriber {0} is not provisioned")]
    UnknownSubscriber(Supi),
    #[error("authentication failed for {0}")]
    AuthFailure(Supi),
    #[error("{0} is not registered")]
    NotRegistered(Supi),
    #[error("{supi} has no session {session_id}")]
    UnknownSession { supi: Supi, session_id: u32 },
    #[error("{0} not expected from the UE in the current state")]
    UnexpectedMessage(MessageType),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegistrationState {
    Deregistered,
    AuthPending,
    Registered,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecurityContext {
    pub key_id: u32,
    pub sequence: u32,
    /// Set while a challenge is outstanding or was last answered.
    pub nonce: Option<[u8; NONCE_LEN]>,
    expected: Option<[u8; nas::AUTH_RESPONSE_LEN]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UeContext {
    pub supi: Supi,
    pub state: RegistrationState,
    pub security: SecurityContext,
    pub serving_gnb: u32,
    pub ue_ran_id: u32,
    pub session_ids: BTreeSet<u32>,
    pub registered_at: Option<u64>,
    pub slice_id: u8,
    pub registration_complete: bool,
    timer_generation: u64,
}

impl UeContext {
    pub fn bytes_estimate(&self) -> u64 {
        PER_CONTEXT_BYTES + SESSION_REF_BYTES * self.session_ids.len() as u64
    }
}

#[derive(Debug, Clone)]
struct Subscriber {
    key: Vec<u8>,
    key_id: u32,
    sequence: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AmfConfig {
    pub auth_pending_timeout_us: u64,
}

impl Default for AmfConfig {
    fn default() -> Self {
        AmfConfig {
            auth_pending_timeout_us: DEFAULT_AUTH_PENDING_TIMEOUT_US,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SmfRequest {
    Establish {
        supi: Supi,
        dn_name: String,
        qos_class: u8,
        slice_id: u8,
    },
    Release {
        supi: Supi,
        session_id: u32,
    },
    /// Sent when a context is torn down; the UE is not notified.
    ReleaseAll {
        supi: Supi,
        session_ids: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SmfResponse {
    Established {
        supi: Supi,
        session_id: u32,
        ue_ip: Ipv4Addr,
        qos_class: u8,
        dn_name: String,
    },
    EstablishFailed {
        supi: Supi,
        dn_name: String,
        cause: u8,
    },
    Released {
        supi: Supi,
        session_id: u32,
        notify_ue: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AmfOutput {
    Downlink(NgapEnvelope),
    Smf(SmfRequest),
    StartTimer {
        supi: Supi,
        generation: u64,
        expires_at: u64,
    },
    StateChange {
        supi: Supi,
        state: RegistrationState,
    },
    RegistrationCompleted {
        supi: Supi,
    },
    /// A request was refused; any reply to the UE is a separate `Downlink`.
    Rejected {
        supi: Option<Supi>,
        reason: AmfError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ContextTableStats {
    pub active_ues: u64,
    pub registered: u64,
    pub bytes_estimate: u64,
}

#[derive(Debug)]
pub struct Amf {
    config: AmfConfig,
    subscribers: HashMap<Supi, Subscriber>,
    contexts: HashMap<Supi, UeContext>,
    by_ran: HashMap<(u32, u32), Supi>,
    rng: ChaCha8Rng,
    next_generation: u64,
}

impl Amf {
    pub fn new(config: AmfConfig, seed: u64) -> Self {
        Amf {
            config,
            subscribers: HashMap::new(),
            contexts: HashMap::new(),
            by_ran: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_generation: 0,
        }
    }

    /// Adds or replaces a subscriber's preshared key.
    pub fn provision(&mut self, supi: Supi, key: Vec<u8>) {
        let key_id = self.subscribers.len() as u32 + 1;
        self.subscribers.insert(
            supi,
            Subscriber {
                key,
                key_id,
                sequence: 0,
            },
        );
    }

    pub fn context(&self, supi: &Supi) -> Option<&UeContext> {
        self.contexts.get(supi)
    }

    pub fn contexts(&self) -> impl Iterator<Item = &UeContext> {
        self.contexts.values()
    }

    pub fn state_of(&self, supi: &Supi) -> RegistrationState {
        self.contexts
            .get(supi)
            .map_or(RegistrationState::Deregistered, |c| c.state)
    }

    pub fn is_registered(&self, supi: &Supi) -> bool {
        self.state_of(supi) == RegistrationState::Registered
    }

    pub fn context_table_stats(&self) -> ContextTableStats {
        ContextTableStats {
            active_ues: self.contexts.len() as u64,
            registered: self
                .contexts
                .values()
                .filter(|c| c.state == RegistrationState::Registered)
                .count() as u64,
            bytes_estimate: self.contexts.values().map(UeContext::bytes_estimate).sum(),
        }
    }

    pub fn handle_uplink(
        &mut self,
        env: &NgapEnvelope,
        now: u64,
    ) -> Result<Vec<AmfOutput>, AmfError> {
        if !env.procedure.is_uplink() {
            return Err(AmfError::UnexpectedProcedure(env.procedure));
        }
        let msg = nas::decode(&env.nas_payload)?;
        match msg.message_type() {
            MessageType::RegistrationRequest => {
                let supi = msg.supi().expect("mandatory IE validated by decode");
                Ok(self.on_registration_request(supi, msg.slice_id().unwrap_or(0), env, now))
            }
            MessageType::DeregistrationRequest => {
                let supi = msg.supi().expect("mandatory IE validated by decode");
                if !self.contexts.contains_key(&supi) {
                    return Err(AmfError::UnknownContext(supi));
                }
                Ok(self.remove_context(&supi))
            }
            other => {
                let supi = self
                    .by_ran
                    .get(&(env.gnb_id, env.ue_ran_id))
                    .cloned()
                    .ok_or(AmfError::UnknownUe {
                        gnb_id: env.gnb_id,
                        ue_ran_id: env.ue_ran_id,
                    })?;
                match other {
                    MessageType::AuthenticationResponse => {
                        Ok(self.on_auth_response(&supi, &msg, now))
                    }
                    MessageType::RegistrationComplete => self.on_registration_complete(&supi),
                    MessageType::PduSessionEstablishmentRequest => {
                        Ok(self.on_session_request(&supi, &msg))
                    }
                    MessageType::PduSessionReleaseRequest => self.on_release_request(&supi, &msg),
                    _ => Err(AmfError::UnexpectedMessage(other)),
                }
            }
        }
    }

    fn on_registration_request(
        &mut self,
        supi: Supi,
        slice_id: u8,
        env: &NgapEnvelope,
        now: u64,
    ) -> Vec<AmfOutput> {
        if let Some(ctx) = self.contexts.get(&supi) {
            let same_binding = ctx.serving_gnb == env.gnb_id && ctx.ue_ran_id == env.ue_ran_id;
            if ctx.state == RegistrationState::AuthPending && same_binding {
                if let Some(nonce) = ctx.security.nonce {
                    let challenge =
                        NasMessage::authentication_request(nonce, ctx.security.sequence);
                    return vec![AmfOutput::Downlink(envelope(
                        NgapProcedure::DownlinkNasTransport,
                        env.gnb_id,
                        env.ue_ran_id,
                        &challenge,
                    ))];
                }
            }
        }
        let Some(sub) = self.subscribers.get_mut(&supi) else {
            let reply = NasMessage::registration_reject(cause::AUTH_FAILURE);
            return vec![
                AmfOutput::Downlink(envelope(
                    NgapProcedure::DownlinkNasTransport,
                    env.gnb_id,
                    env.ue_ran_id,
                    &reply,
                )),
                AmfOutput::Rejected {
                    supi: Some(supi.clone()),
                    reason: AmfError::UnknownSubscriber(supi),
                },
            ];
        };
        sub.sequence = sub.sequence.wrapping_add(1);
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        let sequence = sub.sequence;
        let key_id = sub.key_id;
        let expected = compute_auth_response(&sub.key, &challenge_bytes(&nonce, sequence));

        let mut out = Vec::new();
        if let Some(old) = self.contexts.remove(&supi) {
            self.by_ran.remove(&(old.serving_gnb, old.ue_ran_id));
            if !old.session_ids.is_empty() {
                out.push(AmfOutput::Smf(SmfRequest::ReleaseAll {
                    supi: supi.clone(),
                    session_ids: old.session_ids.into_iter().collect(),
                }));
            }
        }
        // A RAN id reused by another subscriber on the same gNB now belongs
        // to this one.
        if let Some(prev) = self
            .by_ran
            .insert((env.gnb_id, env.ue_ran_id), supi.clone())
        {
            if prev != supi {
                out.extend(self.remove_context(&prev));
                self.by_ran
                    .insert((env.gnb_id, env.ue_ran_id), supi.clone());
            }
        }

        self.next_generation += 1;
        let generation = self.next_generation;
        self.contexts.insert(
            supi.clone(),
            UeContext {
                supi: supi.clone(),
                state: RegistrationState::AuthPending,
                security: SecurityContext {
                    key_id,
                    sequence,
                    nonce: Some(nonce),
                    expected: Some(expected),
                },
                serving_gnb: env.gnb_id,
                ue_ran_id: env.ue_ran_id,
                session_ids: BTreeSet::new(),
                registered_at: None,
                slice_id,
                registration_complete: false,
                timer_generation: generation,
            },
        );
        let challenge = NasMessage::authentication_request(nonce, sequence);
        out.push(AmfOutput::StateChange {
            supi: supi.clone(),
            state: RegistrationState::AuthPending,
        });
        out.push(AmfOutput::Downlink(envelope(
            NgapProcedure::DownlinkNasTransport,
            env.gnb_id,
            env.ue_ran_id,
            &challenge,
        )));
        out.push(AmfOutput::StartTimer {
            supi,
            generation,
            expires_at: now + self.config.auth_pending_timeout_us,
        });
        out
    }

    fn on_auth_response(&mut self, supi: &Supi, msg: &NasMessage, now: u64) -> Vec<AmfOutput> {
        let ctx = self.contexts.get_mut(supi).expect("indexed context exists");
        let response = msg
            .auth_response()
            .expect("mandatory IE validated by decode");
        let matches = ctx.security.expected.as_ref().map(|e| e.as_slice()) == Some(response);
        match ctx.state {
            RegistrationState::AuthPending if matches => {
                ctx.state = RegistrationState::Registered;
                ctx.registered_at = Some(now);
                let accept = NasMessage::registration_accept(ctx.slice_id);
                vec![
                    AmfOutput::StateChange {
                        supi: supi.clone(),
                        state: RegistrationState::Registered,
                    },
                    AmfOutput::Downlink(envelope(
                        NgapProcedure::InitialContextSetup,
                        ctx.serving_gnb,
                        ctx.ue_ran_id,
                        &accept,
                    )),
                ]
            }
            RegistrationState::AuthPending => {
                let reject = NasMessage::registration_reject(cause::AUTH_FAILURE);
                let reply = envelope(
                    NgapProcedure::DownlinkNasTransport,
                    ctx.serving_gnb,
                    ctx.ue_ran_id,
                    &reject,
                );
                let mut out = vec![AmfOutput::Downlink(reply)];
                out.extend(self.remove_context(supi));
                out.push(AmfOutput::Rejected {
                    supi: Some(supi.clone()),
                    reason: AmfError::AuthFailure(supi.clone()),
                });
                out
            }
            // Retransmitted response to the challenge that registered this
            // context: repeat the accept, state is unchanged.
            RegistrationState::Registered if matches => {
                let accept = NasMessage::registration_accept(ctx.slice_id);
                vec![AmfOutput::Downlink(envelope(
                    NgapProcedure::InitialContextSetup,
                    ctx.serving_gnb,
                    ctx.ue_ran_id,
                    &accept,
                ))]
            }
            _ => vec![AmfOutput::Rejected {
                supi: Some(supi.clone()),
                reason: AmfError::UnexpectedMessage(MessageType::AuthenticationResponse),
            }],
        }
    }

    fn on_registration_complete(&mut self, supi: &Supi) -> Result<Vec<AmfOutput>, AmfError> {
        let ctx = self.contexts.get_mut(supi).expect("indexed context exists");
        if ctx.state != RegistrationState::Registered {
            return Err(AmfError::UnexpectedMessage(
                MessageType::RegistrationComplete,
            ));
        }
        if ctx.registration_complete {
            return Ok(Vec::new());
        }
        ctx.registration_complete = true;
        Ok(vec![AmfOutput::RegistrationCompleted {
            supi: supi.clone(),
        }])
    }

    fn on_session_request(&mut self, supi: &Supi, msg: &NasMessage) -> Vec<AmfOutput> {
        let ctx = &self.contexts[supi];
        let dn_name = msg.dn_name().expect("mandatory IE validated by decode");
        if ctx.state != RegistrationState::Registered {
            let reject =
                NasMessage::session_establishment_reject(cause::NOT_REGISTERED, Some(dn_name));
            return vec![
                AmfOutput::Downlink(envelope(
                    NgapProcedure::DownlinkNasTransport,
                    ctx.serving_gnb,
                    ctx.ue_ran_id,
                    &reject,
                )),
                AmfOutput::Rejected {
                    supi: Some(supi.clone()),
                    reason: AmfError::NotRegistered(supi.clone()),
                },
            ];
        }
        vec![AmfOutput::Smf(SmfRequest::Establish {
            supi: supi.clone(),
            dn_name: dn_name.to_string(),
            qos_class: msg.qos_class().unwrap_or(DEFAULT_QOS_CLASS),
            slice_id: msg.slice_id().unwrap_or(ctx.slice_id),
        })]
    }

    fn on_release_request(
        &mut self,
        supi: &Supi,
        msg: &NasMessage,
    ) -> Result<Vec<AmfOutput>, AmfError> {
        let ctx = &self.contexts[supi];
        let session_id = msg.session_id().expect("mandatory IE validated by decode");
        if ctx.state != RegistrationState::Registered {
            return Err(AmfError::NotRegistered(supi.clone()));
        }
        if !ctx.session_ids.contains(&session_id) {
            return Err(AmfError::UnknownSession {
                supi: supi.clone(),
                session_id,
            });
        }
        Ok(vec![AmfOutput::Smf(SmfRequest::Release {
            supi: supi.clone(),
            session_id,
        })])
    }

    pub fn handle_smf_response(&mut self, resp: SmfResponse) -> Vec<AmfOutput> {
        match resp {
            SmfResponse::Established {
                supi,
                session_id,
                ue_ip,
                qos_class,
                dn_name,
            } => match self.contexts.get_mut(&supi) {
                Some(ctx) if ctx.state == RegistrationState::Registered => {
                    ctx.session_ids.insert(session_id);
                    let accept = NasMessage::session_establishment_accept(
                        session_id, ue_ip, qos_class, &dn_name,
                    );
                    vec![AmfOutput::Downlink(envelope(
                        NgapProcedure::DownlinkNasTransport,
                        ctx.serving_gnb,
                        ctx.ue_ran_id,
                        &accept,
                    ))]
                }
                // The UE left while the SMF was working: undo.
                _ => vec![AmfOutput::Smf(SmfRequest::ReleaseAll {
                    supi,
                    session_ids: vec![session_id],
                })],
            },
            SmfResponse::EstablishFailed {
                supi,
                dn_name,
                cause,
            } => match self.contexts.get(&supi) {
                Some(ctx) => {
                    let reject = NasMessage::session_establishment_reject(cause, Some(&dn_name));
                    vec![AmfOutput::Downlink(envelope(
                        NgapProcedure::DownlinkNasTransport,
                        ctx.serving_gnb,
                        ctx.ue_ran_id,
                        &reject,
                    ))]
                }
                None => Vec::new(),
            },
            SmfResponse::Released {
                supi,
                session_id,
                notify_ue,
            } => match self.contexts.get_mut(&supi) {
                Some(ctx) => {
                    ctx.session_ids.remove(&session_id);
                    if notify_ue {
                        let done = NasMessage::session_release_complete(session_id);
                        vec![AmfOutput::Downlink(envelope(
                            NgapProcedure::DownlinkNasTransport,
                            ctx.serving_gnb,
                            ctx.ue_ran_id,
                            &done,
                        ))]
                    } else {
                        Vec::new()
                    }
                }
                None => Vec::new(),
            },
        }
    }

    /// Fires the auth-pending timer. A timer whose generation no longer
    /// matches the context (re-registration, success) does nothing.
    pub fn handle_timer(&mut self, supi: &Supi, generation: u64) -> Vec<AmfOutput> {
        match self.contexts.get(supi) {
            Some(ctx)
                if ctx.state == RegistrationState::AuthPending
                    && ctx.timer_generation == generation =>
            {
                self.remove_context(supi)
            }
            _ => Vec::new(),
        }
    }

    fn remove_context(&mut self, supi: &Supi) -> Vec<AmfOutput> {
        let Some(ctx) = self.contexts.remove(supi) else {
            return Vec::new();
        };
        if self.by_ran.get(&(ctx.serving_gnb, ctx.ue_ran_id)) == Some(supi) {
            self.by_ran.remove(&(ctx.serving_gnb, ctx.ue_ran_id));
        }
        let mut out = Vec::new();
        if !ctx.session_ids.is_empty() {
            out.push(AmfOutput::Smf(SmfRequest::ReleaseAll {
                supi: supi.clone(),
                session_ids: ctx.session_ids.into_iter().collect(),
            }));
        }
        out.push(AmfOutput::StateChange {
            supi: supi.clone(),
            state: RegistrationState::Deregistered,
        });
        out
    }
}

fn envelope(
    procedure: NgapProcedure,
    gnb_id: u32,
    ue_ran_id: u32,
    msg: &NasMessage,
) -> NgapEnvelope {
    NgapEnvelope {
        procedure,
        gnb_id,
        ue_ran_id,
        nas_payload: msg.encode().expect("core messages fit the wire format"),
    }
}
