//! NAS-like signaling codec.
//!
//! Wire layout of one message:
//!
//! ```text
//! +------+------+-----+---------+---------+-----+---------+-----
//! | 0x7E | type | tag | len(BE, 2 bytes)  | value ... | tag | ...
//! +------+------+-----+---------+---------+-----+---------+-----
//! ```
//!
//! Message type codes run from 0x41 to 0x4C in [`MessageType::ALL`] order.
//! Every type has a fixed set of mandatory and optional information
//! elements (IEs); any other tag is rejected. No IE tag equals the protocol
//! discriminator, so a decoder walking a byte stream knows a message ended
//! when it meets 0x7E at an IE boundary (see [`frame_len`]).

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

/// First byte of every encoded message.
pub const PROTOCOL_DISCRIMINATOR: u8 = 0x7E;
/// Discriminator plus message type code.
pub const HEADER_LEN: usize = 2;
/// Tag byte plus two length bytes.
pub const IE_HEADER_LEN: usize = 3;
/// Upper bound on a whole encoded message and on any single IE value.
pub const MAX_LEN: usize = 65535;
/// Length of the authentication challenge nonce.
pub const NONCE_LEN: usize = 16;
/// Length of the authentication response digest.
pub const AUTH_RESPONSE_LEN: usize = 32;
/// Longest accepted data network name.
pub const MAX_DN_NAME_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NasError {
    #[error("IE {tag} value is {len} bytes, limit is 65535")]
    IeTooLong { tag: IeTag, len: usize },
    #[error("encoded message would be {0} bytes, limit is 65535")]
    MessageTooLong(usize),
    #[error("malformed message: {0}")]
    MalformedMessage(Malformed),
    #[error("{message_type} is missing mandatory IE {tag}")]
    MissingMandatoryIe {
        message_type: MessageType,
        tag: IeTag,
    },
    #[error("invalid SUPI {0:?}: expected 15 decimal digits")]
    InvalidSupi(String),
    #[error("cannot parse message text: {0}")]
    Syntax(String),
}

/// Reasons a byte buffer is not a well-formed message.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Malformed {
    #[error("buffer is empty")]
    Empty,
    #[error("buffer shorter than the 2-byte header")]
    TruncatedHeader,
    #[error("bad protocol discriminator 0x{0:02X}")]
    BadDiscriminator(u8),
    #[error("unknown message type code 0x{0:02X}")]
    UnknownType(u8),
    #[error("IE header truncated at offset {0}")]
    TruncatedIe(usize),
    #[error("IE at offset {offset} declares {declared} bytes but only {remaining} remain")]
    LengthOverrun {
        offset: usize,
        declared: usize,
        remaining: usize,
    },
    #[error("unknown IE tag 0x{0:02X}")]
    UnknownTag(u8),
    #[error("IE {tag} is not allowed in {message_type}")]
    UnexpectedIe {
        message_type: MessageType,
        tag: IeTag,
    },
    #[error("IE {0} appears more than once")]
    DuplicateIe(IeTag),
    #[error("IE {tag} has an invalid value: {reason}")]
    InvalidValue { tag: IeTag, reason: &'static str },
}

impl From<Malformed> for NasError {
    fn from(m: Malformed) -> Self {
        NasError::MalformedMessage(m)
    }
}

macro_rules! message_types {
    ($($name:ident = $code:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum MessageType {
            $($name = $code),*
        }

        impl MessageType {
            pub const ALL: [MessageType; 12] = [$(MessageType::$name),*];

            pub fn from_code(code: u8) -> Option<Self> {
                match code {
                    $($code => Some(MessageType::$name),)*
                    _ => None,
                }
            }

            pub fn name(self) -> &'static str {
                match self {
                    $(MessageType::$name => stringify!($name),)*
                }
            }
        }
    };
}

message_types! {
    RegistrationRequest = 0x41,
    AuthenticationRequest = 0x42,
    AuthenticationResponse = 0x43,
    RegistrationAccept = 0x44,
    RegistrationComplete = 0x45,
    RegistrationReject = 0x46,
    DeregistrationRequest = 0x47,
    PduSessionEstablishmentRequest = 0x48,
    PduSessionEstablishmentAccept = 0x49,
    PduSessionEstablishmentReject = 0x4A,
    PduSessionReleaseRequest = 0x4B,
    PduSessionReleaseComplete = 0x4C,
}

impl MessageType {
    pub fn code(self) -> u8 {
        self as u8
    }

    /// IE grammar for this message type.
    pub fn rules(self) -> IeRules {
        use IeTag::*;
        use MessageType::*;
        let (mandatory, optional): (&'static [IeTag], &'static [IeTag]) = match self {
            RegistrationRequest => (&[Supi], &[SliceId]),
            AuthenticationRequest => (&[Nonce, AuthSequence], &[]),
            AuthenticationResponse => (&[AuthResponse], &[]),
            RegistrationAccept => (&[], &[SliceId]),
            RegistrationComplete => (&[], &[]),
            RegistrationReject => (&[Cause], &[]),
            DeregistrationRequest => (&[Supi], &[]),
            PduSessionEstablishmentRequest => (&[DnName], &[QosClass, SliceId]),
            PduSessionEstablishmentAccept => (&[SessionId, UeIp, QosClass], &[DnName]),
            PduSessionEstablishmentReject => (&[Cause], &[DnName]),
            PduSessionReleaseRequest => (&[SessionId], &[]),
            PduSessionReleaseComplete => (&[SessionId], &[]),
        };
        IeRules {
            mandatory,
            optional,
        }
    }

    /// True for messages sent by the network towards the UE.
    pub fn is_downlink(self) -> bool {
        use MessageType::*;
        matches!(
            self,
            AuthenticationRequest
                | RegistrationAccept
                | RegistrationReject
                | PduSessionEstablishmentAccept
                | PduSessionEstablishmentReject
                | PduSessionReleaseComplete
        )
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MessageType {
    type Err = NasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| NasError::Syntax(format!("unknown message type {s:?}")))
    }
}

/// Mandatory and optional IE tags of one message type.
#[derive(Debug, Clone, Copy)]
pub struct IeRules {
    pub mandatory: &'static [IeTag],
    pub optional: &'static [IeTag],
}

impl IeRules {
    pub fn allows(&self, tag: IeTag) -> bool {
        self.mandatory.contains(&tag) || self.optional.contains(&tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum IeTag {
    Supi = 0x01,
    Nonce = 0x02,
    AuthSequence = 0x03,
    AuthResponse = 0x04,
    Cause = 0x05,
    SessionId = 0x06,
    DnName = 0x07,
    QosClass = 0x08,
    UeIp = 0x09,
    SliceId = 0x0A,
}

/// Shape constraint on an IE value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueRule {
    Fixed(usize),
    /// Exactly 15 ASCII digits.
    Digits15,
    /// 1..=max bytes of `[A-Za-z0-9.-]`.
    Label {
        max: usize,
    },
}

impl IeTag {
    pub const ALL: [IeTag; 10] = [
        IeTag::Supi,
        IeTag::Nonce,
        IeTag::AuthSequence,
        IeTag::AuthResponse,
        IeTag::Cause,
        IeTag::SessionId,
        IeTag::DnName,
        IeTag::QosClass,
        IeTag::UeIp,
        IeTag::SliceId,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        IeTag::ALL.into_iter().find(|t| t.code() == code)
    }

    /// Field name used in the canonical text form.
    pub fn name(self) -> &'static str {
        match self {
            IeTag::Supi => "supi",
            IeTag::Nonce => "nonce",
            IeTag::AuthSequence => "auth_seq",
            IeTag::AuthResponse => "auth_response",
            IeTag::Cause => "cause",
            IeTag::SessionId => "session_id",
            IeTag::DnName => "dn",
            IeTag::QosClass => "qos",
            IeTag::UeIp => "ue_ip",
            IeTag::SliceId => "slice",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        IeTag::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn value_rule(self) -> ValueRule {
        match self {
            IeTag::Supi => ValueRule::Digits15,
            IeTag::Nonce => ValueRule::Fixed(NONCE_LEN),
            IeTag::AuthSequence | IeTag::SessionId | IeTag::UeIp => ValueRule::Fixed(4),
            IeTag::AuthResponse => ValueRule::Fixed(AUTH_RESPONSE_LEN),
            IeTag::Cause | IeTag::QosClass | IeTag::SliceId => ValueRule::Fixed(1),
            IeTag::DnName => ValueRule::Label {
                max: MAX_DN_NAME_LEN,
            },
        }
    }

    fn check_value(self, value: &[u8]) -> Result<(), Malformed> {
        let bad = |reason| Malformed::InvalidValue { tag: self, reason };
        match self.value_rule() {
            ValueRule::Fixed(n) if value.len() != n => Err(bad("wrong length")),
            ValueRule::Fixed(_) => Ok(()),
            ValueRule::Digits15 => {
                if value.len() == 15 && value.iter().all(u8::is_ascii_digit) {
                    Ok(())
                } else {
                    Err(bad("expected 15 decimal digits"))
                }
            }
            ValueRule::Label { max } => {
                if value.is_empty() || value.len() > max {
                    Err(bad("label length out of range"))
                } else if !value
                    .iter()
                    .all(|b| b.is_ascii_alphanumeric() || *b == b'.' || *b == b'-')
                {
                    Err(bad("label has characters outside [A-Za-z0-9.-]"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl fmt::Display for IeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cause values carried in reject messages.
pub mod cause {
    pub const AUTH_FAILURE: u8 = 0x03;
    pub const NOT_REGISTERED: u8 = 0x0A;
    pub const UNKNOWN_DATA_NETWORK: u8 = 0x1B;
    pub const POOL_EXHAUSTED: u8 = 0x1A;
    pub const PROTOCOL_ERROR: u8 = 0x6F;
}

/// Subscriber permanent identifier: exactly 15 decimal digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Supi(String);

impl Supi {
    pub fn new(digits: impl Into<String>) -> Result<Self, NasError> {
        let digits = digits.into();
        if digits.len() == 15 && digits.bytes().all(|b| b.is_ascii_digit()) {
            Ok(Supi(digits))
        } else {
            Err(NasError::InvalidSupi(digits))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The SUPI `n` positions after this one, wrapping within 15 digits.
    pub fn offset(&self, n: u64) -> Supi {
        let base: u64 = self.0.parse().expect("15 digits fit in u64");
        Supi(format!("{:015}", (base + n) % 1_000_000_000_000_000))
    }
}

impl fmt::Display for Supi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Supi {
    type Err = NasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Supi::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ie {
    pub tag: IeTag,
    pub value: Vec<u8>,
}

impl Ie {
    pub fn new(tag: IeTag, value: impl Into<Vec<u8>>) -> Self {
        Ie {
            tag,
            value: value.into(),
        }
    }
}

/// A validated signaling message: mandatory IEs present, tags unique and
/// allowed for the type, values well-shaped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NasMessage {
    message_type: MessageType,
    ies: Vec<Ie>,
}

impl NasMessage {
    pub fn new(message_type: MessageType, ies: Vec<Ie>) -> Result<Self, NasError> {
        let rules = message_type.rules();
        for (i, ie) in ies.iter().enumerate() {
            if ie.value.len() > MAX_LEN {
                return Err(NasError::IeTooLong {
                    tag: ie.tag,
                    len: ie.value.len(),
                });
            }
            if ies[..i].iter().any(|prev| prev.tag == ie.tag) {
                return Err(Malformed::DuplicateIe(ie.tag).into());
            }
            if !rules.allows(ie.tag) {
                return Err(Malformed::UnexpectedIe {
                    message_type,
                    tag: ie.tag,
                }
                .into());
            }
            ie.tag.check_value(&ie.value)?;
        }
        if let Some(&tag) = rules
            .mandatory
            .iter()
            .find(|t| !ies.iter().any(|ie| ie.tag == **t))
        {
            return Err(NasError::MissingMandatoryIe { message_type, tag });
        }
        Ok(NasMessage { message_type, ies })
    }

    pub fn message_type(&self) -> MessageType {
        self.message_type
    }

    pub fn ies(&self) -> &[Ie] {
        &self.ies
    }

    pub fn get(&self, tag: IeTag) -> Option<&[u8]> {
        self.ies
            .iter()
            .find(|ie| ie.tag == tag)
            .map(|ie| ie.value.as_slice())
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .ies
                .iter()
                .map(|ie| IE_HEADER_LEN + ie.value.len())
                .sum::<usize>()
    }

    pub fn encode(&self) -> Result<Vec<u8>, NasError> {
        encode(self)
    }

    pub fn supi(&self) -> Option<Supi> {
        self.get(IeTag::Supi)
            .and_then(|v| std::str::from_utf8(v).ok())
            .and_then(|s| Supi::new(s).ok())
    }

    pub fn nonce(&self) -> Option<[u8; NONCE_LEN]> {
        self.get(IeTag::Nonce).and_then(|v| v.try_into().ok())
    }

    pub fn auth_sequence(&self) -> Option<u32> {
        self.get_u32(IeTag::AuthSequence)
    }

    pub fn auth_response(&self) -> Option<&[u8]> {
        self.get(IeTag::AuthResponse)
    }

    pub fn cause(&self) -> Option<u8> {
        self.get(IeTag::Cause).map(|v| v[0])
    }

    pub fn session_id(&self) -> Option<u32> {
        self.get_u32(IeTag::SessionId)
    }

    pub fn dn_name(&self) -> Option<&str> {
        self.get(IeTag::DnName)
            .and_then(|v| std::str::from_utf8(v).ok())
    }

    pub fn qos_class(&self) -> Option<u8> {
        self.get(IeTag::QosClass).map(|v| v[0])
    }

    pub fn ue_ip(&self) -> Option<Ipv4Addr> {
        self.get_u32(IeTag::UeIp).map(Ipv4Addr::from)
    }

    pub fn slice_id(&self) -> Option<u8> {
        self.get(IeTag::SliceId).map(|v| v[0])
    }

    fn get_u32(&self, tag: IeTag) -> Option<u32> {
        self.get(tag)
            .and_then(|v| v.try_into().ok())
            .map(u32::from_be_bytes)
    }

    // Builders for the messages the core and the simulated UEs exchange.
    // They cannot fail: every value below satisfies its IE's value rule.

    fn build(message_type: MessageType, ies: Vec<Ie>) -> Self {
        NasMessage::new(message_type, ies).expect("builder produces valid IEs")
    }

    pub fn registration_request(supi: &Supi) -> Self {
        Self::build(
            MessageType::RegistrationRequest,
            vec![Ie::new(IeTag::Supi, supi.as_str().as_bytes())],
        )
    }

    pub fn authentication_request(nonce: [u8; NONCE_LEN], sequence: u32) -> Self {
        Self::build(
            MessageType::AuthenticationRequest,
            vec![
                Ie::new(IeTag::Nonce, nonce),
                Ie::new(IeTag::AuthSequence, sequence.to_be_bytes()),
            ],
        )
    }

    pub fn authentication_response(digest: [u8; AUTH_RESPONSE_LEN]) -> Self {
        Self::build(
            MessageType::AuthenticationResponse,
            vec![Ie::new(IeTag::AuthResponse, digest)],
        )
    }

    pub fn registration_accept(slice_id: u8) -> Self {
        Self::build(
            MessageType::RegistrationAccept,
            vec![Ie::new(IeTag::SliceId, [slice_id])],
        )
    }

    pub fn registration_complete() -> Self {
        Self::build(MessageType::RegistrationComplete, Vec::new())
    }

    pub fn registration_reject(cause: u8) -> Self {
        Self::build(
            MessageType::RegistrationReject,
            vec![Ie::new(IeTag::Cause, [cause])],
        )
    }

    pub fn deregistration_request(supi: &Supi) -> Self {
        Self::build(
            MessageType::DeregistrationRequest,
            vec![Ie::new(IeTag::Supi, supi.as_str().as_bytes())],
        )
    }

    /// Fails with `MalformedMessage` when `dn_name` is not a valid label.
    pub fn session_establishment_request(dn_name: &str, qos_class: u8) -> Result<Self, NasError> {
        NasMessage::new(
            MessageType::PduSessionEstablishmentRequest,
            vec![
                Ie::new(IeTag::DnName, dn_name.as_bytes()),
                Ie::new(IeTag::QosClass, [qos_class]),
            ],
        )
    }

    pub fn session_establishment_accept(
        session_id: u32,
        ue_ip: Ipv4Addr,
        qos_class: u8,
        dn_name: &str,
    ) -> Self {
        let mut ies = vec![
            Ie::new(IeTag::SessionId, session_id.to_be_bytes()),
            Ie::new(IeTag::UeIp, ue_ip.octets()),
            Ie::new(IeTag::QosClass, [qos_class]),
        ];
        if IeTag::DnName.check_value(dn_name.as_bytes()).is_ok() {
            ies.push(Ie::new(IeTag::DnName, dn_name.as_bytes()));
        }
        Self::build(MessageType::PduSessionEstablishmentAccept, ies)
    }

    pub fn session_establishment_reject(cause: u8, dn_name: Option<&str>) -> Self {
        let mut ies = vec![Ie::new(IeTag::Cause, [cause])];
        if let Some(dn) = dn_name.filter(|d| IeTag::DnName.check_value(d.as_bytes()).is_ok()) {
            ies.push(Ie::new(IeTag::DnName, dn.as_bytes()));
        }
        Self::build(MessageType::PduSessionEstablishmentReject, ies)
    }

    pub fn session_release_request(session_id: u32) -> Self {
        Self::build(
            MessageType::PduSessionReleaseRequest,
            vec![Ie::new(IeTag::SessionId, session_id.to_be_bytes())],
        )
    }

    pub fn session_release_complete(session_id: u32) -> Self {
        Self::build(
            MessageType::PduSessionReleaseComplete,
            vec![Ie::new(IeTag::SessionId, session_id.to_be_bytes())],
        )
    }
}

pub fn encode(msg: &NasMessage) -> Result<Vec<u8>, NasError> {
    if let Some(ie) = msg.ies.iter().find(|ie| ie.value.len() > MAX_LEN) {
        return Err(NasError::IeTooLong {
            tag: ie.tag,
            len: ie.value.len(),
        });
    }
    let total = msg.encoded_len();
    if total > MAX_LEN {
        return Err(NasError::MessageTooLong(total));
    }
    let mut out = Vec::with_capacity(total);
    out.push(PROTOCOL_DISCRIMINATOR);
    out.push(msg.message_type.code());
    for ie in &msg.ies {
        out.push(ie.tag.code());
        out.extend_from_slice(&(ie.value.len() as u16).to_be_bytes());
        out.extend_from_slice(&ie.value);
    }
    Ok(out)
}

/// Decodes exactly one message occupying the whole of `buf`.
pub fn decode(buf: &[u8]) -> Result<NasMessage, NasError> {
    let message_type = parse_header(buf)?;
    let mut ies = Vec::new();
    let mut pos = HEADER_LEN;
    while pos < buf.len() {
        let (ie, next) = parse_ie(buf, pos)?;
        ies.push(ie);
        pos = next;
    }
    NasMessage::new(message_type, ies)
}

/// Length of the message at the front of `buf`, which may be followed by
/// further messages. IE headers are validated; IE values are not.
pub fn frame_len(buf: &[u8]) -> Result<usize, NasError> {
    parse_header(buf)?;
    let mut pos = HEADER_LEN;
    while pos < buf.len() && buf[pos] != PROTOCOL_DISCRIMINATOR {
        pos = parse_ie(buf, pos)?.1;
    }
    Ok(pos)
}

/// Splits a concatenation of encoded messages and decodes each.
pub fn decode_stream(mut buf: &[u8]) -> Result<Vec<NasMessage>, NasError> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        let n = frame_len(buf)?;
        out.push(decode(&buf[..n])?);
        buf = &buf[n..];
    }
    Ok(out)
}

fn parse_header(buf: &[u8]) -> Result<MessageType, Malformed> {
    match buf {
        [] => Err(Malformed::Empty),
        [_] => Err(Malformed::TruncatedHeader),
        [pd, ..] if *pd != PROTOCOL_DISCRIMINATOR => Err(Malformed::BadDiscriminator(*pd)),
        [_, code, ..] => MessageType::from_code(*code).ok_or(Malformed::UnknownType(*code)),
    }
}

fn parse_ie(buf: &[u8], pos: usize) -> Result<(Ie, usize), Malformed> {
    let header = buf
        .get(pos..pos + IE_HEADER_LEN)
        .ok_or(Malformed::TruncatedIe(pos))?;
    let declared = u16::from_be_bytes([header[1], header[2]]) as usize;
    let start = pos + IE_HEADER_LEN;
    let remaining = buf.len() - start;
    if declared > remaining {
        return Err(Malformed::LengthOverrun {
            offset: pos,
            declared,
            remaining,
        });
    }
    let tag = IeTag::from_code(header[0]).ok_or(Malformed::UnknownTag(header[0]))?;
    let value = buf[start..start + declared].to_vec();
    Ok((Ie { tag, value }, start + declared))
}

// Canonical text form: `TypeName{field=value, ...}` with IEs in wire order.

impl fmt::Display for NasMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{{", self.message_type)?;
        for (i, ie) in self.ies.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}=", ie.tag)?;
            let v = &ie.value;
            match ie.tag {
                IeTag::Supi | IeTag::DnName => write!(f, "\"{}\"", String::from_utf8_lossy(v))?,
                IeTag::Nonce | IeTag::AuthResponse => f.write_str(&hex::encode(v))?,
                IeTag::AuthSequence | IeTag::SessionId => {
                    write!(f, "{}", u32::from_be_bytes([v[0], v[1], v[2], v[3]]))?
                }
                IeTag::UeIp => write!(f, "{}", Ipv4Addr::new(v[0], v[1], v[2], v[3]))?,
                IeTag::Cause | IeTag::QosClass | IeTag::SliceId => write!(f, "{}", v[0])?,
            }
        }
        f.write_str("}")
    }
}

impl FromStr for NasMessage {
    type Err = NasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = |m: &str| NasError::Syntax(m.to_string());
        let s = s.trim();
        let open = s.find('{').ok_or_else(|| syntax("missing '{'"))?;
        let body = s[open + 1..]
            .strip_suffix('}')
            .ok_or_else(|| syntax("missing closing '}'"))?;
        let message_type: MessageType = s[..open].parse()?;
        let mut ies = Vec::new();
        for field in body.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            let (name, raw) = field
                .split_once('=')
                .ok_or_else(|| syntax("field without '='"))?;
            let tag = IeTag::from_name(name.trim())
                .ok_or_else(|| NasError::Syntax(format!("unknown field {name:?}")))?;
            ies.push(Ie::new(tag, parse_field(tag, raw.trim())?));
        }
        NasMessage::new(message_type, ies)
    }
}

fn parse_field(tag: IeTag, raw: &str) -> Result<Vec<u8>, NasError> {
    let bad = || NasError::Syntax(format!("bad value {raw:?} for {tag}"));
    Ok(match tag {
        IeTag::Supi | IeTag::DnName => raw
            .strip_prefix('"')
            .and_then(|r| r.strip_suffix('"'))
            .ok_or_else(bad)?
            .as_bytes()
            .to_vec(),
        IeTag::Nonce | IeTag::AuthResponse => hex::decode(raw).map_err(|_| bad())?,
        IeTag::AuthSequence | IeTag::SessionId => raw
            .parse::<u32>()
            .map_err(|_| bad())?
            .to_be_bytes()
            .to_vec(),
        IeTag::UeIp => raw
            .parse::<Ipv4Addr>()
            .map_err(|_| bad())?
            .octets()
            .to_vec(),
        IeTag::Cause | IeTag::QosClass | IeTag::SliceId => {
            vec![raw.parse::<u8>().map_err(|_| bad())?]
        }
    })
}

/// One line of a conformance-vector file: `hex<TAB>canonical text`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConformanceVector {
    pub line: usize,
    pub bytes: Vec<u8>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorFailure {
    pub line: usize,
    pub reason: String,
}

/// Parses a vector file. Blank lines and lines starting with `#` are skipped.
pub fn parse_vectors(content: &str) -> Result<Vec<ConformanceVector>, VectorFailure> {
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim_end();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fail = |reason: String| VectorFailure {
            line: line_no,
            reason,
        };
        let (hex_part, text) = trimmed
            .split_once('\t')
            .ok_or_else(|| fail("expected hex<TAB>text".into()))?;
        let bytes =
            hex::decode(hex_part.replace(' ', "")).map_err(|e| fail(format!("bad hex: {e}")))?;
        out.push(ConformanceVector {
            line: line_no,
            bytes,
            text: text.to_string(),
        });
    }
    Ok(out)
}

impl ConformanceVector {
    /// Checks decode, canonical text, encode and text parse, all bit-exact.
    pub fn check(&self) -> Result<(), VectorFailure> {
        let fail = |reason: String| VectorFailure {
            line: self.line,
            reason,
        };
        let msg = decode(&self.bytes).map_err(|e| fail(format!("decode: {e}")))?;
        let text = msg.to_string();
        if text != self.text {
            return Err(fail(format!("text mismatch: got {text}")));
        }
        let bytes = encode(&msg).map_err(|e| fail(format!("encode: {e}")))?;
        if bytes != self.bytes {
            return Err(fail(format!(
                "re-encode mismatch: got {}",
                hex::encode(bytes)
            )));
        }
        let parsed: NasMessage = self
            .text
            .parse()
            .map_err(|e| fail(format!("text parse: {e}")))?;
        if parsed != msg {
            return Err(fail("text parses to a different message".into()));
        }
        Ok(())
    }
}
