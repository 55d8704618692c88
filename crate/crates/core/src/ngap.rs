//! N2-like transport framing between gNB and AMF.
//!
//! ```text
//! procedure(1) | gnb_id(4, BE) | ue_ran_id(4, BE) | payload_len(2, BE) | NAS payload
//! ```

use thiserror::Error;

pub const ENVELOPE_HEADER_LEN: usize = 11;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NgapError {
    #[error("envelope truncated: {0} bytes")]
    Truncated(usize),
    #[error("unknown procedure code 0x{0:02X}")]
    UnknownProcedure(u8),
    #[error("declared payload length {declared} does not match {actual} remaining bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("NAS payload of {0} bytes does not fit a 16-bit length")]
    PayloadTooLong(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum NgapProcedure {
    InitialUeMessage = 0x01,
    DownlinkNasTransport = 0x02,
    UplinkNasTransport = 0x03,
    InitialContextSetup = 0x04,
}

impl NgapProcedure {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(NgapProcedure::InitialUeMessage),
            0x02 => Some(NgapProcedure::DownlinkNasTransport),
            0x03 => Some(NgapProcedure::UplinkNasTransport),
            0x04 => Some(NgapProcedure::InitialContextSetup),
            _ => None,
        }
    }

    pub fn is_uplink(self) -> bool {
        matches!(
            self,
            NgapProcedure::InitialUeMessage | NgapProcedure::UplinkNasTransport
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgapEnvelope {
    pub procedure: NgapProcedure,
    pub gnb_id: u32,
    pub ue_ran_id: u32,
    pub nas_payload: Vec<u8>,
}

impl NgapEnvelope {
    pub fn encoded_len(&self) -> usize {
        ENVELOPE_HEADER_LEN + self.nas_payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, NgapError> {
        let len = u16::try_from(self.nas_payload.len())
            .map_err(|_| NgapError::PayloadTooLong(self.nas_payload.len()))?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.procedure as u8);
        out.extend_from_slice(&self.gnb_id.to_be_bytes());
        out.extend_from_slice(&self.ue_ran_id.to_be_bytes());
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(&self.nas_payload);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, NgapError> {
        if buf.len() < ENVELOPE_HEADER_LEN {
            return Err(NgapError::Truncated(buf.len()));
        }
        let procedure =
            NgapProcedure::from_code(buf[0]).ok_or(NgapError::UnknownProcedure(buf[0]))?;
        let gnb_id = u32::from_be_bytes(buf[1..5].try_into().unwrap());
        let ue_ran_id = u32::from_be_bytes(buf[5..9].try_into().unwrap());
        let declared = u16::from_be_bytes([buf[9], buf[10]]) as usize;
        let actual = buf.len() - ENVELOPE_HEADER_LEN;
        if declared != actual {
            return Err(NgapError::LengthMismatch { declared, actual });
        }
        Ok(NgapEnvelope {
            procedure,
            gnb_id,
            ue_ran_id,
            nas_payload: buf[ENVELOPE_HEADER_LEN..].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_layout() {
        let env = NgapEnvelope {
            procedure: NgapProcedure::UplinkNasTransport,
            gnb_id: 0x0102_0304,
            ue_ran_id: 7,
            nas_payload: vec![0x7E, 0x45],
        };
        let bytes = env.encode().unwrap();
        assert_eq!(bytes, vec![0x03, 1, 2, 3, 4, 0, 0, 0, 7, 0, 2, 0x7E, 0x45]);
        assert_eq!(NgapEnvelope::decode(&bytes).unwrap(), env);
    }

    #[test]
    fn rejects_bad_frames() {
        assert_eq!(NgapEnvelope::decode(&[1, 2]), Err(NgapError::Truncated(2)));
        assert_eq!(
            NgapEnvelope::decode(&[9, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]),
            Err(NgapError::UnknownProcedure(9))
        );
        assert_eq!(
            NgapEnvelope::decode(&[1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 3, 0x7E]),
            Err(NgapError::LengthMismatch {
                declared: 3,
                actual: 1
            })
        );
    }
}
