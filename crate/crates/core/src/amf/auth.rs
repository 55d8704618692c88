//! Challenge-response digest shared by the AMF and simulated UEs.

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use crate::nas::{AUTH_RESPONSE_LEN, NONCE_LEN};

type HmacSha256 = Hmac<Sha256>;

/// HMAC-SHA-256 of `challenge` under `key`.
///
/// The AMF feeds it the challenge bytes from [`challenge_bytes`], so a
/// response is bound to both the nonce and the subscriber's sequence number.
pub fn compute_auth_response(key: &[u8], challenge: &[u8]) -> [u8; AUTH_RESPONSE_LEN] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts keys of any length");
    mac.update(challenge);
    mac.finalize().into_bytes().into()
}

/// `nonce ‖ sequence (big-endian)`.
pub fn challenge_bytes(nonce: &[u8; NONCE_LEN], sequence: u32) -> [u8; NONCE_LEN + 4] {
    let mut out = [0u8; NONCE_LEN + 4];
    out[..NONCE_LEN].copy_from_slice(nonce);
    out[NONCE_LEN..].copy_from_slice(&sequence.to_be_bytes());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = compute_auth_response(b"k", b"nonce");
        assert_eq!(a, compute_auth_response(b"k", b"nonce"));
        assert_ne!(a, compute_auth_response(b"K", b"nonce"));
    }

    #[test]
    fn rfc4231_case_2() {
        let digest = compute_auth_response(b"Jefe", b"what do ya want for nothing?");
        assert_eq!(
            hex::encode(digest),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
        );
    }

    #[test]
    fn single_bit_flip_changes_digest() {
        let key = [0x11u8; 16];
        let nonce = [0xA5u8; NONCE_LEN];
        let base = compute_auth_response(&key, &challenge_bytes(&nonce, 1));
        for byte in 0..NONCE_LEN {
            for bit in 0..8 {
                let mut flipped = nonce;
                flipped[byte] ^= 1 << bit;
                let d = compute_auth_response(&key, &challenge_bytes(&flipped, 1));
                assert_ne!(d, base);
                let differing: u32 = d
                    .iter()
                    .zip(base.iter())
                    .map(|(a, b)| (a ^ b).count_ones())
                    .sum();
                // 256-bit output, about half the bits should move.
                assert!((64..=192).contains(&differing), "{differing}");
            }
        }
        assert_ne!(
            base,
            compute_auth_response(&key, &challenge_bytes(&nonce, 2))
        );
    }
}
