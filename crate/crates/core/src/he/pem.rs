//! PEM-style text blocks for key export.
//!
//! The public block carries `u32 key_bits || n` (big-endian). The private block
//! carries `u32 key_bits || u32 len(p) || p || q` and can only be written by
//! passing a [`PrivateExport`] token.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use num_bigint::BigUint;

use super::keys::{PrivateKey, PublicKey};
use crate::error::HeError;

const PUBLIC_LABEL: &str = "PAILLIER PUBLIC KEY";
const PRIVATE_LABEL: &str = "PAILLIER PRIVATE KEY";

/// Explicit opt-in for writing private key material to text.
pub struct PrivateExport(());

impl PrivateExport {
    pub fn acknowledge_unsafe() -> Self {
        PrivateExport(())
    }
}

fn wrap(label: &str, payload: &[u8]) -> String {
    let encoded = STANDARD.encode(payload);
    let mut out = format!("-----BEGIN {label}-----\n");
    for chunk in encoded.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(chunk).expect("base64 is ascii"));
        out.push('\n');
    }
    out.push_str(&format!("-----END {label}-----\n"));
    out
}

fn unwrap_block(label: &str, text: &str) -> Result<Vec<u8>, HeError> {
    let begin = format!("-----BEGIN {label}-----");
    let end = format!("-----END {label}-----");
    let start = text
        .find(&begin)
        .ok_or_else(|| HeError::MalformedKey(format!("missing {begin}")))?;
    let rest = &text[start + begin.len()..];
    let stop = rest
        .find(&end)
        .ok_or_else(|| HeError::MalformedKey(format!("missing {end}")))?;
    let body: String = rest[..stop].split_whitespace().collect();
    STANDARD
        .decode(body)
        .map_err(|e| HeError::MalformedKey(e.to_string()))
}

impl PublicKey {
    pub fn to_pem(&self) -> String {
        let mut payload = (self.key_bits as u32).to_be_bytes().to_vec();
        payload.extend(self.n.to_bytes_be());
        wrap(PUBLIC_LABEL, &payload)
    }

    pub fn from_pem(text: &str) -> Result<Self, HeError> {
        let payload = unwrap_block(PUBLIC_LABEL, text)?;
        if payload.len() < 5 {
            return Err(HeError::MalformedKey("truncated public key".into()));
        }
        let bits = u32::from_be_bytes(payload[..4].try_into().expect("4 bytes")) as usize;
        let n = BigUint::from_bytes_be(&payload[4..]);
        if n.bits() as usize != bits {
            return Err(HeError::MalformedKey(format!(
                "modulus has {} bits, header says {bits}",
                n.bits()
            )));
        }
        Ok(PublicKey::from_modulus(n))
    }
}

impl PrivateKey {
    pub fn to_pem(&self, _allow: PrivateExport) -> String {
        let (p, q) = self.primes();
        let p_bytes = p.to_bytes_be();
        let mut payload = (self.public_key().key_bits() as u32).to_be_bytes().to_vec();
        payload.extend((p_bytes.len() as u32).to_be_bytes());
        payload.extend(p_bytes);
        payload.extend(q.to_bytes_be());
        wrap(PRIVATE_LABEL, &payload)
    }

    pub fn from_pem(text: &str) -> Result<Self, HeError> {
        let payload = unwrap_block(PRIVATE_LABEL, text)?;
        if payload.len() < 9 {
            return Err(HeError::MalformedKey("truncated private key".into()));
        }
        let bits = u32::from_be_bytes(payload[..4].try_into().expect("4 bytes")) as usize;
        let p_len = u32::from_be_bytes(payload[4..8].try_into().expect("4 bytes")) as usize;
        if payload.len() <= 8 + p_len {
            return Err(HeError::MalformedKey("truncated private key".into()));
        }
        let p = BigUint::from_bytes_be(&payload[8..8 + p_len]);
        let q = BigUint::from_bytes_be(&payload[8 + p_len..]);
        let key = PrivateKey::from_primes(p, q);
        if key.public_key().key_bits() != bits {
            return Err(HeError::MalformedKey(format!(
                "modulus has {} bits, header says {bits}",
                key.public_key().key_bits()
            )));
        }
        Ok(key)
    }
}
