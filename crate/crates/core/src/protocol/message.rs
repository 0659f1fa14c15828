//! Typed protocol messages and their byte encoding.
//!
//! Every message is sized from its actual serialization: a 13-byte header
//! (`kind u8 | src u32 | dst u32 | iteration u32`, big-endian) followed by the
//! payload. Ciphertexts use the scheme's fixed-width encoding.
//!
//! Payloads are generic over [`WireValue`], which only ciphertexts implement,
//! so private key material cannot be put on the wire:
//!
//! ```compile_fail
//! use vfl_core::he::PrivateKey;
//! use vfl_core::protocol::ResidualShare;
//!
//! fn leak(sk: PrivateKey) -> ResidualShare<PrivateKey> {
//!     unimplemented!()
//! }
//! ```

use serde::{Deserialize, Serialize};

use super::PartyId;
use crate::enc_linalg::CipherVector;
use crate::scheme::{Scheme, WireValue};

const HEADER_BYTES: usize = 13;

/// A host's encrypted scores for one batch.
#[derive(Clone, Debug)]
pub struct ForwardShare<C: WireValue> {
    pub party: PartyId,
    pub iteration: u32,
    /// Index of the batch in the shared schedule.
    pub batch: u32,
    /// `[[u_i]]`, `u_i = theta . x_i`.
    pub u_enc: CipherVector<C>,
    /// `[[sum_i u_i^2]]`, used by the loss.
    pub u_sq_enc: C,
    /// `[[||theta||^2]]`.
    pub theta_sq_enc: C,
}

#[derive(Clone, Debug)]
pub struct ResidualShare<C: WireValue> {
    pub iteration: u32,
    pub d_enc: CipherVector<C>,
}

/// Encrypted loss split into host, guest and cross terms.
#[derive(Clone, Debug)]
pub struct LossParts<C: WireValue> {
    pub iteration: u32,
    pub l_a: C,
    pub l_b: C,
    pub l_ab: C,
    pub l: C,
}

#[derive(Clone, Debug)]
pub struct GradientMessage<C: WireValue> {
    pub party: PartyId,
    pub iteration: u32,
    pub g_enc: CipherVector<C>,
}

/// Plain gradient returned by the arbiter to the party it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecryptedGradient {
    pub party: PartyId,
    pub iteration: u32,
    pub g: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Forward,
    Residual,
    Loss,
    Gradient,
    Decrypted,
}

impl MessageKind {
    fn tag(self) -> u8 {
        match self {
            MessageKind::Forward => 1,
            MessageKind::Residual => 2,
            MessageKind::Loss => 3,
            MessageKind::Gradient => 4,
            MessageKind::Decrypted => 5,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Payload<C: WireValue> {
    Forward(ForwardShare<C>),
    Residual(ResidualShare<C>),
    Loss(LossParts<C>),
    Gradient(GradientMessage<C>),
    Decrypted(DecryptedGradient),
}

impl<C: WireValue> Payload<C> {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Forward(_) => MessageKind::Forward,
            Payload::Residual(_) => MessageKind::Residual,
            Payload::Loss(_) => MessageKind::Loss,
            Payload::Gradient(_) => MessageKind::Gradient,
            Payload::Decrypted(_) => MessageKind::Decrypted,
        }
    }

    pub fn iteration(&self) -> u32 {
        match self {
            Payload::Forward(m) => m.iteration,
            Payload::Residual(m) => m.iteration,
            Payload::Loss(m) => m.iteration,
            Payload::Gradient(m) => m.iteration,
            Payload::Decrypted(m) => m.iteration,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProtocolMessage<C: WireValue> {
    pub src: PartyId,
    pub dst: PartyId,
    pub payload: Payload<C>,
}

impl<C: WireValue> ProtocolMessage<C> {
    pub fn new(src: PartyId, dst: PartyId, payload: Payload<C>) -> Self {
        ProtocolMessage { src, dst, payload }
    }

    /// Serialized length in bytes; always equal to `encode(..).len()`.
    pub fn wire_len<S: Scheme<Cipher = C>>(&self, scheme: &S) -> usize {
        let c = scheme.cipher_bytes();
        let body = match &self.payload {
            Payload::Forward(m) => 4 + 4 + (m.u_enc.len() + 2) * c,
            Payload::Residual(m) => 4 + m.d_enc.len() * c,
            Payload::Loss(_) => 4 * c,
            Payload::Gradient(m) => 4 + m.g_enc.len() * c,
            Payload::Decrypted(m) => 4 + 8 * m.g.len(),
        };
        HEADER_BYTES + body
    }

    pub fn encode<S: Scheme<Cipher = C>>(&self, scheme: &S) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len(scheme));
        out.push(self.payload.kind().tag());
        out.extend_from_slice(&self.src.0.to_be_bytes());
        out.extend_from_slice(&self.dst.0.to_be_bytes());
        out.extend_from_slice(&self.payload.iteration().to_be_bytes());
        let put_vec = |out: &mut Vec<u8>, v: &CipherVector<C>| {
            out.extend_from_slice(&(v.len() as u32).to_be_bytes());
            for c in v.iter() {
                scheme.write_cipher(c, out);
            }
        };
        match &self.payload {
            Payload::Forward(m) => {
                out.extend_from_slice(&m.batch.to_be_bytes());
                put_vec(&mut out, &m.u_enc);
                scheme.write_cipher(&m.u_sq_enc, &mut out);
                scheme.write_cipher(&m.theta_sq_enc, &mut out);
            }
            Payload::Residual(m) => put_vec(&mut out, &m.d_enc),
            Payload::Loss(m) => {
                for c in [&m.l_a, &m.l_b, &m.l_ab, &m.l] {
                    scheme.write_cipher(c, &mut out);
                }
            }
            Payload::Gradient(m) => put_vec(&mut out, &m.g_enc),
            Payload::Decrypted(m) => {
                out.extend_from_slice(&(m.g.len() as u32).to_be_bytes());
                for v in &m.g {
                    out.extend_from_slice(&v.to_be_bytes());
                }
            }
        }
        out
    }
}
