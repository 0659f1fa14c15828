//! The additive scheme the protocol runs over: Paillier for real runs, or an
//! identity "plain mode" used to measure the protocol without encryption.

use std::fmt::Debug;

use rand::RngCore;

use crate::error::HeError;
use crate::he::{Ciphertext, PrivateKey, PublicKey};

mod sealed {
    pub trait Sealed {}
    impl Sealed for crate::he::Ciphertext {}
    impl Sealed for f64 {}
}

/// Values allowed inside protocol message payloads. Sealed: only ciphertexts
/// and plain-mode `f64` stand-ins qualify, so key material can never be placed
/// in a message.
pub trait WireValue: sealed::Sealed + Clone + Debug + Send + Sync {}

impl WireValue for Ciphertext {}
impl WireValue for f64 {}

pub trait Scheme: Clone + Send + Sync {
    type Cipher: WireValue;
    /// Decryption capability. Only the arbiter ever holds one.
    type Secret;

    fn encrypt<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R) -> Result<Self::Cipher, HeError>;
    fn add(&self, a: &Self::Cipher, b: &Self::Cipher) -> Result<Self::Cipher, HeError>;
    fn scalar_mul(&self, c: &Self::Cipher, s: f64) -> Result<Self::Cipher, HeError>;
    fn decrypt(&self, secret: &Self::Secret, c: &Self::Cipher) -> Result<f64, HeError>;
    /// Trivial encryption of zero; no randomness, no encryption cost.
    fn zero(&self) -> Self::Cipher;

    fn dot_plain(&self, cs: &[Self::Cipher], scalars: &[f64]) -> Result<Self::Cipher, HeError> {
        let mut acc = self.zero();
        for (c, &s) in cs.iter().zip(scalars) {
            acc = self.add(&acc, &self.scalar_mul(c, s)?)?;
        }
        Ok(acc)
    }

    /// Serialized width of one ciphertext in bytes.
    fn cipher_bytes(&self) -> usize;
    fn write_cipher(&self, c: &Self::Cipher, out: &mut Vec<u8>);
    fn is_encrypted(&self) -> bool;
    /// Modulus size in bits, 0 for plain mode.
    fn key_bits(&self) -> usize;
}

impl Scheme for PublicKey {
    type Cipher = Ciphertext;
    type Secret = PrivateKey;

    fn encrypt<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R) -> Result<Ciphertext, HeError> {
        PublicKey::encrypt(self, x, rng)
    }

    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        PublicKey::add(self, a, b)
    }

    fn scalar_mul(&self, c: &Ciphertext, s: f64) -> Result<Ciphertext, HeError> {
        PublicKey::scalar_mul(self, c, s)
    }

    fn decrypt(&self, secret: &PrivateKey, c: &Ciphertext) -> Result<f64, HeError> {
        secret.decrypt(c)
    }

    fn zero(&self) -> Ciphertext {
        PublicKey::zero(self)
    }

    fn dot_plain(&self, cs: &[Ciphertext], scalars: &[f64]) -> Result<Ciphertext, HeError> {
        PublicKey::dot_plain(self, cs, scalars)
    }

    fn cipher_bytes(&self) -> usize {
        self.ciphertext_bytes()
    }

    fn write_cipher(&self, c: &Ciphertext, out: &mut Vec<u8>) {
        self.write_ciphertext(c, out)
    }

    fn is_encrypted(&self) -> bool {
        true
    }

    fn key_bits(&self) -> usize {
        PublicKey::key_bits(self)
    }
}

/// Plaintext stand-in: values travel as raw `f64` (8 bytes on the wire).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PlainScheme;

impl Scheme for PlainScheme {
    type Cipher = f64;
    type Secret = ();

    fn encrypt<R: RngCore + ?Sized>(&self, x: f64, _rng: &mut R) -> Result<f64, HeError> {
        if x.is_finite() {
            Ok(x)
        } else {
            Err(HeError::NonFinite(x))
        }
    }

    fn add(&self, a: &f64, b: &f64) -> Result<f64, HeError> {
        Ok(a + b)
    }

    fn scalar_mul(&self, c: &f64, s: f64) -> Result<f64, HeError> {
        Ok(c * s)
    }

    fn decrypt(&self, _secret: &(), c: &f64) -> Result<f64, HeError> {
        Ok(*c)
    }

    fn zero(&self) -> f64 {
        0.0
    }

    fn cipher_bytes(&self) -> usize {
        8
    }

    fn write_cipher(&self, c: &f64, out: &mut Vec<u8>) {
        out.extend_from_slice(&c.to_be_bytes());
    }

    fn is_encrypted(&self) -> bool {
        false
    }

    fn key_bits(&self) -> usize {
        0
    }
}
