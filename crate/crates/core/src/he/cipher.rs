use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::RngCore;

use super::encoding::EncodedNumber;
use super::keys::{mod_inverse, PrivateKey, PublicKey};
use crate::error::HeError;

/// Paillier ciphertext tagged with the fixed-point exponent of its plaintext.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    pub(crate) value: BigUint,
    pub(crate) exponent: i32,
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }
}

/// `(1 + n*m) * r^n mod n^2`.
pub(crate) fn raw_encrypt(pk: &PublicKey, m: &BigUint, r: &BigUint) -> BigUint {
    let nude = (&pk.n * m + 1u32) % &pk.n_squared;
    let obfuscator = r.modpow(&pk.n, &pk.n_squared);
    (nude * obfuscator) % &pk.n_squared
}

impl PublicKey {
    /// Width of a serialized ciphertext: the value in `ceil(2*key_bits/8)`
    /// big-endian bytes followed by a big-endian `i32` exponent.
    pub fn ciphertext_bytes(&self) -> usize {
        (2 * self.key_bits).div_ceil(8) + 4
    }

    pub fn encrypt<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R) -> Result<Ciphertext, HeError> {
        let encoded = self.encode(x)?;
        Ok(self.encrypt_encoded(&encoded, rng))
    }

    pub fn encrypt_encoded<R: RngCore + ?Sized>(
        &self,
        encoded: &EncodedNumber,
        rng: &mut R,
    ) -> Ciphertext {
        let r = self.random_nonce(rng);
        Ciphertext {
            value: raw_encrypt(self, &encoded.mantissa, &r),
            exponent: encoded.exponent,
        }
    }

    /// Deterministic encryption of zero (nonce 1) at exponent 0.
    pub fn zero(&self) -> Ciphertext {
        Ciphertext {
            value: BigUint::one(),
            exponent: 0,
        }
    }

    /// `c^k mod n^2` for a plaintext scalar `k` already reduced mod n. Scalars in
    /// the negative range are applied through the modular inverse so the
    /// exponent stays short.
    fn raw_mul(&self, c: &BigUint, k: &BigUint) -> BigUint {
        if k >= &(&self.n - &self.max_int) {
            let inv = mod_inverse(c, &self.n_squared);
            inv.modpow(&(&self.n - k), &self.n_squared)
        } else {
            c.modpow(k, &self.n_squared)
        }
    }

    pub fn rescale(&self, c: &Ciphertext, new_exponent: i32) -> Result<Ciphertext, HeError> {
        if new_exponent == c.exponent {
            return Ok(c.clone());
        }
        let factor = self.rescale_factor(c.exponent, new_exponent)?;
        Ok(Ciphertext {
            value: c.value.modpow(&factor, &self.n_squared),
            exponent: new_exponent,
        })
    }

    /// Homomorphic addition; the operand with the larger exponent is rescaled
    /// down to the smaller one first.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        let exponent = a.exponent.min(b.exponent);
        let a = self.rescale(a, exponent)?;
        let b = self.rescale(b, exponent)?;
        Ok(Ciphertext {
            value: (&a.value * &b.value) % &self.n_squared,
            exponent,
        })
    }

    pub fn scalar_mul(&self, c: &Ciphertext, s: f64) -> Result<Ciphertext, HeError> {
        let k = self.encode(s)?;
        Ok(Ciphertext {
            value: self.raw_mul(&c.value, &k.mantissa),
            exponent: c.exponent + k.exponent,
        })
    }

    /// `sum_i c_i * s_i` as a single ciphertext. Equivalent to folding
    /// [`scalar_mul`](Self::scalar_mul) and [`add`](Self::add), but every term is
    /// rescaled inside its own exponentiation and negative terms share one
    /// inversion at the end.
    pub fn dot_plain(&self, cs: &[Ciphertext], scalars: &[f64]) -> Result<Ciphertext, HeError> {
        assert_eq!(cs.len(), scalars.len());
        let encoded = scalars
            .iter()
            .map(|&s| self.encode(s))
            .collect::<Result<Vec<_>, _>>()?;
        let target = cs
            .iter()
            .zip(&encoded)
            .map(|(c, k)| c.exponent + k.exponent)
            .min()
            .unwrap_or(0);
        let neg_threshold = &self.n - &self.max_int;
        let mut positive = BigUint::one();
        let mut negative = BigUint::one();
        let mut any_negative = false;
        for (c, k) in cs.iter().zip(&encoded) {
            if k.mantissa.is_zero() {
                continue;
            }
            let (is_neg, magnitude) = if k.mantissa >= neg_threshold {
                (true, &self.n - &k.mantissa)
            } else {
                (false, k.mantissa.clone())
            };
            let factor = self.rescale_factor(c.exponent + k.exponent, target)?;
            let term = c.value.modpow(&(magnitude * factor), &self.n_squared);
            if is_neg {
                negative = (negative * term) % &self.n_squared;
                any_negative = true;
            } else {
                positive = (positive * term) % &self.n_squared;
            }
        }
        let value = if any_negative {
            (positive * mod_inverse(&negative, &self.n_squared)) % &self.n_squared
        } else {
            positive
        };
        Ok(Ciphertext {
            value,
            exponent: target,
        })
    }

    pub fn serialize(&self, c: &Ciphertext) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.ciphertext_bytes());
        self.write_ciphertext(c, &mut out);
        out
    }

    pub fn write_ciphertext(&self, c: &Ciphertext, out: &mut Vec<u8>) {
        let width = self.ciphertext_bytes() - 4;
        let bytes = c.value.to_bytes_be();
        debug_assert!(bytes.len() <= width);
        out.extend(std::iter::repeat(0u8).take(width - bytes.len()));
        out.extend_from_slice(&bytes);
        out.extend_from_slice(&c.exponent.to_be_bytes());
    }

    pub fn deserialize(&self, bytes: &[u8]) -> Result<Ciphertext, HeError> {
        let expected = self.ciphertext_bytes();
        if bytes.len() != expected {
            return Err(HeError::LengthMismatch {
                expected,
                actual: bytes.len(),
            });
        }
        let (value, exponent) = bytes.split_at(expected - 4);
        let value = BigUint::from_bytes_be(value);
        if value.is_zero() || value >= self.n_squared {
            return Err(HeError::InvalidCiphertext);
        }
        let exponent = i32::from_be_bytes(exponent.try_into().expect("4 bytes"));
        Ok(Ciphertext { value, exponent })
    }
}

impl PrivateKey {
    pub fn decrypt_encoded(&self, c: &Ciphertext) -> EncodedNumber {
        EncodedNumber {
            mantissa: self.decrypt_raw(&c.value),
            exponent: c.exponent,
        }
    }

    /// Decrypts and decodes. A ciphertext from a different key decrypts to an
    /// arbitrary value (or an overflow error); nothing detects the mismatch.
    pub fn decrypt(&self, c: &Ciphertext) -> Result<f64, HeError> {
        self.public_key().decode(&self.decrypt_encoded(c))
    }
}
