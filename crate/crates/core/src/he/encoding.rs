//! Fixed-point encoding of reals into the Paillier plaintext space.
//!
//! A real `x` is stored as `mantissa * 16^exponent`. Mantissas in `[0, max_int]`
//! are non-negative, mantissas in `[n - max_int, n)` encode negatives as
//! `n - |mantissa|`, and anything in between is an overflow.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};

use super::keys::PublicKey;
use crate::error::HeError;

pub const BASE: u32 = 16;
pub const LOG2_BASE: i32 = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedNumber {
    pub(crate) mantissa: BigUint,
    pub(crate) exponent: i32,
}

impl EncodedNumber {
    pub fn mantissa(&self) -> &BigUint {
        &self.mantissa
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }
}

/// Splits a finite double into `(negative, m, e)` with `|x| = m * 2^e`.
fn decompose(x: f64) -> (bool, u64, i32) {
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let biased = ((bits >> 52) & 0x7ff) as i32;
    let fraction = bits & ((1u64 << 52) - 1);
    if biased == 0 {
        (negative, fraction, -1074)
    } else {
        (negative, fraction | (1u64 << 52), biased - 1075)
    }
}

/// `x * 2^e` without intermediate overflow or underflow.
pub(crate) fn ldexp(mut x: f64, mut e: i64) -> f64 {
    let up = 2f64.powi(1000);
    let down = 2f64.powi(-1000);
    while e > 1000 {
        x *= up;
        e -= 1000;
        if x.is_infinite() {
            return x;
        }
    }
    while e < -1000 {
        x *= down;
        e += 1000;
        if x == 0.0 {
            return x;
        }
    }
    x * 2f64.powi(e as i32)
}

/// Correctly rounded `mag * 2^exp2`.
pub(crate) fn biguint_to_f64_scaled(mag: &BigUint, exp2: i64) -> f64 {
    let bits = mag.bits();
    if bits <= 64 {
        return ldexp(mag.to_u64().unwrap_or(0) as f64, exp2);
    }
    let shift = bits - 64;
    let mut top = (mag >> shift).to_u64().expect("64 bits");
    let sticky = mag.trailing_zeros().map_or(false, |tz| tz < shift);
    if sticky {
        top |= 1;
    }
    ldexp(top as f64, exp2 + shift as i64)
}

impl PublicKey {
    fn wrap_signed(&self, negative: bool, magnitude: BigUint) -> Result<BigUint, HeError> {
        if magnitude > self.max_int {
            return Err(HeError::Overflow);
        }
        if negative && !magnitude.is_zero() {
            Ok(&self.n - magnitude)
        } else {
            Ok(magnitude)
        }
    }

    /// Exact encoding at the finest exponent that keeps the full 53-bit significand.
    pub fn encode(&self, x: f64) -> Result<EncodedNumber, HeError> {
        if !x.is_finite() {
            return Err(HeError::NonFinite(x));
        }
        if x == 0.0 {
            return Ok(EncodedNumber {
                mantissa: BigUint::zero(),
                exponent: 0,
            });
        }
        let (negative, m, e2) = decompose(x);
        let exponent = e2.div_euclid(LOG2_BASE);
        let shift = (e2 - exponent * LOG2_BASE) as u32;
        let magnitude = BigUint::from(m) << shift;
        Ok(EncodedNumber {
            mantissa: self.wrap_signed(negative, magnitude)?,
            exponent,
        })
    }

    /// Encodes at a fixed `exponent`, rounding half away from zero when the
    /// value has bits below `16^exponent`.
    pub fn encode_with_exponent(&self, x: f64, exponent: i32) -> Result<EncodedNumber, HeError> {
        if !x.is_finite() {
            return Err(HeError::NonFinite(x));
        }
        if x == 0.0 {
            return Ok(EncodedNumber {
                mantissa: BigUint::zero(),
                exponent,
            });
        }
        let (negative, m, e2) = decompose(x);
        let shift = e2 as i64 - exponent as i64 * LOG2_BASE as i64;
        let magnitude = if shift >= 0 {
            if shift as u64 > self.key_bits as u64 {
                return Err(HeError::Overflow);
            }
            BigUint::from(m) << shift as u64
        } else {
            let down = (-shift) as u64;
            if down > 64 {
                BigUint::zero()
            } else {
                let m = m as u128;
                let rounded = (m + (1u128 << (down - 1))) >> down;
                BigUint::from(rounded)
            }
        };
        Ok(EncodedNumber {
            mantissa: self.wrap_signed(negative, magnitude)?,
            exponent,
        })
    }

    /// Signed interpretation of a mantissa, or overflow if it lies in the
    /// forbidden middle band.
    pub(crate) fn signed_mantissa(&self, mantissa: &BigUint) -> Result<(bool, BigUint), HeError> {
        if mantissa >= &self.n {
            return Err(HeError::Overflow);
        }
        if mantissa <= &self.max_int {
            Ok((false, mantissa.clone()))
        } else if mantissa >= &(&self.n - &self.max_int) {
            Ok((true, &self.n - mantissa))
        } else {
            Err(HeError::Overflow)
        }
    }

    pub fn decode(&self, encoded: &EncodedNumber) -> Result<f64, HeError> {
        let (negative, magnitude) = self.signed_mantissa(&encoded.mantissa)?;
        let value = biguint_to_f64_scaled(&magnitude, encoded.exponent as i64 * LOG2_BASE as i64);
        Ok(if negative { -value } else { value })
    }

    /// Rescales an encoding to a smaller exponent without changing its value.
    pub fn decrease_exponent(
        &self,
        encoded: &EncodedNumber,
        new_exponent: i32,
    ) -> Result<EncodedNumber, HeError> {
        let factor = self.rescale_factor(encoded.exponent, new_exponent)?;
        Ok(EncodedNumber {
            mantissa: (&encoded.mantissa * factor) % &self.n,
            exponent: new_exponent,
        })
    }

    /// `16^(from - to)` for `to <= from`.
    pub(crate) fn rescale_factor(&self, from: i32, to: i32) -> Result<BigUint, HeError> {
        if to > from {
            return Err(HeError::Overflow);
        }
        let bits = (from as i64 - to as i64) * LOG2_BASE as i64;
        if bits as usize >= self.key_bits {
            return Err(HeError::Overflow);
        }
        Ok(BigUint::from(1u32) << bits as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::keygen;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn pk() -> PublicKey {
        keygen(256, &mut ChaCha20Rng::seed_from_u64(1)).unwrap().public_key
    }

    #[test]
    fn exact_values_roundtrip() {
        let pk = pk();
        for x in [0.0, 42.0, 0.125, -3.5, 1e-300, -1e300, f64::MIN_POSITIVE, 5e-324, 0.1] {
            let e = pk.encode(x).unwrap();
            assert_eq!(pk.decode(&e).unwrap(), x, "{x}");
        }
    }

    #[test]
    fn negatives_live_in_upper_range() {
        let pk = pk();
        let e = pk.encode(-1.0).unwrap();
        assert!(e.mantissa() > &(pk.n() - pk.max_int()));
    }

    #[test]
    fn middle_band_is_overflow() {
        let pk = pk();
        let e = EncodedNumber {
            mantissa: pk.n() / 2u32,
            exponent: 0,
        };
        assert_eq!(pk.decode(&e), Err(HeError::Overflow));
        assert!(pk.encode(f64::NAN).is_err());
        assert_eq!(pk.encode_with_exponent(1e80, 0).unwrap_err(), HeError::Overflow);
    }

    #[test]
    fn fixed_exponent_rounds() {
        let pk = pk();
        let e = pk.encode_with_exponent(1.03, -1).unwrap();
        assert_eq!(pk.decode(&e).unwrap(), 1.0);
        let e = pk.encode_with_exponent(-2.97, -1).unwrap();
        assert_eq!(pk.decode(&e).unwrap(), -3.0);
    }

    #[test]
    fn rescaling_preserves_value() {
        let pk = pk();
        let e = pk.encode(-0.75).unwrap();
        let r = pk.decrease_exponent(&e, e.exponent() - 3).unwrap();
        assert_eq!(pk.decode(&r).unwrap(), -0.75);
        assert!(pk.decrease_exponent(&e, e.exponent() + 1).is_err());
    }

    #[test]
    fn large_mantissa_rounds_correctly() {
        // 2^80 + 2^27 + 1 rounds up to 2^80 + 2^28 at 53-bit precision.
        let mag = (BigUint::from(1u32) << 80u32) + (BigUint::from(1u32) << 27u32) + 1u32;
        let expected = 2f64.powi(80) + 2f64.powi(28);
        assert_eq!(biguint_to_f64_scaled(&mag, 0), expected);
        let tie = (BigUint::from(1u32) << 80u32) + (BigUint::from(1u32) << 27u32);
        assert_eq!(biguint_to_f64_scaled(&tie, 0), 2f64.powi(80));
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity(x in -1e12f64..1e12) {
            let pk = pk();
            prop_assert_eq!(pk.decode(&pk.encode(x).unwrap()).unwrap(), x);
        }
    }
}
