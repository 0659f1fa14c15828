use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;

use super::prime::gen_prime;
use crate::error::HeError;

/// Smallest modulus accepted outside test mode.
pub const MIN_KEY_BITS: usize = 512;
/// Default modulus size.
pub const DEFAULT_KEY_BITS: usize = 2048;
/// Setting this variable to a non-empty value other than `0` allows keys below
/// [`MIN_KEY_BITS`].
pub const SMALL_KEYS_ENV: &str = "VFL_ALLOW_SMALL_KEYS";

pub fn small_keys_allowed() -> bool {
    if cfg!(test) {
        return true;
    }
    matches!(std::env::var(SMALL_KEYS_ENV), Ok(v) if !v.is_empty() && v != "0")
}

/// Paillier public key with generator `g = n + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    pub(crate) n: BigUint,
    pub(crate) n_squared: BigUint,
    pub(crate) g: BigUint,
    pub(crate) max_int: BigUint,
    pub(crate) key_bits: usize,
}

impl PublicKey {
    pub(crate) fn from_modulus(n: BigUint) -> Self {
        let key_bits = n.bits() as usize;
        let n_squared = &n * &n;
        let g = &n + 1u32;
        let max_int = &n / 3u32 - 1u32;
        PublicKey {
            n,
            n_squared,
            g,
            max_int,
            key_bits,
        }
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn key_bits(&self) -> usize {
        self.key_bits
    }

    /// Largest plaintext magnitude that decodes unambiguously. Mantissas above
    /// `n - max_int` are negatives; the band in between signals overflow.
    pub fn max_int(&self) -> &BigUint {
        &self.max_int
    }

    /// Random `r` in `Z*_n`.
    pub(crate) fn random_nonce<R: RngCore + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_below(&self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }
}

/// Paillier private key. Only produced by [`keygen`]; there is deliberately no
/// conversion from a public key or from wire bytes.
#[derive(Clone)]
pub struct PrivateKey {
    pub(crate) lambda: BigUint,
    pub(crate) mu: BigUint,
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    hp: BigUint,
    hq: BigUint,
    p_inv_q: BigUint,
    public: PublicKey,
}

impl std::fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PrivateKey")
            .field("key_bits", &self.public.key_bits)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub public_key: PublicKey,
    pub private_key: PrivateKey,
}

fn modinv(a: &BigUint, m: &BigUint) -> BigUint {
    let a = BigInt::from(a.clone());
    let m_signed = BigInt::from(m.clone());
    let ext = a.extended_gcd(&m_signed);
    debug_assert!(ext.gcd.is_one());
    ext.x.mod_floor(&m_signed).to_biguint().expect("non-negative")
}

pub(crate) fn mod_inverse(a: &BigUint, m: &BigUint) -> BigUint {
    modinv(a, m)
}

fn l_function(x: &BigUint, p: &BigUint) -> BigUint {
    (x - 1u32) / p
}

impl PrivateKey {
    pub(crate) fn from_primes(p: BigUint, q: BigUint) -> Self {
        let public = PublicKey::from_modulus(&p * &q);
        let p1 = &p - 1u32;
        let q1 = &q - 1u32;
        let lambda = p1.lcm(&q1);
        // g = n + 1 gives L(g^lambda mod n^2) = lambda mod n.
        let mu = modinv(&(&lambda % &public.n), &public.n);
        let p_squared = &p * &p;
        let q_squared = &q * &q;
        let hp = modinv(
            &l_function(&public.g.modpow(&p1, &p_squared), &p),
            &p,
        );
        let hq = modinv(
            &l_function(&public.g.modpow(&q1, &q_squared), &q),
            &q,
        );
        let p_inv_q = modinv(&(&p % &q), &q);
        PrivateKey {
            lambda,
            mu,
            p,
            q,
            p_squared,
            q_squared,
            hp,
            hq,
            p_inv_q,
            public,
        }
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    /// Carmichael value `lambda = lcm(p-1, q-1)`.
    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }

    /// Raw decryption using the CRT split over `p^2` and `q^2`.
    pub fn decrypt_raw(&self, c: &BigUint) -> BigUint {
        let mp = (l_function(&c.modpow(&(&self.p - 1u32), &self.p_squared), &self.p) * &self.hp)
            % &self.p;
        let mq = (l_function(&c.modpow(&(&self.q - 1u32), &self.q_squared), &self.q) * &self.hq)
            % &self.q;
        // m = mp + ((mq - mp) * p^-1 mod q) * p
        let diff = if mq >= mp {
            (&mq - &mp) % &self.q
        } else {
            (&self.q - ((&mp - &mq) % &self.q)) % &self.q
        };
        let u = (diff * &self.p_inv_q) % &self.q;
        mp + u * &self.p
    }

    /// Textbook decryption `L(c^lambda mod n^2) * mu mod n`.
    pub fn decrypt_raw_textbook(&self, c: &BigUint) -> BigUint {
        let pk = &self.public;
        let x = c.modpow(&self.lambda, &pk.n_squared);
        (l_function(&x, &pk.n) * &self.mu) % &pk.n
    }

    pub(crate) fn primes(&self) -> (&BigUint, &BigUint) {
        (&self.p, &self.q)
    }
}

/// Generates a key pair whose modulus has exactly `key_bits` bits.
///
/// Deterministic given the state of `rng`.
pub fn keygen<R: RngCore + ?Sized>(key_bits: usize, rng: &mut R) -> Result<KeyPair, HeError> {
    if key_bits < 16 || key_bits % 2 != 0 {
        return Err(HeError::InvalidKeySize(key_bits));
    }
    if key_bits < MIN_KEY_BITS && !small_keys_allowed() {
        return Err(HeError::KeyTooSmall {
            bits: key_bits,
            min: MIN_KEY_BITS,
        });
    }
    let half = (key_bits / 2) as u64;
    loop {
        let p = gen_prime(half, rng);
        let q = gen_prime(half, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        if n.bits() as usize != key_bits {
            continue;
        }
        let private_key = PrivateKey::from_primes(p, q);
        return Ok(KeyPair {
            public_key: private_key.public.clone(),
            private_key,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn modulus_has_requested_bits() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for bits in [64, 128, 256, 512] {
            let kp = keygen(bits, &mut rng).unwrap();
            assert_eq!(kp.public_key.key_bits(), bits);
            assert_eq!(kp.public_key.n().bits() as usize, bits);
            assert_eq!(kp.public_key.n_squared(), &(kp.public_key.n() * kp.public_key.n()));
            assert_eq!(kp.public_key.g(), &(kp.public_key.n() + 1u32));
        }
    }

    #[test]
    fn same_seed_same_keys() {
        let a = keygen(512, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        let b = keygen(512, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.public_key, b.public_key);
        assert_eq!(a.private_key.lambda(), b.private_key.lambda());
        let c = keygen(512, &mut ChaCha20Rng::seed_from_u64(8)).unwrap();
        assert_ne!(a.public_key, c.public_key);
    }

    #[test]
    fn rejects_odd_sizes() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(keygen(511, &mut rng).unwrap_err(), HeError::InvalidKeySize(511));
        assert_eq!(keygen(8, &mut rng).unwrap_err(), HeError::InvalidKeySize(8));
    }

    #[test]
    fn crt_and_textbook_decryption_agree() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let kp = keygen(256, &mut rng).unwrap();
        let pk = &kp.public_key;
        for _ in 0..20 {
            let m = rng.gen_biguint_below(pk.n());
            let r = pk.random_nonce(&mut rng);
            let c = super::super::cipher::raw_encrypt(pk, &m, &r);
            assert_eq!(kp.private_key.decrypt_raw(&c), m);
            assert_eq!(kp.private_key.decrypt_raw_textbook(&c), m);
        }
    }
}
