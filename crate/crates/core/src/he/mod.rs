//! Paillier cryptosystem over base-16 fixed-point reals.

mod cipher;
mod encoding;
mod keys;
mod pem;
mod prime;

pub use cipher::Ciphertext;
pub use encoding::{EncodedNumber, BASE, LOG2_BASE};
pub use keys::{
    keygen, small_keys_allowed, KeyPair, PrivateKey, PublicKey, DEFAULT_KEY_BITS, MIN_KEY_BITS,
    SMALL_KEYS_ENV,
};
pub use pem::PrivateExport;
pub use prime::{gen_prime, is_probable_prime};
