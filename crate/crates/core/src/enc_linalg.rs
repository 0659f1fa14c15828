//! Vector operations over ciphertexts with exact operation counting.
//!
//! Every encrypted multiplication and addition performed by the protocol goes
//! through an [`Evaluator`], so the counters reflect the `m * n` cost law of
//! the gradient computation exactly.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::Scheme;

/// Non-empty sequence of ciphertexts under one key.
#[derive(Clone, Debug, PartialEq)]
pub struct CipherVector<C> {
    elements: Vec<C>,
}

impl<C> CipherVector<C> {
    pub fn new(elements: Vec<C>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Empty);
        }
        Ok(CipherVector { elements })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[C] {
        &self.elements
    }

    pub fn iter(&self) -> std::slice::Iter<'_, C> {
        self.elements.iter()
    }

    pub fn into_inner(self) -> Vec<C> {
        self.elements
    }
}

/// Counts of homomorphic work. Atomic so parallel regions can share one.
#[derive(Debug, Default)]
pub struct OpCounter {
    enc_mul: AtomicU64,
    enc_add: AtomicU64,
    encryptions: AtomicU64,
    decryptions: AtomicU64,
    plain_flops: AtomicU64,
    crypto_ns: AtomicU64,
    arith_ns: AtomicU64,
    timed: AtomicBool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpSnapshot {
    pub enc_mul: u64,
    pub enc_add: u64,
    pub encryptions: u64,
    pub decryptions: u64,
    pub plain_flops: u64,
    /// Measured wall time of encrypt/decrypt calls (timed counters only).
    pub crypto_ns: u64,
    /// Measured wall time of encrypted arithmetic (timed counters only).
    pub arith_ns: u64,
}

impl OpSnapshot {
    pub fn since(&self, earlier: &OpSnapshot) -> OpSnapshot {
        OpSnapshot {
            enc_mul: self.enc_mul - earlier.enc_mul,
            enc_add: self.enc_add - earlier.enc_add,
            encryptions: self.encryptions - earlier.encryptions,
            decryptions: self.decryptions - earlier.decryptions,
            plain_flops: self.plain_flops - earlier.plain_flops,
            crypto_ns: self.crypto_ns - earlier.crypto_ns,
            arith_ns: self.arith_ns - earlier.arith_ns,
        }
    }

    pub fn plus(&self, other: &OpSnapshot) -> OpSnapshot {
        OpSnapshot {
            enc_mul: self.enc_mul + other.enc_mul,
            enc_add: self.enc_add + other.enc_add,
            encryptions: self.encryptions + other.encryptions,
            decryptions: self.decryptions + other.decryptions,
            plain_flops: self.plain_flops + other.plain_flops,
            crypto_ns: self.crypto_ns + other.crypto_ns,
            arith_ns: self.arith_ns + other.arith_ns,
        }
    }
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counter that also records wall-clock time spent in each op family.
    pub fn timed() -> Self {
        let c = Self::default();
        c.timed.store(true, Ordering::Relaxed);
        c
    }

    pub fn is_timed(&self) -> bool {
        self.timed.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> OpSnapshot {
        OpSnapshot {
            enc_mul: self.enc_mul.load(Ordering::Relaxed),
            enc_add: self.enc_add.load(Ordering::Relaxed),
            encryptions: self.encryptions.load(Ordering::Relaxed),
            decryptions: self.decryptions.load(Ordering::Relaxed),
            plain_flops: self.plain_flops.load(Ordering::Relaxed),
            crypto_ns: self.crypto_ns.load(Ordering::Relaxed),
            arith_ns: self.arith_ns.load(Ordering::Relaxed),
        }
    }

    pub fn add_flops(&self, n: u64) {
        self.plain_flops.fetch_add(n, Ordering::Relaxed);
    }

    fn bump(&self, field: &AtomicU64, n: u64) {
        field.fetch_add(n, Ordering::Relaxed);
    }
}

#[cfg(not(target_arch = "wasm32"))]
struct Stopwatch(Option<std::time::Instant>);

#[cfg(not(target_arch = "wasm32"))]
impl Stopwatch {
    fn start(enabled: bool) -> Self {
        Stopwatch(enabled.then(std::time::Instant::now))
    }

    fn stop(self, into: &AtomicU64) {
        if let Some(t) = self.0 {
            into.fetch_add(t.elapsed().as_nanos() as u64, Ordering::Relaxed);
        }
    }
}

#[cfg(target_arch = "wasm32")]
struct Stopwatch;

#[cfg(target_arch = "wasm32")]
impl Stopwatch {
    fn start(_enabled: bool) -> Self {
        Stopwatch
    }

    fn stop(self, _into: &AtomicU64) {}
}

/// Counting front end over a [`Scheme`].
pub struct Evaluator<'a, S: Scheme> {
    scheme: &'a S,
    counter: &'a OpCounter,
}

impl<'a, S: Scheme> Evaluator<'a, S> {
    pub fn new(scheme: &'a S, counter: &'a OpCounter) -> Self {
        Evaluator { scheme, counter }
    }

    pub fn scheme(&self) -> &S {
        self.scheme
    }

    pub fn counter(&self) -> &OpCounter {
        self.counter
    }

    pub fn encrypt<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R) -> Result<S::Cipher> {
        let sw = Stopwatch::start(self.counter.is_timed());
        let c = self.scheme.encrypt(x, rng)?;
        sw.stop(&self.counter.crypto_ns);
        self.counter.bump(&self.counter.encryptions, 1);
        Ok(c)
    }

    pub fn encrypt_vec<R: RngCore + ?Sized>(
        &self,
        xs: &[f64],
        rng: &mut R,
    ) -> Result<CipherVector<S::Cipher>> {
        let cs = xs
            .iter()
            .map(|&x| self.encrypt(x, rng))
            .collect::<Result<Vec<_>>>()?;
        CipherVector::new(cs)
    }

    pub fn decrypt(&self, secret: &S::Secret, c: &S::Cipher) -> Result<f64> {
        let sw = Stopwatch::start(self.counter.is_timed());
        let x = self.scheme.decrypt(secret, c)?;
        sw.stop(&self.counter.crypto_ns);
        self.counter.bump(&self.counter.decryptions, 1);
        Ok(x)
    }

    pub fn decrypt_vec(&self, secret: &S::Secret, v: &CipherVector<S::Cipher>) -> Result<Vec<f64>> {
        v.iter().map(|c| self.decrypt(secret, c)).collect()
    }

    pub fn add(&self, a: &S::Cipher, b: &S::Cipher) -> Result<S::Cipher> {
        let sw = Stopwatch::start(self.counter.is_timed());
        let c = self.scheme.add(a, b)?;
        sw.stop(&self.counter.arith_ns);
        self.counter.bump(&self.counter.enc_add, 1);
        Ok(c)
    }

    pub fn scalar_mul(&self, c: &S::Cipher, s: f64) -> Result<S::Cipher> {
        let sw = Stopwatch::start(self.counter.is_timed());
        let out = self.scheme.scalar_mul(c, s)?;
        sw.stop(&self.counter.arith_ns);
        self.counter.bump(&self.counter.enc_mul, 1);
        Ok(out)
    }

    /// Element-wise homomorphic sum.
    pub fn cv_add(
        &self,
        a: &CipherVector<S::Cipher>,
        b: &CipherVector<S::Cipher>,
    ) -> Result<CipherVector<S::Cipher>> {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "cv_add lengths {} and {}",
                a.len(),
                b.len()
            )));
        }
        let out = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| self.add(x, y))
            .collect::<Result<Vec<_>>>()?;
        CipherVector::new(out)
    }

    /// Element-wise multiplication by plaintext scalars.
    pub fn cv_scale(
        &self,
        a: &CipherVector<S::Cipher>,
        scalars: &[f64],
    ) -> Result<CipherVector<S::Cipher>> {
        if a.len() != scalars.len() {
            return Err(Error::Shape(format!(
                "cv_scale lengths {} and {}",
                a.len(),
                scalars.len()
            )));
        }
        let out = a
            .iter()
            .zip(scalars)
            .map(|(c, &s)| self.scalar_mul(c, s))
            .collect::<Result<Vec<_>>>()?;
        CipherVector::new(out)
    }

    /// `sum_i [[d_i]] * x_i`; counts `m` multiplications and `m - 1` additions.
    pub fn cv_dot_plain(&self, d: &CipherVector<S::Cipher>, x: &[f64]) -> Result<S::Cipher> {
        if d.len() != x.len() {
            return Err(Error::Shape(format!(
                "dot lengths {} and {}",
                d.len(),
                x.len()
            )));
        }
        let sw = Stopwatch::start(self.counter.is_timed());
        let out = self.scheme.dot_plain(d.as_slice(), x)?;
        sw.stop(&self.counter.arith_ns);
        let m = x.len() as u64;
        self.counter.bump(&self.counter.enc_mul, m);
        self.counter.bump(&self.counter.enc_add, m - 1);
        Ok(out)
    }

    /// `X^T [[d]]`, one dot product per column of the `m x n` matrix.
    pub fn encrypted_gradient_matvec(
        &self,
        d: &CipherVector<S::Cipher>,
        x: &DMatrix<f64>,
    ) -> Result<CipherVector<S::Cipher>> {
        if x.nrows() != d.len() {
            return Err(Error::Shape(format!(
                "matrix has {} rows, residual has {}",
                x.nrows(),
                d.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Empty);
        }
        let out = x
            .column_iter()
            .map(|col| self.cv_dot_plain(d, col.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        CipherVector::new(out)
    }

    /// Sum of all elements (`len - 1` additions).
    pub fn cv_sum(&self, v: &CipherVector<S::Cipher>) -> Result<S::Cipher> {
        let mut it = v.iter();
        let mut acc = it.next().expect("non-empty").clone();
        for c in it {
            acc = self.add(&acc, c)?;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::{keygen, KeyPair};
    use crate::scheme::PlainScheme;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keys() -> (KeyPair, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        (keygen(256, &mut rng).unwrap(), rng)
    }

    #[test]
    fn cv_add_is_elementwise_and_counted() {
        let (kp, mut rng) = keys();
        let counter = OpCounter::new();
        let ev = Evaluator::new(&kp.public_key, &counter);
        let a = ev.encrypt_vec(&[1.0, 2.0], &mut rng).unwrap();
        let b = ev.encrypt_vec(&[3.0, 4.0], &mut rng).unwrap();
        let zero = ev.encrypt_vec(&[0.0, 0.0], &mut rng).unwrap();
        let before = counter.snapshot().enc_add;
        let sum = ev.cv_add(&a, &b).unwrap();
        assert_eq!(counter.snapshot().enc_add - before, 2);
        assert_eq!(ev.decrypt_vec(&kp.private_key, &sum).unwrap(), vec![4.0, 6.0]);
        let same = ev.cv_add(&a, &zero).unwrap();
        assert_eq!(ev.decrypt_vec(&kp.private_key, &same).unwrap(), vec![1.0, 2.0]);
        let short = ev.encrypt_vec(&[1.0], &mut rng).unwrap();
        assert!(matches!(ev.cv_add(&a, &short), Err(Error::Shape(_))));
    }

    #[test]
    fn dot_examples() {
        let (kp, mut rng) = keys();
        let counter = OpCounter::new();
        let ev = Evaluator::new(&kp.public_key, &counter);
        let d = ev.encrypt_vec(&[1.0, 1.0], &mut rng).unwrap();
        let c = ev.cv_dot_plain(&d, &[2.0, 3.0]).unwrap();
        assert_eq!(ev.decrypt(&kp.private_key, &c).unwrap(), 5.0);
        let c = ev.cv_dot_plain(&d, &[0.0, 0.0]).unwrap();
        assert_eq!(ev.decrypt(&kp.private_key, &c).unwrap(), 0.0);
        assert_eq!(counter.snapshot().enc_mul, 4);
        assert_eq!(counter.snapshot().enc_add, 2);
    }

    #[test]
    fn dot_of_hundred_counts_hundred_mults() {
        let counter = OpCounter::new();
        let ev = Evaluator::new(&PlainScheme, &counter);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let d = ev.encrypt_vec(&vec![0.5; 100], &mut rng).unwrap();
        ev.cv_dot_plain(&d, &vec![1.0; 100]).unwrap();
        assert_eq!(counter.snapshot().enc_mul, 100);
        assert_eq!(counter.snapshot().enc_add, 99);
    }

    #[test]
    fn identity_columns_recover_residual() {
        let (kp, mut rng) = keys();
        let counter = OpCounter::new();
        let ev = Evaluator::new(&kp.public_key, &counter);
        let d = ev.encrypt_vec(&[0.5, -1.5, 2.25, 4.0], &mut rng).unwrap();
        let x = DMatrix::from_fn(4, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        let g = ev.encrypted_gradient_matvec(&d, &x).unwrap();
        assert_eq!(ev.decrypt_vec(&kp.private_key, &g).unwrap(), vec![0.5, -1.5, 2.25]);
        assert_eq!(counter.snapshot().enc_mul, 12);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(CipherVector::<f64>::new(vec![]).is_err());
        let counter = OpCounter::new();
        let ev = Evaluator::new(&PlainScheme, &counter);
        let d = CipherVector::new(vec![1.0, 2.0]).unwrap();
        assert!(ev.encrypted_gradient_matvec(&d, &DMatrix::zeros(3, 2)).is_err());
        assert!(ev.cv_dot_plain(&d, &[1.0]).is_err());
    }

    #[test]
    fn timed_counter_accumulates_time() {
        let (kp, mut rng) = keys();
        let counter = OpCounter::timed();
        let ev = Evaluator::new(&kp.public_key, &counter);
        let d = ev.encrypt_vec(&[1.0, 2.0, 3.0], &mut rng).unwrap();
        ev.cv_dot_plain(&d, &[1.0, 2.0, 3.0]).unwrap();
        let s = counter.snapshot();
        assert!(s.crypto_ns > 0);
        assert!(s.arith_ns > 0);
    }
}
