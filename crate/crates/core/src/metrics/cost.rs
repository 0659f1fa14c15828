use serde::{Deserialize, Serialize};

use crate::enc_linalg::OpSnapshot;
use crate::error::{Error, Result};
use crate::netsim::{secs_to_ns, SimTime};

/// How busy time is charged to the simulated clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    /// Op counts times the unit costs of a [`CostModel`]. Deterministic.
    #[default]
    Model,
    /// Measured wall time of the crypto calls; plain flops still use the model.
    WallClock,
}

/// Unit cost of each counted op, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub encrypt_s: f64,
    pub decrypt_s: f64,
    pub enc_mul_s: f64,
    pub enc_add_s: f64,
    pub flop_s: f64,
}

/// Measured on a single core at 1024 bits.
const ENCRYPT_1024: f64 = 3.0e-3;
const DECRYPT_1024: f64 = 1.0e-3;
const ENC_MUL_1024: f64 = 1.9e-4;
const ENC_ADD_1024: f64 = 4.0e-6;
const FLOP: f64 = 1.0e-9;

impl CostModel {
    /// Defaults scaled from 1024-bit measurements: exponentiations grow with
    /// the cube of the key size, multiplications with the square.
    pub fn for_key_bits(bits: usize) -> Self {
        let r = bits as f64 / 1024.0;
        CostModel {
            encrypt_s: ENCRYPT_1024 * r.powi(3),
            decrypt_s: DECRYPT_1024 * r.powi(3),
            enc_mul_s: ENC_MUL_1024 * r.powi(2),
            enc_add_s: ENC_ADD_1024 * r.powi(2),
            flop_s: FLOP,
        }
    }

    /// Plain mode: no encryption cost, encrypted arithmetic costs a flop.
    pub fn plain() -> Self {
        CostModel {
            encrypt_s: 0.0,
            decrypt_s: 0.0,
            enc_mul_s: FLOP,
            enc_add_s: FLOP,
            flop_s: FLOP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.encrypt_s,
            self.decrypt_s,
            self.enc_mul_s,
            self.enc_add_s,
            self.flop_s,
        ];
        if all.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::Config("op costs must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// `(computation, encryption)` nanoseconds charged for an op delta.
    pub fn charge(&self, ops: &OpSnapshot, mode: TimingMode) -> (SimTime, SimTime) {
        let flops = ops.plain_flops as f64 * self.flop_s;
        match mode {
            TimingMode::Model => {
                let comp = ops.enc_mul as f64 * self.enc_mul_s
                    + ops.enc_add as f64 * self.enc_add_s
                    + flops;
                let enc = ops.encryptions as f64 * self.encrypt_s
                    + ops.decryptions as f64 * self.decrypt_s;
                (secs_to_ns(comp), secs_to_ns(enc))
            }
            TimingMode::WallClock => (ops.arith_ns + secs_to_ns(flops), ops.crypto_ns),
        }
    }

    /// Micro-benchmark of the Paillier primitives at `bits`.
    #[cfg(not(target_arch = "wasm32"))]
    pub fn calibrate<R: rand::RngCore>(bits: usize, samples: usize, rng: &mut R) -> Result<Self> {
        use std::time::Instant;

        use crate::he::keygen;
        use crate::scheme::Scheme;

        let samples = samples.max(1);
        let kp = keygen(bits, rng)?;
        let pk = &kp.public_key;
        let xs: Vec<f64> = (0..samples).map(|i| i as f64 * 0.37 - 1.5).collect();

        let t = Instant::now();
        let cs = xs
            .iter()
            .map(|&x| pk.encrypt(x, rng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let encrypt_s = t.elapsed().as_secs_f64() / samples as f64;

        let t = Instant::now();
        for c in &cs {
            Scheme::decrypt(pk, &kp.private_key, c)?;
        }
        let decrypt_s = t.elapsed().as_secs_f64() / samples as f64;

        let t = Instant::now();
        for c in &cs {
            pk.scalar_mul(c, 0.731)?;
        }
        let enc_mul_s = t.elapsed().as_secs_f64() / samples as f64;

        let t = Instant::now();
        for w in cs.windows(2) {
            pk.add(&w[0], &w[1])?;
        }
        let enc_add_s = t.elapsed().as_secs_f64() / (samples.saturating_sub(1).max(1)) as f64;

        Ok(CostModel {
            encrypt_s,
            decrypt_s,
            enc_mul_s,
            enc_add_s,
            flop_s: FLOP,
        })
    }
}
