//! Guest/host/arbiter training round: forward shares, encrypted residual and
//! loss, encrypted gradients, arbiter decryption and the plaintext update.

mod auc;
mod batch;
mod message;
mod ops;
mod optim;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use auc::auc;
pub use batch::BatchSchedule;
pub use message::{
    DecryptedGradient, ForwardShare, GradientMessage, LossParts, MessageKind, Payload,
    ProtocolMessage, ResidualShare,
};
pub use ops::{
    apply_update, arbiter_decrypt, encrypted_loss, forward, guest_residual, guest_round,
    local_scores, party_gradient, plain_loss_terms, receive_gradient, ArbiterOutput,
};
pub use optim::{Optimizer, OptimizerKind};

pub(crate) use ops::residual_unchecked;

/// Party identifier. The guest is 0, hosts are `1..=K`, the arbiter is
/// [`PartyId::ARBITER`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyId(pub u32);

impl PartyId {
    pub const GUEST: PartyId = PartyId(0);
    pub const ARBITER: PartyId = PartyId(u32::MAX);

    pub fn host(k: u32) -> PartyId {
        assert!(k >= 1 && k < u32::MAX, "host ids start at 1");
        PartyId(k)
    }

    pub fn is_guest(self) -> bool {
        self == Self::GUEST
    }

    pub fn is_arbiter(self) -> bool {
        self == Self::ARBITER
    }

    pub fn is_host(self) -> bool {
        !self.is_guest() && !self.is_arbiter()
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::GUEST => write!(f, "guest"),
            Self::ARBITER => write!(f, "arbiter"),
            PartyId(k) => write!(f, "host{k}"),
        }
    }
}

/// How the guest turns scores and labels into the per-sample residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualRule {
    /// `d = u - y` (squared loss, real-valued labels).
    #[default]
    Linear,
    /// Second-order Taylor expansion of the logistic loss around zero:
    /// `d = 0.25 u - 0.5 y` with labels in `{-1, +1}`.
    LogisticTaylor,
}

impl ResidualRule {
    /// Guest-side plaintext residual term for one sample.
    pub fn guest_term(self, u_guest: f64, y: f64) -> f64 {
        match self {
            ResidualRule::Linear => u_guest - y,
            ResidualRule::LogisticTaylor => 0.25 * u_guest - 0.5 * y,
        }
    }

    /// Weight applied to the summed host scores inside the residual.
    pub fn host_weight(self) -> f64 {
        match self {
            ResidualRule::Linear => 1.0,
            ResidualRule::LogisticTaylor => 0.25,
        }
    }

    pub fn check_labels(self, y: &[f64]) -> Result<()> {
        match self {
            ResidualRule::Linear => {
                if let Some(v) = y.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Labels(format!("label {v} is not finite")));
                }
            }
            ResidualRule::LogisticTaylor => {
                if let Some(v) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
                    return Err(Error::Labels(format!(
                        "logistic_taylor needs labels in {{-1, +1}}, found {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub lambda: f64,
    pub max_iterations: u32,
    pub batch_size: usize,
    pub residual_rule: ResidualRule,
    pub optimizer: OptimizerKind,
    /// Divide the summed gradient by the batch size before the optimizer sees
    /// it, so the learning rate does not have to shrink with the batch.
    pub normalize_gradient: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            learning_rate: 0.05,
            lambda: 0.01,
            max_iterations: 50,
            batch_size: 1024,
            residual_rule: ResidualRule::Linear,
            optimizer: OptimizerKind::Sgd,
            normalize_gradient: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Factor applied to a gradient summed over `batch_len` samples.
    pub fn gradient_scale(&self, batch_len: usize) -> f64 {
        if self.normalize_gradient {
            1.0 / batch_len as f64
        } else {
            1.0
        }
    }

    /// Effective plain gradient descent step for a summed gradient.
    pub fn step_size(&self, batch_len: usize) -> f64 {
        self.learning_rate * self.gradient_scale(batch_len)
    }
}
