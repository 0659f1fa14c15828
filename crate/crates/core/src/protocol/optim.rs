use serde::{Deserialize, Serialize};

use super::ops::apply_update;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent, `theta -= mu * g`.
    #[default]
    Sgd,
    /// RMSprop on the decrypted gradient.
    #[serde(rename = "rmsprop")]
    RmsProp,
}

/// Plaintext update rule applied by each party after decryption.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    rho: f64,
    eps: f64,
    mean_sq: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, dim: usize) -> Self {
        Optimizer {
            kind,
            rho: 0.9,
            eps: 1e-8,
            mean_sq: vec![0.0; dim],
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, theta: &[f64], g: &[f64], mu: f64) -> Result<Vec<f64>> {
        match self.kind {
            OptimizerKind::Sgd => apply_update(theta, g, mu),
            OptimizerKind::RmsProp => {
                if g.len() != self.mean_sq.len() {
                    return Err(Error::Shape(format!(
                        "gradient has {} entries, optimizer state has {}",
                        g.len(),
                        self.mean_sq.len()
                    )));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("gradient"));
                }
                for (v, gi) in self.mean_sq.iter_mut().zip(g) {
                    *v = self.rho * *v + (1.0 - self.rho) * gi * gi;
                }
                let scaled: Vec<f64> = g
                    .iter()
                    .zip(&self.mean_sq)
                    .map(|(gi, v)| gi / (v.sqrt() + self.eps))
                    .collect();
                apply_update(theta, &scaled, mu)
            }
        }
    }
}
