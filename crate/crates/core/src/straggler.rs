//! Backup workers: the guest moves on once enough fresh host shares have
//! arrived and fills the rest from a cache of each host's latest share,
//! subject to a staleness bound.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::enc_linalg::Evaluator;
use crate::error::{Error, Result};
use crate::protocol::{ForwardShare, PartyId, ResidualRule, ResidualShare};
use crate::scheme::{Scheme, WireValue};

/// What to do with hosts whose fresh share is missing when the guest proceeds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Substitute the host's cached share from an earlier iteration.
    #[default]
    Stale,
    /// Leave the host out of the residual altogether.
    Drop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StragglerConfig {
    /// Number of hosts the guest may skip per round (`beta`).
    pub backup_workers: u32,
    /// A cached share may be used only while its age is below this bound.
    pub max_staleness: u32,
    pub policy: MissingPolicy,
}

impl Default for StragglerConfig {
    fn default() -> Self {
        StragglerConfig {
            backup_workers: 0,
            max_staleness: 2,
            policy: MissingPolicy::Stale,
        }
    }
}

impl StragglerConfig {
    pub fn validate(&self, hosts: usize) -> Result<()> {
        if self.backup_workers as usize > 0 && self.backup_workers as usize >= hosts {
            return Err(Error::Config(format!(
                "backup_workers must be below the host count ({hosts}), got {}",
                self.backup_workers
            )));
        }
        if self.max_staleness < 1 {
            return Err(Error::Config("max_staleness must be at least 1".into()));
        }
        Ok(())
    }
}

/// Latest share seen from each host.
#[derive(Clone, Debug)]
pub struct BackupCache<C: WireValue> {
    entries: BTreeMap<PartyId, ForwardShare<C>>,
}

impl<C: WireValue> Default for BackupCache<C> {
    fn default() -> Self {
        BackupCache {
            entries: BTreeMap::new(),
        }
    }
}

impl<C: WireValue> BackupCache<C> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `share` unless a newer one is already cached.
    pub fn insert(&mut self, share: ForwardShare<C>) {
        match self.entries.get(&share.party) {
            Some(old) if old.iteration > share.iteration => {}
            _ => {
                self.entries.insert(share.party, share);
            }
        }
    }

    pub fn get(&self, host: PartyId) -> Option<&ForwardShare<C>> {
        self.entries.get(&host)
    }

    /// `current - cached_iteration`, or `None` for an empty slot.
    pub fn age(&self, host: PartyId, current: u32) -> Option<u32> {
        self.entries
            .get(&host)
            .map(|s| current.saturating_sub(s.iteration))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Guard {
    Compensate,
    Block,
}

/// Staleness bound: a share of age `age` may stand in only while
/// `age < max_age`.
pub fn staleness_guard(age: u32, max_age: u32) -> Guard {
    if age < max_age {
        Guard::Compensate
    } else {
        Guard::Block
    }
}

/// Per-round record of which shares the guest used.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiveLog {
    pub iteration: u32,
    /// Hosts whose fresh share was used, in arrival order.
    pub arrivals: Vec<PartyId>,
    /// Hosts filled from the cache, with the age of the cached share.
    pub compensated: Vec<(PartyId, u32)>,
    /// Hosts left out (drop policy).
    pub dropped: Vec<PartyId>,
}

/// Outcome of a collection attempt.
#[derive(Debug)]
pub enum Collect<'a, C: WireValue> {
    Ready {
        fresh: Vec<&'a ForwardShare<C>>,
        stale: Vec<&'a ForwardShare<C>>,
        log: ReceiveLog,
    },
    /// Keep waiting. `blocking` lists hosts that must deliver before the round
    /// can proceed (empty when the guest only needs more arrivals overall).
    Wait { have: usize, need: usize, blocking: Vec<PartyId> },
}

/// Decides whether the guest can build the residual for `iteration` from the
/// fresh shares received so far (`arrived`, in arrival order).
///
/// Backup is disabled in the first iteration because the cache is still
/// empty. A cached share may stand in for a missing host only when it covers
/// the same batch and passes [`staleness_guard`]; otherwise the guest waits
/// for that host.
pub fn collect_shares<'a, C: WireValue>(
    iteration: u32,
    batch: u32,
    hosts: &[PartyId],
    arrived: &[&'a ForwardShare<C>],
    cfg: &StragglerConfig,
    cache: &'a BackupCache<C>,
) -> Collect<'a, C> {
    let k = hosts.len();
    let beta = if iteration <= 1 {
        0
    } else {
        (cfg.backup_workers as usize).min(k.saturating_sub(1))
    };
    let fresh: Vec<&ForwardShare<C>> = arrived
        .iter()
        .copied()
        .filter(|s| s.iteration == iteration && s.batch == batch)
        .collect();
    let need = k - beta;
    if fresh.len() < need {
        return Collect::Wait {
            have: fresh.len(),
            need,
            blocking: Vec::new(),
        };
    }

    let mut stale = Vec::new();
    let mut compensated = Vec::new();
    let mut dropped = Vec::new();
    let mut blocking = Vec::new();
    for &h in hosts {
        if fresh.iter().any(|s| s.party == h) {
            continue;
        }
        let usable = cache.get(h).and_then(|s| {
            let age = iteration.saturating_sub(s.iteration);
            (s.batch == batch && staleness_guard(age, cfg.max_staleness) == Guard::Compensate)
                .then_some((s, age))
        });
        match (usable, cfg.policy) {
            (Some((s, age)), MissingPolicy::Stale) => {
                stale.push(s);
                compensated.push((h, age));
            }
            (Some(_), MissingPolicy::Drop) => dropped.push(h),
            (None, _) => blocking.push(h),
        }
    }
    if !blocking.is_empty() {
        return Collect::Wait {
            have: fresh.len(),
            need: fresh.len() + blocking.len(),
            blocking,
        };
    }
    Collect::Ready {
        log: ReceiveLog {
            iteration,
            arrivals: fresh.iter().map(|s| s.party).collect(),
            compensated,
            dropped,
        },
        fresh,
        stale,
    }
}

/// Residual over fresh shares plus cached stand-ins: each host enters the sum
/// exactly once, fresh ones first.
#[allow(clippy::too_many_arguments)]
pub fn compensated_residual<S: Scheme, R: RngCore + ?Sized>(
    ev: &Evaluator<'_, S>,
    iteration: u32,
    fresh: &[&ForwardShare<S::Cipher>],
    stale: &[&ForwardShare<S::Cipher>],
    guest_u: &[f64],
    y: &[f64],
    rule: ResidualRule,
    rng: &mut R,
) -> Result<ResidualShare<S::Cipher>> {
    let mut all: Vec<&ForwardShare<S::Cipher>> = fresh.to_vec();
    for s in stale {
        if all.iter().any(|f| f.party == s.party) {
            return Err(Error::Config(format!("{} supplied twice", s.party)));
        }
        all.push(s);
    }
    crate::protocol::residual_unchecked(ev, iteration, &all, guest_u, y, rule, rng)
}
