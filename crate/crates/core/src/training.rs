//! Discrete-event execution of the full training run: one state machine per
//! party, messages carried by the simulated network, straggler and compression
//! hooks, and per-round metrics.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::compression::{k_for_ratio, CompressionHook, CompressionPlan};
use crate::data::VerticalDataset;
use crate::enc_linalg::{Evaluator, OpCounter, OpSnapshot};
use crate::error::{Error, Result};
use crate::metrics::{
    critical_path, CostModel, IterationRecord, MessageRef, Phase, PhaseNs, RunMetrics,
    SegmentKind, Timeline, TimingMode,
};
use crate::netsim::{secs_to_ns, EventClass, EventQueue, LinkModel, SimClock, SimTime, TraceRecord};
use crate::protocol::{
    arbiter_decrypt, auc, forward, guest_round, local_scores, party_gradient, receive_gradient,
    BatchSchedule, DecryptedGradient, ForwardShare, HyperParams, Optimizer, PartyId, Payload,
    ProtocolMessage, ResidualRule, ResidualShare,
};
use crate::scheme::Scheme;
use crate::straggler::{collect_shares, BackupCache, Collect, ReceiveLog, StragglerConfig};

/// A host that stops responding from `from_iteration` on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub host: u32,
    pub from_iteration: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub label: String,
    pub hp: HyperParams,
    pub straggler: StragglerConfig,
    pub link: LinkModel,
    /// Fraction of features kept per party (guest first); 1.0 disables
    /// compression. A single entry applies to every party.
    pub pca_ratio: Vec<f64>,
    pub timing: TimingMode,
    /// Unit op costs; derived from the key size when absent.
    pub costs: Option<CostModel>,
    /// Constant added to every round.
    pub other_per_round_s: f64,
    pub seed: u64,
    pub faults: Vec<Fault>,
    /// Keep the message trace.
    pub trace: bool,
    /// Compute objective and AUC on the full data after every round.
    pub evaluate: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            label: "run".into(),
            hp: HyperParams::default(),
            straggler: StragglerConfig::default(),
            link: LinkModel::default(),
            pca_ratio: vec![1.0],
            timing: TimingMode::Model,
            costs: None,
            other_per_round_s: 2.0,
            seed: 0,
            faults: Vec::new(),
            trace: false,
            evaluate: true,
        }
    }
}

impl TrainingConfig {
    pub fn ratio_for(&self, party: usize) -> f64 {
        if self.pca_ratio.len() == 1 {
            self.pca_ratio[0]
        } else {
            self.pca_ratio[party]
        }
    }

    pub fn validate(&self, data: &VerticalDataset) -> Result<()> {
        self.hp.validate()?;
        self.link.validate()?;
        let hosts = data.party_count() - 1;
        self.straggler.validate(hosts)?;
        if let Some(c) = &self.costs {
            c.validate()?;
        }
        if !(self.other_per_round_s >= 0.0 && self.other_per_round_s.is_finite()) {
            return Err(Error::Config("other_per_round_s must be non-negative".into()));
        }
        if self.pca_ratio.len() != 1 && self.pca_ratio.len() != data.party_count() {
            return Err(Error::Config(format!(
                "pca_ratio has {} entries for {} parties",
                self.pca_ratio.len(),
                data.party_count()
            )));
        }
        if let Some(r) = self.pca_ratio.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::Config(format!("pca_ratio must be in (0, 1], got {r}")));
        }
        if self.straggler.backup_workers > 0 && self.hp.batch_size < data.m() {
            return Err(Error::Config(
                "backup workers need full-batch training: cached shares must cover the same rows"
                    .into(),
            ));
        }
        for f in &self.faults {
            if f.host == 0 || f.host as usize > hosts {
                return Err(Error::Config(format!("fault names unknown host {}", f.host)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainingResult {
    /// Final parameters per party in the original feature space.
    pub thetas: Vec<Vec<f64>>,
    /// `trajectory[j][p]`: parameters of party `p` after round `j + 1`.
    pub trajectory: Vec<Vec<Vec<f64>>>,
    /// `gradients[j][p]`: decrypted gradient of party `p` in round `j + 1`,
    /// mapped back to the original feature space, before step-size scaling.
    pub gradients: Vec<Vec<Vec<f64>>>,
    pub metrics: RunMetrics,
    pub trace: Vec<TraceRecord>,
    pub plans: Vec<Option<CompressionPlan>>,
    /// False when the run stopped before the last round.
    pub completed: bool,
}

/// Labels as the residual rule expects them: unchanged for the linear rule,
/// `{0, 1}` or `{-1, +1}` mapped to `{-1, +1}` for the logistic rule.
pub fn encode_labels(y: &[f64], rule: ResidualRule) -> Result<Vec<f64>> {
    match rule {
        ResidualRule::Linear => {
            rule.check_labels(y)?;
            Ok(y.to_vec())
        }
        ResidualRule::LogisticTaylor => {
            let zero_one = y.iter().all(|&v| v == 0.0 || v == 1.0);
            let pm_one = y.iter().all(|&v| v == -1.0 || v == 1.0);
            if !zero_one && !pm_one {
                return Err(Error::Labels(
                    "logistic_taylor needs binary labels in {0, 1} or {-1, +1}".into(),
                ));
            }
            Ok(y.iter().map(|&v| if v > 0.0 { 1.0 } else { -1.0 }).collect())
        }
    }
}

/// Regularized mean of the loss the residual rule descends: `(u - y)^2` for
/// the linear rule, the second-order logistic expansion
/// `ln 2 - y u / 2 + u^2 / 8` for the logistic rule.
pub fn objective(scores: &[f64], y_encoded: &[f64], thetas: &[Vec<f64>], lambda: f64, rule: ResidualRule) -> f64 {
    let m = scores.len() as f64;
    let data: f64 = scores
        .iter()
        .zip(y_encoded)
        .map(|(&u, &y)| match rule {
            ResidualRule::Linear => (u - y).powi(2),
            ResidualRule::LogisticTaylor => std::f64::consts::LN_2 - 0.5 * y * u + 0.125 * u * u,
        })
        .sum();
    let reg: f64 = thetas.iter().flatten().map(|t| t * t).sum();
    data / m + 0.5 * lambda * reg
}

/// One party's model: working data (compressed when a plan is set), full and
/// working parameters, and the optimizer.
struct Learner {
    x: DMatrix<f64>,
    plan: Option<CompressionPlan>,
    theta: Vec<f64>,
    theta_c: Vec<f64>,
    opt: Optimizer,
    decrypted: BTreeMap<u32, DecryptedGradient>,
    trajectory: Vec<Vec<f64>>,
    gradients: Vec<Vec<f64>>,
}

impl Learner {
    fn new(x: &DMatrix<f64>, ratio: f64, hp: &HyperParams) -> Result<Self> {
        let n = x.ncols();
        let (x, plan) = if ratio < 1.0 {
            let mut hook = CompressionHook::new(k_for_ratio(n, ratio));
            let (plan, z) = hook.refresh(x)?;
            (z.clone(), Some(plan.clone()))
        } else {
            (x.clone(), None)
        };
        let theta = vec![0.0; n];
        let theta_c = vec![0.0; x.ncols()];
        Ok(Learner {
            x,
            plan,
            theta,
            theta_c,
            opt: Optimizer::new(hp.optimizer, n),
            decrypted: BTreeMap::new(),
            trajectory: Vec::new(),
            gradients: Vec::new(),
        })
    }

    fn batch(&self, rows: &[usize], full: bool) -> DMatrix<f64> {
        if full {
            self.x.clone()
        } else {
            self.x.select_rows(rows)
        }
    }

    /// Applies the decrypted gradient of round `j`.
    fn apply(&mut self, me: PartyId, j: u32, step: (f64, f64), counter: &OpCounter) -> Result<()> {
        let (scale, lr) = step;
        let msg = self
            .decrypted
            .remove(&j)
            .ok_or(Error::MissingShares {
                iteration: j,
                have: 0,
                need: 1,
            })?;
        let g_c = receive_gradient(me, &msg)?;
        let g = match &self.plan {
            Some(p) => p.decompress_gradient(g_c)?,
            None => g_c.to_vec(),
        };
        let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
        self.theta = self.opt.step(&self.theta, &scaled, lr)?;
        self.theta_c = match &self.plan {
            Some(p) => {
                counter.add_flops(4 * (p.n() * p.k()) as u64);
                p.compress_theta(&self.theta)?
            }
            None => self.theta.clone(),
        };
        counter.add_flops(4 * self.theta.len() as u64);
        self.trajectory.push(self.theta.clone());
        self.gradients.push(g);
        Ok(())
    }

    /// Parameters as seen through the compression, in the original space.
    fn effective_theta(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match &self.plan {
            Some(p) => p.decompress_gradient(&p.compress_theta(theta)?),
            None => Ok(theta.to_vec()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum GuestState {
    Advance(u32),
    Residual(u32),
    Gradient(u32),
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum HostState {
    Forward(u32),
    Gradient(u32),
    Done,
    Dead,
}

#[derive(Clone, Copy, Debug)]
enum Event {
    Deliver(usize),
    Wake(usize),
}

struct StepOut<C: crate::scheme::WireValue> {
    iteration: u32,
    msgs: Vec<ProtocolMessage<C>>,
    gradient_enc_mul: u64,
}

#[derive(Default)]
struct IterAcc {
    ops: OpSnapshot,
    gradient_enc_mul: u64,
    bytes: u64,
    messages: u32,
    loss: Option<f64>,
    log: Option<ReceiveLog>,
}

struct Sim<'a, S: Scheme> {
    scheme: &'a S,
    secret: &'a S::Secret,
    cfg: &'a TrainingConfig,
    costs: CostModel,
    schedule: BatchSchedule,
    y: Vec<f64>,
    k: usize,

    learners: Vec<Learner>,
    counters: Vec<OpCounter>,
    rngs: Vec<ChaCha20Rng>,
    busy: Vec<bool>,
    wait_since: Vec<Option<SimTime>>,
    cause: Vec<Option<MessageRef>>,

    guest: GuestState,
    guest_u: Vec<f64>,
    pending: Vec<ForwardShare<S::Cipher>>,
    cache: BackupCache<S::Cipher>,
    collected_through: u32,
    residual: Option<ResidualShare<S::Cipher>>,
    hosts: Vec<HostState>,
    host_residuals: Vec<BTreeMap<u32, ResidualShare<S::Cipher>>>,
    arbiter_inbox: VecDeque<Payload<S::Cipher>>,

    queue: EventQueue<Event>,
    clock: SimClock,
    in_flight: Vec<Option<(ProtocolMessage<S::Cipher>, SimTime)>>,
    timeline: Timeline,
    round_start: Vec<SimTime>,
    acc: BTreeMap<u32, IterAcc>,
    trace: Vec<TraceRecord>,
}

impl<'a, S: Scheme> Sim<'a, S> {
    fn arbiter_idx(&self) -> usize {
        self.k + 1
    }

    fn party_id(&self, idx: usize) -> PartyId {
        match idx {
            0 => PartyId::GUEST,
            i if i <= self.k => PartyId::host(i as u32),
            _ => PartyId::ARBITER,
        }
    }

    fn party_idx(&self, id: PartyId) -> usize {
        if id.is_arbiter() {
            self.arbiter_idx()
        } else {
            id.0 as usize
        }
    }

    /// `(gradient scale, learning rate)` for the update of `iteration`.
    fn step(&self, iteration: u32) -> (f64, f64) {
        let b = self.schedule.index_for(iteration);
        let hp = &self.cfg.hp;
        (hp.gradient_scale(self.schedule.rows(b).len()), hp.learning_rate)
    }

    fn max_iter(&self) -> u32 {
        self.cfg.hp.max_iterations
    }

    fn batch_rows(&self, iteration: u32) -> (u32, Vec<usize>) {
        let b = self.schedule.index_for(iteration);
        (b as u32, self.schedule.rows(b).to_vec())
    }

    fn send(&mut self, msg: ProtocolMessage<S::Cipher>, at: SimTime) {
        let bytes = msg.wire_len(self.scheme);
        let it = msg.payload.iteration();
        let tr = self
            .cfg
            .link
            .send(self.cfg.seed, it, msg.src, msg.dst, bytes, at);
        let acc = self.acc.entry(it).or_default();
        acc.bytes += bytes as u64;
        acc.messages += 1;
        let id = self.in_flight.len();
        if self.cfg.trace {
            self.trace.push(TraceRecord {
                id: id as u64,
                src: msg.src,
                dst: msg.dst,
                kind: msg.payload.kind(),
                iteration: it,
                bytes,
                sent_ns: at,
                deliver_ns: tr.deliver_at,
                slow: tr.slow,
            });
        }
        self.in_flight.push(Some((msg, at)));
        self.queue.push(tr.deliver_at, EventClass::Deliver, Event::Deliver(id));
    }

    fn deliver(&mut self, id: usize, t: SimTime) -> Result<()> {
        let (msg, sent_at) = self.in_flight[id].take().expect("message delivered twice");
        let dst = self.party_idx(msg.dst);
        self.cause[dst] = Some(MessageRef {
            src: msg.src,
            sent_at,
        });
        match msg.payload {
            Payload::Forward(share) => {
                if share.iteration <= self.collected_through {
                    self.cache.insert(share);
                } else {
                    self.pending.push(share);
                }
            }
            Payload::Residual(r) => {
                self.host_residuals[dst].insert(r.iteration, r);
            }
            p @ (Payload::Loss(_) | Payload::Gradient(_)) => self.arbiter_inbox.push_back(p),
            Payload::Decrypted(g) => {
                let me = self.party_id(dst);
                receive_gradient(me, &g)?;
                self.learners[dst].decrypted.insert(g.iteration, g);
            }
        }
        self.poll(dst, t)
    }

    fn poll(&mut self, idx: usize, t: SimTime) -> Result<()> {
        if self.busy[idx] {
            return Ok(());
        }
        let before = self.counters[idx].snapshot();
        let out = if idx == 0 {
            self.guest_step(t)?
        } else if idx <= self.k {
            self.host_step(idx)?
        } else {
            self.arbiter_step()?
        };
        let pid = self.party_id(idx);
        let Some(out) = out else {
            if self.wait_since[idx].is_none() {
                self.wait_since[idx] = Some(t);
                self.cause[idx] = None;
            }
            return Ok(());
        };
        if let Some(t0) = self.wait_since[idx].take() {
            self.timeline
                .push(pid, t0, t, SegmentKind::Wait(self.cause[idx].take()));
        }
        let delta = self.counters[idx].snapshot().since(&before);
        let (comp, enc) = self.costs.charge(&delta, self.cfg.timing);
        self.timeline
            .push(pid, t, t + comp, SegmentKind::Busy(Phase::Computation));
        self.timeline
            .push(pid, t + comp, t + comp + enc, SegmentKind::Busy(Phase::Encryption));
        let end = t + comp + enc;
        let acc = self.acc.entry(out.iteration).or_default();
        acc.ops = acc.ops.plus(&delta);
        acc.gradient_enc_mul += out.gradient_enc_mul;
        for msg in out.msgs {
            self.send(msg, end);
        }
        self.busy[idx] = true;
        self.queue.push(end, EventClass::Wake, Event::Wake(idx));
        Ok(())
    }

    fn guest_step(&mut self, t: SimTime) -> Result<Option<StepOut<S::Cipher>>> {
        let max = self.max_iter();
        match self.guest {
            GuestState::Done => Ok(None),
            GuestState::Advance(j) => {
                if j > 1 && !self.learners[0].decrypted.contains_key(&(j - 1)) {
                    return Ok(None);
                }
                if j > 1 {
                    let step = self.step(j - 1);
                    self.learners[0].apply(PartyId::GUEST, j - 1, step, &self.counters[0])?;
                }
                if j > max {
                    self.guest = GuestState::Done;
                    return Ok(Some(StepOut {
                        iteration: max,
                        msgs: Vec::new(),
                        gradient_enc_mul: 0,
                    }));
                }
                self.round_start.push(t);
                let (_, rows) = self.batch_rows(j);
                let full = self.schedule.is_full_batch();
                let xb = self.learners[0].batch(&rows, full);
                self.guest_u = local_scores(&self.counters[0], &xb, &self.learners[0].theta_c)?;
                self.guest = GuestState::Residual(j);
                Ok(Some(StepOut {
                    iteration: j,
                    msgs: Vec::new(),
                    gradient_enc_mul: 0,
                }))
            }
            GuestState::Residual(j) => {
                let (b, rows) = self.batch_rows(j);
                let host_ids: Vec<PartyId> = (1..=self.k as u32).map(PartyId::host).collect();
                let arrived: Vec<&ForwardShare<S::Cipher>> = self.pending.iter().collect();
                let (fresh_ids, stale, log) = match collect_shares(
                    j,
                    b,
                    &host_ids,
                    &arrived,
                    &self.cfg.straggler,
                    &self.cache,
                ) {
                    Collect::Wait { .. } => return Ok(None),
                    Collect::Ready { fresh, stale, log } => (
                        fresh.iter().map(|s| s.party).collect::<Vec<_>>(),
                        stale.into_iter().cloned().collect::<Vec<_>>(),
                        log,
                    ),
                };
                let (fresh, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
                    .into_iter()
                    .partition(|s| s.iteration == j && s.batch == b && fresh_ids.contains(&s.party));
                self.pending = rest;
                let mut fresh_sorted = Vec::with_capacity(fresh.len());
                for id in &fresh_ids {
                    if let Some(s) = fresh.iter().find(|s| s.party == *id) {
                        fresh_sorted.push(s.clone());
                    }
                }
                let shares: Vec<&ForwardShare<S::Cipher>> =
                    fresh_sorted.iter().chain(stale.iter()).collect();
                let y_b: Vec<f64> = rows.iter().map(|&r| self.y[r]).collect();
                let ev = Evaluator::new(self.scheme, &self.counters[0]);
                let (residual, loss) = guest_round(
                    &ev,
                    j,
                    &shares,
                    &self.guest_u,
                    &y_b,
                    &self.learners[0].theta_c,
                    self.cfg.hp.lambda,
                    self.cfg.hp.residual_rule,
                    &mut self.rngs[0],
                )?;
                for s in fresh_sorted {
                    self.cache.insert(s);
                }
                self.collected_through = j;
                // Shares of this round that arrive later go straight to the cache.
                let late: Vec<_> = std::mem::take(&mut self.pending);
                for s in late {
                    if s.iteration <= j {
                        self.cache.insert(s);
                    } else {
                        self.pending.push(s);
                    }
                }
                self.acc.entry(j).or_default().log = Some(log);
                let mut msgs = Vec::with_capacity(self.k + 1);
                for h in host_ids {
                    msgs.push(ProtocolMessage::new(
                        PartyId::GUEST,
                        h,
                        Payload::Residual(residual.clone()),
                    ));
                }
                msgs.push(ProtocolMessage::new(
                    PartyId::GUEST,
                    PartyId::ARBITER,
                    Payload::Loss(loss),
                ));
                self.residual = Some(residual);
                self.guest = GuestState::Gradient(j);
                Ok(Some(StepOut {
                    iteration: j,
                    msgs,
                    gradient_enc_mul: 0,
                }))
            }
            GuestState::Gradient(j) => {
                let (_, rows) = self.batch_rows(j);
                let full = self.schedule.is_full_batch();
                let xb = self.learners[0].batch(&rows, full);
                let d = self.residual.take().expect("residual computed");
                let ev = Evaluator::new(self.scheme, &self.counters[0]);
                let before = self.counters[0].snapshot().enc_mul;
                let g = party_gradient(
                    &ev,
                    PartyId::GUEST,
                    &d,
                    &xb,
                    &self.learners[0].theta_c,
                    self.cfg.hp.lambda,
                    &mut self.rngs[0],
                )?;
                let gm = self.counters[0].snapshot().enc_mul - before;
                self.guest = GuestState::Advance(j + 1);
                Ok(Some(StepOut {
                    iteration: j,
                    msgs: vec![ProtocolMessage::new(
                        PartyId::GUEST,
                        PartyId::ARBITER,
                        Payload::Gradient(g),
                    )],
                    gradient_enc_mul: gm,
                }))
            }
        }
    }

    fn is_dead(&self, idx: usize, j: u32) -> bool {
        self.cfg
            .faults
            .iter()
            .any(|f| f.host as usize == idx && j >= f.from_iteration)
    }

    fn host_step(&mut self, idx: usize) -> Result<Option<StepOut<S::Cipher>>> {
        let max = self.max_iter();
        let me = self.party_id(idx);
        match self.hosts[idx - 1] {
            HostState::Done | HostState::Dead => Ok(None),
            HostState::Forward(j) => {
                if j > 1 && !self.learners[idx].decrypted.contains_key(&(j - 1)) {
                    return Ok(None);
                }
                if self.is_dead(idx, j) {
                    self.hosts[idx - 1] = HostState::Dead;
                    return Ok(None);
                }
                if j > 1 {
                    let step = self.step(j - 1);
                    self.learners[idx].apply(me, j - 1, step, &self.counters[idx])?;
                }
                if j > max {
                    self.hosts[idx - 1] = HostState::Done;
                    return Ok(Some(StepOut {
                        iteration: max,
                        msgs: Vec::new(),
                        gradient_enc_mul: 0,
                    }));
                }
                let (b, rows) = self.batch_rows(j);
                let full = self.schedule.is_full_batch();
                let xb = self.learners[idx].batch(&rows, full);
                let ev = Evaluator::new(self.scheme, &self.counters[idx]);
                let (share, _) = forward(
                    &ev,
                    me,
                    j,
                    b,
                    &xb,
                    &self.learners[idx].theta_c,
                    &mut self.rngs[idx],
                )?;
                self.hosts[idx - 1] = HostState::Gradient(j);
                Ok(Some(StepOut {
                    iteration: j,
                    msgs: vec![ProtocolMessage::new(
                        me,
                        PartyId::GUEST,
                        Payload::Forward(share),
                    )],
                    gradient_enc_mul: 0,
                }))
            }
            HostState::Gradient(j) => {
                let Some(d) = self.host_residuals[idx].remove(&j) else {
                    return Ok(None);
                };
                let (_, rows) = self.batch_rows(j);
                let full = self.schedule.is_full_batch();
                let xb = self.learners[idx].batch(&rows, full);
                let ev = Evaluator::new(self.scheme, &self.counters[idx]);
                let before = self.counters[idx].snapshot().enc_mul;
                let g = party_gradient(
                    &ev,
                    me,
                    &d,
                    &xb,
                    &self.learners[idx].theta_c,
                    self.cfg.hp.lambda,
                    &mut self.rngs[idx],
                )?;
                let gm = self.counters[idx].snapshot().enc_mul - before;
                self.hosts[idx - 1] = HostState::Forward(j + 1);
                Ok(Some(StepOut {
                    iteration: j,
                    msgs: vec![ProtocolMessage::new(
                        me,
                        PartyId::ARBITER,
                        Payload::Gradient(g),
                    )],
                    gradient_enc_mul: gm,
                }))
            }
        }
    }

    fn arbiter_step(&mut self) -> Result<Option<StepOut<S::Cipher>>> {
        let Some(p) = self.arbiter_inbox.pop_front() else {
            return Ok(None);
        };
        let a = self.arbiter_idx();
        let ev = Evaluator::new(self.scheme, &self.counters[a]);
        match p {
            Payload::Gradient(g) => {
                let out = arbiter_decrypt(&ev, self.secret, &[&g], None)?;
                let msgs = out
                    .gradients
                    .into_iter()
                    .map(|dg| ProtocolMessage::new(PartyId::ARBITER, dg.party, Payload::Decrypted(dg)))
                    .collect();
                Ok(Some(StepOut {
                    iteration: g.iteration,
                    msgs,
                    gradient_enc_mul: 0,
                }))
            }
            Payload::Loss(l) => {
                let out = arbiter_decrypt(&ev, self.secret, &[], Some(&l))?;
                self.acc.entry(l.iteration).or_default().loss = out.loss;
                Ok(Some(StepOut {
                    iteration: l.iteration,
                    msgs: Vec::new(),
                    gradient_enc_mul: 0,
                }))
            }
            _ => unreachable!("only losses and gradients are queued at the arbiter"),
        }
    }
}

/// Runs `hp.max_iterations` rounds of vertical training over the simulated
/// network. `secret` is handed to the arbiter only.
pub fn run_training<S: Scheme>(
    scheme: &S,
    secret: &S::Secret,
    data: &VerticalDataset,
    cfg: &TrainingConfig,
) -> Result<TrainingResult> {
    cfg.validate(data)?;
    let rule = cfg.hp.residual_rule;
    let y = encode_labels(data.labels(), rule)?;
    let k = data.party_count() - 1;
    let costs = cfg.costs.unwrap_or_else(|| {
        if scheme.is_encrypted() {
            CostModel::for_key_bits(scheme.key_bits())
        } else {
            CostModel::plain()
        }
    });
    let learners = (0..=k)
        .map(|p| Learner::new(data.part(p), cfg.ratio_for(p), &cfg.hp))
        .collect::<Result<Vec<_>>>()?;
    let parties = k + 2;
    let counters = (0..parties)
        .map(|_| {
            if cfg.timing == TimingMode::WallClock {
                OpCounter::timed()
            } else {
                OpCounter::new()
            }
        })
        .collect();
    let rngs = (0..parties)
        .map(|i| {
            let mut r = ChaCha20Rng::seed_from_u64(cfg.seed);
            r.set_stream(i as u64 + 1);
            r
        })
        .collect();
    let mut sim = Sim {
        scheme,
        secret,
        cfg,
        costs,
        schedule: BatchSchedule::new(data.m(), cfg.hp.batch_size, cfg.seed)?,
        y,
        k,
        learners,
        counters,
        rngs,
        busy: vec![false; parties],
        wait_since: vec![None; parties],
        cause: vec![None; parties],
        guest: GuestState::Advance(1),
        guest_u: Vec::new(),
        pending: Vec::new(),
        cache: BackupCache::new(),
        collected_through: 0,
        residual: None,
        hosts: vec![HostState::Forward(1); k],
        host_residuals: vec![BTreeMap::new(); k + 1],
        arbiter_inbox: VecDeque::new(),
        queue: EventQueue::new(),
        clock: SimClock::default(),
        in_flight: Vec::new(),
        timeline: Timeline::new(),
        round_start: Vec::new(),
        acc: BTreeMap::new(),
        trace: Vec::new(),
    };
    for i in 0..parties {
        sim.queue.push(0, EventClass::Wake, Event::Wake(i));
    }
    while let Some((t, _, ev)) = sim.queue.pop() {
        sim.clock.advance_to(t);
        match ev {
            Event::Wake(i) => {
                sim.busy[i] = false;
                sim.poll(i, t)?;
            }
            Event::Deliver(id) => sim.deliver(id, t)?,
        }
    }
    finish(sim, data)
}

fn finish<S: Scheme>(sim: Sim<'_, S>, data: &VerticalDataset) -> Result<TrainingResult> {
    let cfg = sim.cfg;
    let max = cfg.hp.max_iterations;
    let completed = sim.guest == GuestState::Done;
    let rounds = sim.learners[0].trajectory.len() as u32;
    let mut warnings = Vec::new();
    if !completed {
        let waiting = match sim.guest {
            GuestState::Residual(j) => {
                let have: Vec<PartyId> = sim
                    .pending
                    .iter()
                    .filter(|s| s.iteration == j)
                    .map(|s| s.party)
                    .collect();
                let missing: Vec<String> = (1..=sim.k as u32)
                    .map(PartyId::host)
                    .filter(|h| !have.contains(h))
                    .map(|h| h.to_string())
                    .collect();
                format!("shares of round {j} from {}", missing.join(", "))
            }
            GuestState::Advance(j) => format!("the decrypted gradient of round {}", j - 1),
            GuestState::Gradient(j) => format!("its own gradient step of round {j}"),
            GuestState::Done => unreachable!(),
        };
        warnings.push(format!(
            "liveness: run stalled after {rounds} of {max} rounds; guest waiting for {waiting}"
        ));
    }

    let end = sim.timeline.end();
    let last_party = sim.timeline.last_party().unwrap_or(PartyId::GUEST);
    let other_ns = secs_to_ns(cfg.other_per_round_s);
    let party_count = sim.learners.len();

    // Parameters after each round, carrying a party's last state forward when it
    // stopped early.
    let mut trajectory = Vec::with_capacity(rounds as usize);
    let mut gradients = Vec::with_capacity(rounds as usize);
    for j in 0..rounds as usize {
        let mut th = Vec::with_capacity(party_count);
        let mut gs = Vec::with_capacity(party_count);
        for l in &sim.learners {
            let t = l
                .trajectory
                .get(j)
                .or_else(|| l.trajectory.last())
                .cloned()
                .unwrap_or_else(|| vec![0.0; l.theta.len()]);
            th.push(t);
            gs.push(l.gradients.get(j).cloned().unwrap_or_default());
        }
        trajectory.push(th);
        gradients.push(gs);
    }

    let y_enc = &sim.y;
    let mut records = Vec::with_capacity(rounds as usize);
    let mut cumulative = PhaseNs::default();
    let mut total_ops = OpSnapshot::default();
    let mut acc = sim.acc;
    for j in 1..=rounds {
        let idx = j as usize - 1;
        let from = sim.round_start[idx];
        let mut phases = if j < rounds {
            critical_path(&sim.timeline, PartyId::GUEST, from, sim.round_start[idx + 1])
        } else {
            critical_path(&sim.timeline, last_party, from, end)
        };
        phases.add(Phase::Other, other_ns);
        cumulative = cumulative.plus(&phases);
        let a = acc.remove(&j).unwrap_or_default();
        total_ops = total_ops.plus(&a.ops);
        let (objective_v, auc_v) = if cfg.evaluate {
            let (o, a) = evaluate(&sim.learners, data, &trajectory[idx], y_enc, cfg)?;
            (Some(o), a)
        } else {
            (None, None)
        };
        let log = a.log.unwrap_or_default();
        records.push(IterationRecord {
            iteration: j,
            phases: phases.to_breakdown(),
            cumulative: cumulative.to_breakdown(),
            ops: a.ops,
            gradient_enc_mul: a.gradient_enc_mul,
            bytes: a.bytes,
            messages: a.messages,
            loss: a.loss,
            objective: objective_v,
            auc: auc_v,
            arrivals: log.arrivals,
            compensated: log.compensated,
            dropped: log.dropped,
        });
    }
    for a in acc.values() {
        total_ops = total_ops.plus(&a.ops);
    }
    if rounds == 0 {
        cumulative.add(Phase::Communication, end);
    }

    let metrics = RunMetrics {
        label: cfg.label.clone(),
        key_bits: sim.scheme.key_bits(),
        iterations: records,
        totals: cumulative.to_breakdown(),
        ops: total_ops,
        warnings,
    };
    Ok(TrainingResult {
        thetas: sim.learners.iter().map(|l| l.theta.clone()).collect(),
        trajectory,
        gradients,
        metrics,
        trace: sim.trace,
        plans: sim.learners.iter().map(|l| l.plan.clone()).collect(),
        completed,
    })
}

fn evaluate(
    learners: &[Learner],
    data: &VerticalDataset,
    thetas: &[Vec<f64>],
    y_enc: &[f64],
    cfg: &TrainingConfig,
) -> Result<(f64, Option<f64>)> {
    let mut scores = DVector::zeros(data.m());
    let mut eff = Vec::with_capacity(thetas.len());
    for (p, (l, th)) in learners.iter().zip(thetas).enumerate() {
        let e = l.effective_theta(th)?;
        scores += data.part(p) * DVector::from_column_slice(&e);
        eff.push(e);
    }
    let obj = objective(
        scores.as_slice(),
        y_enc,
        &eff,
        cfg.hp.lambda,
        cfg.hp.residual_rule,
    );
    let a = auc(scores.as_slice(), data.labels()).ok();
    Ok((obj, a))
}
