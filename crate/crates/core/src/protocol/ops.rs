use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use super::message::{DecryptedGradient, ForwardShare, GradientMessage, LossParts, ResidualShare};
use super::{PartyId, ResidualRule};
use crate::enc_linalg::{CipherVector, Evaluator, OpCounter};
use crate::error::{Error, Result};
use crate::scheme::Scheme;

/// Plain scores `u = X theta`.
pub fn local_scores(counter: &OpCounter, x: &DMatrix<f64>, theta: &[f64]) -> Result<Vec<f64>> {
    if x.ncols() != theta.len() {
        return Err(Error::Shape(format!(
            "batch has {} columns, parameters have {}",
            x.ncols(),
            theta.len()
        )));
    }
    counter.add_flops(2 * (x.nrows() * x.ncols()) as u64);
    let u = x * DVector::from_column_slice(theta);
    Ok(u.as_slice().to_vec())
}

/// Host forward pass: encrypts `u_i`, `sum u_i^2` and `||theta||^2`.
/// Returns the share together with the plain scores.
pub fn forward<S: Scheme, R: RngCore + ?Sized>(
    ev: &Evaluator<'_, S>,
    party: PartyId,
    iteration: u32,
    batch: u32,
    x: &DMatrix<f64>,
    theta: &[f64],
    rng: &mut R,
) -> Result<(ForwardShare<S::Cipher>, Vec<f64>)> {
    let u = local_scores(ev.counter(), x, theta)?;
    let u_sq: f64 = u.iter().map(|v| v * v).sum();
    let theta_sq: f64 = theta.iter().map(|v| v * v).sum();
    ev.counter().add_flops(2 * (u.len() + theta.len()) as u64);
    let u_enc = ev.encrypt_vec(&u, rng)?;
    let share = ForwardShare {
        party,
        iteration,
        batch,
        u_enc,
        u_sq_enc: ev.encrypt(u_sq, rng)?,
        theta_sq_enc: ev.encrypt(theta_sq, rng)?,
    };
    Ok((share, u))
}

fn check_lengths<C: crate::scheme::WireValue>(
    shares: &[&ForwardShare<C>],
    guest_u: &[f64],
    y: &[f64],
) -> Result<()> {
    if guest_u.is_empty() {
        return Err(Error::Empty);
    }
    if guest_u.len() != y.len() {
        return Err(Error::Shape(format!(
            "guest scores {} vs labels {}",
            guest_u.len(),
            y.len()
        )));
    }
    for s in shares {
        if s.u_enc.len() != y.len() {
            return Err(Error::Shape(format!(
                "share from {} has {} scores, batch has {}",
                s.party,
                s.u_enc.len(),
                y.len()
            )));
        }
    }
    Ok(())
}

fn check_same_round<C: crate::scheme::WireValue>(shares: &[&ForwardShare<C>]) -> Result<()> {
    if let Some(first) = shares.first() {
        if let Some(bad) = shares
            .iter()
            .find(|s| s.iteration != first.iteration || s.batch != first.batch)
        {
            return Err(Error::Shape(format!(
                "share from {} is for iteration {} batch {}, expected iteration {} batch {}",
                bad.party, bad.iteration, bad.batch, first.iteration, first.batch
            )));
        }
    }
    Ok(())
}

/// Element-wise sum of the hosts' encrypted scores, `None` without hosts.
fn host_sum<S: Scheme>(
    ev: &Evaluator<'_, S>,
    shares: &[&ForwardShare<S::Cipher>],
) -> Result<Option<CipherVector<S::Cipher>>> {
    let mut it = shares.iter();
    let Some(first) = it.next() else {
        return Ok(None);
    };
    let mut acc = first.u_enc.clone();
    for s in it {
        acc = ev.cv_add(&acc, &s.u_enc)?;
    }
    Ok(Some(acc))
}

fn residual_from_sum<S: Scheme, R: RngCore + ?Sized>(
    ev: &Evaluator<'_, S>,
    iteration: u32,
    sum: Option<&CipherVector<S::Cipher>>,
    guest_u: &[f64],
    y: &[f64],
    rule: ResidualRule,
    rng: &mut R,
) -> Result<ResidualShare<S::Cipher>> {
    let guest_terms: Vec<f64> = guest_u
        .iter()
        .zip(y)
        .map(|(&u, &yi)| rule.guest_term(u, yi))
        .collect();
    ev.counter().add_flops(2 * guest_terms.len() as u64);
    let guest_enc = ev.encrypt_vec(&guest_terms, rng)?;
    let d_enc = match sum {
        None => guest_enc,
        Some(sum) => {
            let weighted = match rule.host_weight() {
                w if w == 1.0 => sum.clone(),
                w => ev.cv_scale(sum, &vec![w; sum.len()])?,
            };
            ev.cv_add(&weighted, &guest_enc)?
        }
    };
    Ok(ResidualShare { iteration, d_enc })
}

/// Encrypted residual `[[d_i]]` from the hosts' shares and the guest's plain
/// scores and labels.
pub fn guest_residual<S: Scheme, R: RngCore + ?Sized>(
    ev: &Evaluator<'_, S>,
    iteration: u32,
    shares: &[&ForwardShare<S::Cipher>],
    guest_u: &[f64],
    y: &[f64],
    rule: ResidualRule,
    rng: &mut R,
) -> Result<ResidualShare<S::Cipher>> {
    check_same_round(shares)?;
    residual_unchecked(ev, iteration, shares, guest_u, y, rule, rng)
}

/// Residual over shares that may come from different iterations.
pub(crate) fn residual_unchecked<S: Scheme, R: RngCore + ?Sized>(
    ev: &Evaluator<'_, S>,
    iteration: u32,
    shares: &[&ForwardShare<S::Cipher>],
    guest_u: &[f64],
    y: &[f64],
    rule: ResidualRule,
    rng: &mut R,
) -> Result<ResidualShare<S::Cipher>> {
    check_lengths(shares, guest_u, y)?;
    rule.check_labels(y)?;
    let sum = host_sum(ev, shares)?;
    residual_from_sum(ev, iteration, sum.as_ref(), guest_u, y, rule, rng)
}

/// Guest-side plaintext parts of the loss: the full guest term `L_B` and the
/// per-sample multipliers `c_i` of the cross term `L_AB = sum_i [[u_A,i]] c_i`.
///
/// Linear: `L_B = sum (u_B - y)^2 + lambda/2 ||theta_B||^2`, `c = 2 (u_B - y)`.
/// Logistic (Taylor, labels +-1):
/// `L_B = sum [ln 2 - y u_B / 2 + u_B^2 / 8] + lambda/2 ||theta_B||^2`,
/// `c = u_B / 4 - y / 2`.
pub fn plain_loss_terms(
    guest_u: &[f64],
    y: &[f64],
    theta_guest: &[f64],
    lambda: f64,
    rule: ResidualRule,
) -> (f64, Vec<f64>) {
    let reg = 0.5 * lambda * theta_guest.iter().map(|t| t * t).sum::<f64>();
    let (data, cross): (f64, Vec<f64>) = match rule {
        ResidualRule::Linear => (
            guest_u.iter().zip(y).map(|(u, yi)| (u - yi).powi(2)).sum(),
            guest_u.iter().zip(y).map(|(u, yi)| 2.0 * (u - yi)).collect(),
        ),
        ResidualRule::LogisticTaylor => (
            guest_u
                .iter()
                .zip(y)
                .map(|(u, yi)| std::f64::consts::LN_2 - 0.5 * yi * u + 0.125 * u * u)
                .sum(),
            guest_u.iter().zip(y).map(|(u, yi)| 0.25 * u - 0.5 * yi).collect(),
        ),
    };
    (data + reg, cross)
}

/// Coefficient of a host's own squared scores inside `L_A`.
fn host_square_weight(rule: ResidualRule) -> f64 {
    match rule {
        ResidualRule::Linear => 1.0,
        ResidualRule::LogisticTaylor => 0.125,
    }
}

#[allow(clippy::too_many_arguments)]
fn loss_from_sum<S: Scheme, R: RngCore + ?Sized>(
    ev: &Evaluator<'_, S>,
    iteration: u32,
    shares: &[&ForwardShare<S::Cipher>],
    sum: Option<&CipherVector<S::Cipher>>,
    guest_u: &[f64],
    y: &[f64],
    theta_guest: &[f64],
    lambda: f64,
    rule: ResidualRule,
    rng: &mut R,
) -> Result<LossParts<S::Cipher>> {
    let scheme = ev.scheme();
    let (l_b_plain, cross) = plain_loss_terms(guest_u, y, theta_guest, lambda, rule);
    ev.counter().add_flops(6 * guest_u.len() as u64);

    // L_A keeps each host's own squares and drops host-host cross products,
    // which would need ciphertext-by-ciphertext multiplication.
    let l_a = if shares.is_empty() {
        scheme.zero()
    } else {
        let mut sq = shares[0].u_sq_enc.clone();
        let mut th = shares[0].theta_sq_enc.clone();
        for s in &shares[1..] {
            sq = ev.add(&sq, &s.u_sq_enc)?;
            th = ev.add(&th, &s.theta_sq_enc)?;
        }
        let w = host_square_weight(rule);
        if w != 1.0 {
            sq = ev.scalar_mul(&sq, w)?;
        }
        ev.add(&sq, &ev.scalar_mul(&th, 0.5 * lambda)?)?
    };
    let l_b = ev.encrypt(l_b_plain, rng)?;
    let l_ab = match sum {
        None => scheme.zero(),
        Some(sum) => ev.cv_dot_plain(sum, &cross)?,
    };
    let l = ev.add(&ev.add(&l_a, &l_b)?, &l_ab)?;
    Ok(LossParts {
        iteration,
        l_a,
        l_b,
        l_ab,
        l,
    })
}

/// Encrypted loss `[[L]] = [[L_A]] + [[L_B]] + [[L_AB]]`.
#[allow(clippy::too_many_arguments)]
pub fn encrypted_loss<S: Scheme, R: RngCore + ?Sized>(
    ev: &Evaluator<'_, S>,
    iteration: u32,
    shares: &[&ForwardShare<S::Cipher>],
    guest_u: &[f64],
    y: &[f64],
    theta_guest: &[f64],
    lambda: f64,
    rule: ResidualRule,
    rng: &mut R,
) -> Result<LossParts<S::Cipher>> {
    check_same_round(shares)?;
    check_lengths(shares, guest_u, y)?;
    rule.check_labels(y)?;
    let sum = host_sum(ev, shares)?;
    loss_from_sum(
        ev,
        iteration,
        shares,
        sum.as_ref(),
        guest_u,
        y,
        theta_guest,
        lambda,
        rule,
        rng,
    )
}

/// Residual and loss together, summing the host shares once. Shares may mix
/// iterations (stale compensation); the caller is responsible for that policy.
#[allow(clippy::too_many_arguments)]
pub fn guest_round<S: Scheme, R: RngCore + ?Sized>(
    ev: &Evaluator<'_, S>,
    iteration: u32,
    shares: &[&ForwardShare<S::Cipher>],
    guest_u: &[f64],
    y: &[f64],
    theta_guest: &[f64],
    lambda: f64,
    rule: ResidualRule,
    rng: &mut R,
) -> Result<(ResidualShare<S::Cipher>, LossParts<S::Cipher>)> {
    check_lengths(shares, guest_u, y)?;
    rule.check_labels(y)?;
    let sum = host_sum(ev, shares)?;
    let residual = residual_from_sum(ev, iteration, sum.as_ref(), guest_u, y, rule, rng)?;
    let loss = loss_from_sum(
        ev,
        iteration,
        shares,
        sum.as_ref(),
        guest_u,
        y,
        theta_guest,
        lambda,
        rule,
        rng,
    )?;
    Ok((residual, loss))
}

/// `[[X^T d]] + [[lambda theta]]`.
pub fn party_gradient<S: Scheme, R: RngCore + ?Sized>(
    ev: &Evaluator<'_, S>,
    party: PartyId,
    d: &ResidualShare<S::Cipher>,
    x_local: &DMatrix<f64>,
    theta: &[f64],
    lambda: f64,
    rng: &mut R,
) -> Result<GradientMessage<S::Cipher>> {
    if x_local.ncols() != theta.len() {
        return Err(Error::Shape(format!(
            "local data has {} columns, parameters have {}",
            x_local.ncols(),
            theta.len()
        )));
    }
    let xtd = ev.encrypted_gradient_matvec(&d.d_enc, x_local)?;
    let reg: Vec<f64> = theta.iter().map(|t| lambda * t).collect();
    ev.counter().add_flops(theta.len() as u64);
    let reg_enc = ev.encrypt_vec(&reg, rng)?;
    Ok(GradientMessage {
        party,
        iteration: d.iteration,
        g_enc: ev.cv_add(&xtd, &reg_enc)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArbiterOutput {
    pub gradients: Vec<DecryptedGradient>,
    pub loss: Option<f64>,
}

/// Decrypts each gradient for its own sender, and the total loss.
pub fn arbiter_decrypt<S: Scheme>(
    ev: &Evaluator<'_, S>,
    secret: &S::Secret,
    msgs: &[&GradientMessage<S::Cipher>],
    loss: Option<&LossParts<S::Cipher>>,
) -> Result<ArbiterOutput> {
    let gradients = msgs
        .iter()
        .map(|m| {
            Ok(DecryptedGradient {
                party: m.party,
                iteration: m.iteration,
                g: ev.decrypt_vec(secret, &m.g_enc)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = loss.map(|l| ev.decrypt(secret, &l.l)).transpose()?;
    Ok(ArbiterOutput { gradients, loss })
}

/// Accepts a decrypted gradient only at the party it was computed for.
pub fn receive_gradient(me: PartyId, msg: &DecryptedGradient) -> Result<&[f64]> {
    if msg.party != me {
        return Err(Error::Misrouted {
            expected: msg.party,
            actual: me,
        });
    }
    Ok(&msg.g)
}

/// `theta - mu * g`.
pub fn apply_update(theta: &[f64], g: &[f64], mu: f64) -> Result<Vec<f64>> {
    if theta.len() != g.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries, parameters have {}",
            g.len(),
            theta.len()
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(theta.iter().zip(g).map(|(t, gi)| t - mu * gi).collect())
}
