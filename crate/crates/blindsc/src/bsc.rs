//! Binary symmetric channel: hard sampling and the continuous relaxation
//! with analytic gradients used as the training-time channel surrogate.
//!
//! The hard channel flips bit `b` with probability `μ`:
//! `b̂ = ((2b−1)e + 1)/2` with `e = −1` w.p. `μ`, else `+1`. The relaxed
//! channel replaces `e` with
//! `ẽ = −tanh((logit μ + logit u)/τ)` for `u ~ U(0,1)`, which preserves
//! the exact flip marginal (`P(ẽ < 0) = μ` for every `τ > 0`) while being
//! differentiable in `μ`.

use crate::error::{Error, Result};
use rand::Rng;

/// Uniform draws are clamped to this band before the logit to avoid
/// overflow at the ends of the interval.
const U_CLAMP: f64 = 1e-7;

/// Keeps `sigmoid(raw)/2` strictly inside `(0, 0.5)` at f64 resolution.
const MU_MARGIN: f64 = 1e-12;

/// Unconstrained raw parameters behind the bit-flip probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMuVector(Vec<f64>);

impl RawMuVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid("raw_mu", format!("entry {i} = {v} not finite")));
            }
        }
        Ok(RawMuVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Raw value whose transform equals the given flip probability,
    /// i.e. the inverse of `μ = sigmoid(raw)/2`.
    pub fn from_mu_targets(mu: &[f64]) -> Result<Self> {
        let mut raw = Vec::with_capacity(mu.len());
        for (i, &m) in mu.iter().enumerate() {
            if !(m > 0.0 && m < 0.5) {
                return Err(Error::invalid(
                    "mu",
                    format!("entry {i} = {m} outside (0, 0.5)"),
                ));
            }
            raw.push((2.0 * m / (1.0 - 2.0 * m)).ln());
        }
        Ok(RawMuVector(raw))
    }
}

/// Trained bit-flip probabilities together with their ascending-sort
/// permutation. Every entry lies strictly inside `(0, 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BitFlipSet {
    mu: Vec<f64>,
    sort_perm: Vec<usize>,
}

impl BitFlipSet {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        for (i, &m) in mu.iter().enumerate() {
            if !(m > 0.0 && m < 0.5) {
                return Err(Error::invalid(
                    "mu",
                    format!("entry {i} = {m} outside (0, 0.5)"),
                ));
            }
        }
        let mut sort_perm: Vec<usize> = (0..mu.len()).collect();
        sort_perm.sort_by(|&a, &b| mu[a].total_cmp(&mu[b]).then(a.cmp(&b)));
        Ok(BitFlipSet { mu, sort_perm })
    }

    pub fn values(&self) -> &[f64] {
        &self.mu
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Permutation `perm` such that `mu[perm[0]] <= mu[perm[1]] <= …`.
    pub fn sort_perm(&self) -> &[usize] {
        &self.sort_perm
    }

    /// Flip probabilities in ascending order.
    pub fn sorted_values(&self) -> Vec<f64> {
        self.sort_perm.iter().map(|&i| self.mu[i]).collect()
    }

    pub fn mean(&self) -> f64 {
        self.mu.iter().sum::<f64>() / self.mu.len() as f64
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Map raw parameters to flip probabilities, `μ = sigmoid(raw)/2`,
/// elementwise and strictly inside `(0, 0.5)`.
pub fn mu_from_raw(raw: &RawMuVector) -> BitFlipSet {
    let mu = raw
        .values()
        .iter()
        .map(|&r| (sigmoid(r) / 2.0).clamp(MU_MARGIN, 0.5 - MU_MARGIN))
        .collect();
    BitFlipSet::new(mu).expect("clamped transform is always in range")
}

/// Derivative of `sigmoid(raw)/2` with respect to `raw`, expressed in
/// terms of `μ`: `μ(1 − 2μ)`.
pub(crate) fn d_mu_d_raw(mu: f64) -> f64 {
    mu * (1.0 - 2.0 * mu)
}

fn check_mu(mu: f64) -> Result<f64> {
    Error::require_finite("mu", mu)?;
    if !(mu > 0.0 && mu < 0.5) {
        return Err(Error::invalid("mu", format!("must be in (0, 0.5), got {mu}")));
    }
    Ok(mu)
}

fn check_bit(b: u8) -> Result<f64> {
    match b {
        0 => Ok(0.0),
        1 => Ok(1.0),
        _ => Err(Error::invalid("bit", format!("must be 0 or 1, got {b}"))),
    }
}

/// Hard error sign for a given uniform draw: `−1` iff `u > 1 − μ`.
///
/// This is the coupling used by [`relax_error`]: for the same `u`, the
/// relaxed error is negative exactly when the hard error flips.
pub fn hard_error(mu: f64, u: f64) -> Result<i8> {
    check_mu(mu)?;
    Error::require_finite("u", u)?;
    Ok(if u > 1.0 - mu { -1 } else { 1 })
}

/// Pass `b` through a hard BSC with flip probability `mu`.
pub fn sample_hard<R: Rng + ?Sized>(b: u8, mu: f64, rng: &mut R) -> Result<u8> {
    let bv = check_bit(b)?;
    let e = hard_error(mu, rng.gen::<f64>())?;
    Ok((((2.0 * bv - 1.0) * f64::from(e) + 1.0) / 2.0) as u8)
}

fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

fn relax_argument(mu: f64, u: f64, tau: f64) -> Result<f64> {
    check_mu(mu)?;
    Error::require_finite("u", u)?;
    Error::require_finite("tau", tau)?;
    if tau <= 0.0 {
        return Err(Error::invalid("tau", format!("must be > 0, got {tau}")));
    }
    if u <= 0.0 || u >= 1.0 {
        // logit singularity
        return Err(Error::invalid("u", format!("must be in (0, 1), got {u}")));
    }
    let u = u.clamp(U_CLAMP, 1.0 - U_CLAMP);
    Ok((logit(mu) + logit(u)) / tau)
}

/// Continuous relaxation of the BSC error sign:
/// `ẽ = −tanh((logit μ + logit u)/τ)`.
pub fn relax_error(mu: f64, u: f64, tau: f64) -> Result<f64> {
    Ok(-relax_argument(mu, u, tau)?.tanh())
}

/// `sech²` computed from the negative-exponent side so large arguments
/// underflow to zero instead of overflowing.
fn sech2(x: f64) -> f64 {
    let a = x.abs();
    if a > 350.0 {
        return 0.0;
    }
    let e = (-2.0 * a).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// Analytic gradient `∂ẽ/∂μ = −sech²((logit μ + logit u)/τ) / (τ·μ(1−μ))`.
/// Always non-positive.
pub fn relax_error_grad(mu: f64, u: f64, tau: f64) -> Result<f64> {
    let arg = relax_argument(mu, u, tau)?;
    Ok(-sech2(arg) / (tau * mu * (1.0 - mu)))
}

/// Relaxed channel output `b̂ = ((2b−1)ẽ + 1)/2 ∈ [0, 1]`.
///
/// The partial derivatives used by backpropagation are
/// `∂b̂/∂ẽ = b − 1/2` and `∂b̂/∂b = ẽ`.
pub fn transmit_relaxed(b: u8, e_tilde: f64) -> Result<f64> {
    let bv = check_bit(b)?;
    Error::require_finite("e_tilde", e_tilde)?;
    if !(-1.0..=1.0).contains(&e_tilde) {
        return Err(Error::invalid(
            "e_tilde",
            format!("must be in [-1, 1], got {e_tilde}"),
        ));
    }
    Ok(((2.0 * bv - 1.0) * e_tilde + 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mu_from_raw_reference_points() {
        let raw = RawMuVector::new(vec![0.0, (1.0f64 / 3.0).ln(), -60.0, 60.0]).unwrap();
        let set = mu_from_raw(&raw);
        assert_eq!(set.values()[0], 0.25);
        assert!((set.values()[1] - 0.125).abs() < 1e-15);
        // limits approached but never attained
        assert!(set.values()[2] > 0.0);
        assert!(set.values()[3] < 0.5);
    }

    #[test]
    fn raw_round_trips_mu_targets() {
        let targets = [0.01, 0.125, 0.25, 0.49];
        let raw = RawMuVector::from_mu_targets(&targets).unwrap();
        let set = mu_from_raw(&raw);
        for (got, want) in set.values().iter().zip(targets) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn bit_flip_set_validates_and_sorts() {
        assert!(BitFlipSet::new(vec![0.5]).is_err());
        assert!(BitFlipSet::new(vec![0.0]).is_err());
        assert!(BitFlipSet::new(vec![-0.1]).is_err());
        let set = BitFlipSet::new(vec![0.2, 0.01, 0.1, 0.02]).unwrap();
        assert_eq!(set.sort_perm(), &[1, 3, 2, 0]);
        assert_eq!(set.sorted_values(), vec![0.01, 0.02, 0.1, 0.2]);
    }

    #[test]
    fn hard_channel_flip_algebra() {
        // (b=1, e=-1) -> 0 and (b=0, e=+1) -> 0
        assert_eq!((((2.0 * 1.0 - 1.0) * -1.0 + 1.0) / 2.0) as u8, 0);
        assert_eq!((((2.0 * 0.0 - 1.0) * 1.0 + 1.0) / 2.0) as u8, 0);
    }

    #[test]
    fn hard_flip_rate_matches_mu() {
        let mu = 0.23;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000u32;
        let mut flips = 0u32;
        for _ in 0..n {
            if sample_hard(1, mu, &mut rng).unwrap() == 0 {
                flips += 1;
            }
        }
        let rate = f64::from(flips) / f64::from(n);
        let sigma = (mu * (1.0 - mu) / f64::from(n)).sqrt();
        assert!((rate - mu).abs() < 3.0 * sigma, "rate {rate}");
    }

    #[test]
    fn relax_error_closed_form() {
        // logit(0.25) = ln(1/3), logit(0.5) = 0 → ẽ = tanh(ln 3) = 0.8
        let v = relax_error(0.25, 0.5, 1.0).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
        // τ→0 saturates toward ∓1
        let v = relax_error(0.4, 0.9, 1e-3).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
        assert!(relax_error(0.25, 0.0, 1.0).is_err());
        assert!(relax_error(0.25, 1.0, 1.0).is_err());
        assert!(relax_error(0.6, 0.5, 1.0).is_err());
        assert!(relax_error(0.25, 0.5, 0.0).is_err());
    }

    #[test]
    fn relax_sign_matches_hard_error() {
        for &mu in &[0.05, 0.25, 0.45] {
            for &tau in &[0.5, 1.0, 2.0] {
                for i in 1..200 {
                    let u = i as f64 / 200.0;
                    let e_soft = relax_error(mu, u, tau).unwrap();
                    let e_hard = hard_error(mu, u).unwrap();
                    if e_soft != 0.0 {
                        assert_eq!(
                            e_soft < 0.0,
                            e_hard < 0,
                            "sign mismatch at mu={mu} u={u} tau={tau}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn relax_marginal_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &mu in &[0.1, 0.3] {
            for &tau in &[0.5, 2.0] {
                let n = 200_000;
                let mut neg = 0u32;
                for _ in 0..n {
                    let u = rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12);
                    if relax_error(mu, u, tau).unwrap() < 0.0 {
                        neg += 1;
                    }
                }
                let rate = f64::from(neg) / f64::from(n);
                let sigma = (mu * (1.0 - mu) / f64::from(n)).sqrt();
                assert!((rate - mu).abs() < 4.0 * sigma, "mu={mu} tau={tau} rate={rate}");
            }
        }
    }

    #[test]
    fn grad_matches_finite_difference() {
        let h = 1e-6;
        for &mu in &[0.05, 0.15, 0.25, 0.35, 0.45] {
            for &u in &[0.1, 0.3, 0.5, 0.7, 0.9] {
                for &tau in &[0.5, 1.0, 2.0] {
                    let e = relax_error(mu, u, tau).unwrap();
                    if e.abs() > 1.0 - 1e-9 {
                        continue;
                    }
                    let fwd = relax_error(mu + h, u, tau).unwrap();
                    let bwd = relax_error(mu - h, u, tau).unwrap();
                    let fd = (fwd - bwd) / (2.0 * h);
                    let an = relax_error_grad(mu, u, tau).unwrap();
                    let denom = fd.abs().max(1e-12);
                    assert!(
                        ((an - fd) / denom).abs() < 1e-5,
                        "mu={mu} u={u} tau={tau}: analytic {an} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn grad_always_non_positive() {
        for &mu in &[0.01, 0.2, 0.49] {
            for &u in &[0.01, 0.5, 0.99] {
                assert!(relax_error_grad(mu, u, 1.0).unwrap() <= 0.0);
            }
        }
    }

    #[test]
    fn transmit_relaxed_algebra() {
        assert!((transmit_relaxed(1, 0.8).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(transmit_relaxed(1, 1.0).unwrap(), 1.0);
        assert_eq!(transmit_relaxed(0, 1.0).unwrap(), 0.0);
        assert_eq!(transmit_relaxed(0, -1.0).unwrap(), 1.0);
        assert_eq!(transmit_relaxed(1, -1.0).unwrap(), 0.0);
        assert!(transmit_relaxed(2, 0.0).is_err());
        assert!(transmit_relaxed(0, 1.5).is_err());
    }
}
