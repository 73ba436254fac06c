//! Claim payoffs, the lower-partial-moment shortfall loss family, and the
//! Black-Scholes closed forms used by the delta-hedge baseline.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// A contingent claim on the terminal price.
pub trait Claim<T> {
    fn payoff(&self, s_terminal: T) -> T;
}

/// European call option.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CallClaim<T> {
    /// Strike, > 0.
    pub strike: T,
}

impl<T: Scalar> CallClaim<T> {
    pub fn new(strike: T) -> Self {
        assert!(strike > T::zero(), "strike must be > 0, got {}", strike);
        Self { strike }
    }
}

impl<T: Scalar> Claim<T> for CallClaim<T> {
    #[inline]
    fn payoff(&self, s_terminal: T) -> T {
        call_payoff(s_terminal, self)
    }
}

/// `(s - strike)_+`.
#[inline]
pub fn call_payoff<T: Scalar>(s_terminal: T, claim: &CallClaim<T>) -> T {
    debug_assert!(s_terminal >= T::zero());
    (s_terminal - claim.strike).max(T::zero())
}

/// The shortfall-loss family `l(x) = x^p / p`, parameterized by the
/// risk-aversion exponent `p > 0`.
///
/// Any positive `p` is admitted at the type level; the regime `p < 1`
/// produces discontinuous optimal profiles and is not a supported training
/// target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec<T> {
    pub p: T,
}

impl<T: Scalar> LossSpec<T> {
    pub fn new(p: T) -> Self {
        assert!(p > T::zero(), "risk-aversion exponent p must be > 0, got {}", p);
        Self { p }
    }
}

/// Shortfall loss `l((h - v_terminal)_+)` with `l(x) = x^p / p`.
///
/// Zero whenever `v_terminal >= h`.
#[inline]
pub fn shortfall_loss<T: Scalar>(h: T, v_terminal: T, spec: &LossSpec<T>) -> T {
    let shortfall = (h - v_terminal).max(T::zero());
    if shortfall > T::zero() {
        shortfall.powf(spec.p) / spec.p
    } else {
        T::zero()
    }
}

/// Standard normal CDF via the erf identity `Phi(x) = erfc(-x / sqrt(2)) / 2`,
/// evaluated in double precision (absolute error below 1e-15 inherited from
/// `libm::erfc`).
#[inline]
pub fn norm_cdf<T: Scalar>(x: T) -> T {
    T::of(0.5 * libm::erfc(-x.as_f64() / std::f64::consts::SQRT_2))
}

fn d1<T: Scalar>(spot: T, strike: T, r: T, sigma: T, tau: T) -> T {
    let half = T::of(0.5);
    ((spot / strike).ln() + (r + half * sigma * sigma) * tau) / (sigma * tau.sqrt())
}

/// Black-Scholes call value; at `tau = 0` returns the intrinsic value.
pub fn bs_price<T: Scalar>(spot: T, claim: &CallClaim<T>, r: T, sigma: T, tau: T) -> T {
    assert!(spot > T::zero(), "spot must be > 0, got {}", spot);
    assert!(sigma > T::zero(), "sigma must be > 0, got {}", sigma);
    assert!(tau >= T::zero(), "tau must be >= 0, got {}", tau);
    if tau == T::zero() {
        return call_payoff(spot, claim);
    }
    let d1 = d1(spot, claim.strike, r, sigma, tau);
    let d2 = d1 - sigma * tau.sqrt();
    spot * norm_cdf(d1) - claim.strike * (-r * tau).exp() * norm_cdf(d2)
}

/// Black-Scholes call delta `Phi(d1)`, in [0, 1].
///
/// At expiry the kink is resolved as 1 in the money, 0 out of the money and
/// 0.5 exactly at the strike (a fixed convention for a measure-zero event).
pub fn bs_delta<T: Scalar>(spot: T, claim: &CallClaim<T>, r: T, sigma: T, tau: T) -> T {
    assert!(spot > T::zero(), "spot must be > 0, got {}", spot);
    assert!(sigma > T::zero(), "sigma must be > 0, got {}", sigma);
    if tau <= T::zero() {
        return if spot > claim.strike {
            T::one()
        } else if spot < claim.strike {
            T::zero()
        } else {
            T::of(0.5)
        };
    }
    norm_cdf(d1(spot, claim.strike, r, sigma, tau))
}
