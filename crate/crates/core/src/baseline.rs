//! Discretized Black-Scholes delta hedging: a fixed (non-trainable)
//! strategy evaluated through the same engine as the trained networks, so
//! comparisons are paired path for path.

use crate::engine::{evaluate, EvalReport, EvalSettings, HedgeConfig, Strategy};
use crate::market::MarketParams;
use crate::payoff::{bs_delta, CallClaim};
use crate::scalar::Scalar;

/// Holds the Black-Scholes delta of the target call, recomputed at every
/// grid time from the current spot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaStrategy<T> {
    pub claim: CallClaim<T>,
    pub r: T,
    pub sigma: T,
    pub maturity: T,
}

impl<T: Scalar> DeltaStrategy<T> {
    /// Baseline with full knowledge of the market's volatility; the pricing
    /// rate comes from `market.r` (0 in the default financing-free setup).
    pub fn new(market: &MarketParams<T>, claim: CallClaim<T>) -> Self {
        assert!(market.sigma > T::zero(), "sigma must be > 0");
        DeltaStrategy { claim, r: market.r, sigma: market.sigma, maturity: market.maturity }
    }
}

/// Position held over `(t_k, t_{k+1}]`: `bs_delta` with time to maturity
/// `maturity - t_k`. Requires `t_k < maturity` (usage error otherwise).
pub fn delta_position<T: Scalar>(spot: T, t_k: T, strategy: &DeltaStrategy<T>) -> T {
    assert!(
        t_k < strategy.maturity,
        "rebalancing time {} is not before maturity {}",
        t_k,
        strategy.maturity
    );
    bs_delta(spot, &strategy.claim, strategy.r, strategy.sigma, strategy.maturity - t_k)
}

impl<T: Scalar> Strategy<T> for DeltaStrategy<T> {
    #[inline]
    fn position(&self, _step: usize, t: T, spot: T) -> T {
        delta_position(spot, t, self)
    }
}

/// Runs the delta baseline through the identical evaluation pipeline; with
/// the same `eval` settings as a deep-strategy evaluation the two reports
/// share the exact same path batch.
pub fn evaluate_baseline<T: Scalar>(
    market: &MarketParams<T>,
    claim: &CallClaim<T>,
    config: &HedgeConfig<T>,
    eval: &EvalSettings,
) -> EvalReport<T> {
    let strategy = DeltaStrategy::new(market, *claim);
    evaluate(&strategy, market, claim, config, eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EvalSettings;

    fn market() -> MarketParams<f64> {
        MarketParams { mu: 0.08, sigma: 0.3, s0: 100.0, r: 0.0, maturity: 10.0, n_steps: 100 }
    }

    #[test]
    fn deep_itm_and_otm_limits() {
        let strat = DeltaStrategy::new(&market(), CallClaim::new(110.0));
        // one step before maturity
        let t = 9.9;
        assert!(delta_position(400.0, t, &strat) > 0.999);
        assert!(delta_position(20.0, t, &strat) < 1e-6);
    }

    #[test]
    fn at_the_money_long_dated_value() {
        let strat = DeltaStrategy::new(&market(), CallClaim::new(110.0));
        let d = delta_position(110.0, 0.0, &strat);
        assert!((d - 0.6823718520013758).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "not before maturity")]
    fn rebalancing_at_maturity_is_a_usage_error() {
        let strat = DeltaStrategy::new(&market(), CallClaim::new(110.0));
        let _ = delta_position(100.0, 10.0, &strat);
    }

    #[test]
    fn positions_stay_in_unit_interval() {
        let m = market();
        let strat = DeltaStrategy::new(&m, CallClaim::new(110.0));
        let dt = m.dt();
        for k in 0..m.n_steps {
            for &spot in &[1.0, 50.0, 110.0, 400.0, 5000.0] {
                let d = strat.position(k, k as f64 * dt, spot);
                assert!((0.0..=1.0).contains(&d));
            }
        }
    }

    #[test]
    fn evaluation_is_repeatable_and_costs_add_loss() {
        let m = market();
        let claim = CallClaim::new(110.0);
        let mut config = HedgeConfig::new(33.5, 1.0);
        config.c_ad = 0.0;
        let eval = EvalSettings { n_paths: 400, seed: 17 };
        let a = evaluate_baseline(&m, &claim, &config, &eval);
        let b = evaluate_baseline(&m, &claim, &config, &eval);
        assert_eq!(a.loss.total, b.loss.total);
        assert_eq!(a.terminal_samples, b.terminal_samples);

        let mut with_costs = config;
        with_costs.c_cost = 0.01;
        let c = evaluate_baseline(&m, &claim, &with_costs, &eval);
        assert!(c.loss.total > a.loss.total, "costs must add loss on rebalancing paths");
        assert_eq!(c.loss.l_p, a.loss.l_p);
    }
}
