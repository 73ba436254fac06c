//! Engine-level invariants: the hard wealth bound, bankruptcy absorption,
//! the self-financing identity, the martingale property under zero drift,
//! and monotonicity of the shortfall term in initial capital.

use deephedge_core::baseline::DeltaStrategy;
use deephedge_core::engine::{
    batch_loss, evaluate, roll_forward, EvalSettings, HedgeConfig,
};
use deephedge_core::market::{generate_increments, simulate_paths, MarketParams};
use deephedge_core::payoff::CallClaim;
use proptest::prelude::*;

#[test]
fn martingale_property_under_zero_drift() {
    // mu = 0, fixed bounded strategy, bound never approached:
    // E[V_T] = v0, checked within 3 standard errors on 1e5 paths
    let market =
        MarketParams { mu: 0.0, sigma: 0.3, s0: 100.0, r: 0.0, maturity: 10.0, n_steps: 100 };
    let claim = CallClaim::new(110.0);
    let config = HedgeConfig::new(10.0, 1.0);
    let half = |_k: usize, _t: f64, _s: f64| 0.5;
    let eval = EvalSettings { n_paths: 100_000, seed: 424242 };
    let report = evaluate(&half, &market, &claim, &config, &eval);
    assert_eq!(report.bankruptcies, 0);
    let se = report.terminal_wealth.std / (eval.n_paths as f64).sqrt();
    let err = (report.terminal_wealth.mean - 10.0).abs();
    assert!(err <= 3.0 * se, "mean {} deviates {} > 3se {}", report.terminal_wealth.mean, err, 3.0 * se);
}

#[test]
fn self_financing_identity_without_costs() {
    let market =
        MarketParams { mu: 0.08, sigma: 0.3, s0: 100.0, r: 0.0, maturity: 10.0, n_steps: 100 };
    let claim = CallClaim::new(110.0);
    let config = HedgeConfig::new(33.47698167873507, 1.0);
    let inc = generate_increments(200, market.n_steps, market.dt(), 8);
    let paths = simulate_paths(&market, inc);
    let strategy = DeltaStrategy::new(&market, claim);
    let sim = roll_forward(&paths, &strategy, &config);
    assert!(sim.bankrupt_at.iter().all(|b| b.is_none()));
    for i in 0..200 {
        let mut gains = 0.0;
        for k in 0..100 {
            gains += sim.positions[[i, k]] * (paths.prices[[i, k + 1]] - paths.prices[[i, k]]);
        }
        let lhs = sim.wealth[[i, 100]] - config.v0;
        assert!(
            (lhs - gains).abs() <= 1e-10 * gains.abs().max(1.0),
            "path {}: wealth change {} vs gains {}",
            i,
            lhs,
            gains
        );
    }
}

#[test]
fn shortfall_term_non_increasing_in_capital() {
    let market =
        MarketParams { mu: 0.05, sigma: 0.4, s0: 100.0, r: 0.0, maturity: 5.0, n_steps: 20 };
    let claim = CallClaim::new(110.0);
    let inc = generate_increments(300, market.n_steps, market.dt(), 99);
    let paths = simulate_paths(&market, inc);
    let bounded = |_k: usize, _t: f64, s: f64| (s / 200.0).min(1.0);
    for p in [1.0, 1.3, 2.0] {
        let mut last = f64::INFINITY;
        for v0 in [-20.0, -5.0, 0.0, 10.0, 25.0, 60.0] {
            let config = HedgeConfig::new(v0, p);
            let loss = batch_loss(&paths, &bounded, &claim, &config);
            assert!(
                loss.l_p <= last + 1e-12,
                "l_p not monotone at v0 {} (p {}): {} > {}",
                v0,
                p,
                loss.l_p,
                last
            );
            last = loss.l_p;
        }
    }
}

#[test]
fn ratio_guard_declares_immediate_bankruptcy() {
    // zero wealth with a candidate below the bound: the position-to-wealth
    // ratio is undefined and the path exits immediately
    let market =
        MarketParams { mu: 0.0, sigma: 0.5, s0: 100.0, r: 0.0, maturity: 0.2, n_steps: 2 };
    let inc = generate_increments(1, 2, market.dt(), 1);
    let paths = simulate_paths(&market, inc);
    let ds0 = paths.prices[[0, 1]] - paths.prices[[0, 0]];
    // choose the position so the candidate lands far below the bound
    let k0 = -200.0 / ds0.abs().max(1e-6) * ds0.signum();
    let strategy = move |k: usize, _t: f64, _s: f64| if k == 0 { k0 } else { 0.0 };
    let config = HedgeConfig::new(0.0, 1.0);
    let sim = roll_forward(&paths, &strategy, &config);
    assert_eq!(sim.pi_guard_bankruptcies, 1);
    assert_eq!(sim.bankrupt_at[0], Some(1));
    assert_eq!(sim.wealth[[0, 1]], config.bankruptcy_bound);
    assert_eq!(sim.wealth[[0, 2]], config.bankruptcy_bound);
    assert_eq!(sim.positions[[0, 1]], 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Wealth never crosses the bound and bankrupt paths stay frozen, for
    /// random markets, capital levels and (possibly violent) strategies.
    #[test]
    fn hard_bound_and_absorption(
        seed in any::<u64>(),
        mu in -0.5f64..0.5,
        sigma in 0.05f64..1.2,
        s0 in 20.0f64..200.0,
        maturity in 0.25f64..4.0,
        n_steps in 3usize..24,
        v0 in -80.0f64..40.0,
        base in -400.0f64..400.0,
        slope in -4000.0f64..4000.0,
        bound in -150.0f64..-1.0,
    ) {
        let market = MarketParams { mu, sigma, s0, r: 0.0, maturity, n_steps };
        let inc = generate_increments(8, n_steps, market.dt(), seed);
        let paths = simulate_paths(&market, inc);
        let strategy = move |_k: usize, _t: f64, s: f64| base + slope * (s - s0) / s0;
        let mut config = HedgeConfig::new(v0.max(bound + 1e-6), 1.5);
        config.bankruptcy_bound = bound;
        let sim = roll_forward(&paths, &strategy, &config);
        for i in 0..8 {
            for k in 0..=n_steps {
                prop_assert!(sim.wealth[[i, k]] >= bound, "wealth {} below bound {}", sim.wealth[[i, k]], bound);
            }
            prop_assert!(sim.running_min[i] >= bound);
            if let Some(b) = sim.bankrupt_at[i] {
                for k in b..=n_steps {
                    prop_assert_eq!(sim.wealth[[i, k]], bound);
                }
                for k in b..n_steps {
                    prop_assert_eq!(sim.positions[[i, k]], 0.0);
                }
            }
        }
    }

    /// The reported loss components are always non-negative and sum to the
    /// total exactly.
    #[test]
    fn loss_components_nonnegative_and_consistent(
        seed in any::<u64>(),
        v0 in -60.0f64..60.0,
        c_cost in 0.0f64..0.05,
        c_ad in 0.0f64..3.0,
        p in 0.6f64..3.0,
        base in -3.0f64..3.0,
    ) {
        let market = MarketParams { mu: 0.03, sigma: 0.4, s0: 100.0, r: 0.0, maturity: 1.0, n_steps: 6 };
        let inc = generate_increments(16, 6, market.dt(), seed);
        let paths = simulate_paths(&market, inc);
        let mut config = HedgeConfig::new(v0, p);
        config.c_cost = c_cost;
        config.c_ad = c_ad;
        let strategy = move |k: usize, _t: f64, s: f64| base * (1.0 + 0.1 * k as f64) * (s / 100.0);
        let loss = batch_loss(&paths, &strategy, &CallClaim::new(110.0), &config);
        prop_assert!(loss.l_p >= 0.0);
        prop_assert!(loss.l_cost >= 0.0);
        prop_assert!(loss.l_ad >= 0.0);
        prop_assert_eq!(loss.total, loss.l_p + loss.l_cost + loss.l_ad);
    }
}
