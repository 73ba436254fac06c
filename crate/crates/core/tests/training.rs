//! Training-loop behavior: descent on average, reproducibility, and the
//! delta baseline's discretization-error convergence on a common Brownian
//! driver.

use deephedge_core::baseline::DeltaStrategy;
use deephedge_core::engine::{batch_loss, HedgeConfig, TrainSettings};
use deephedge_core::market::{coarsen_increments, generate_increments, simulate_paths, MarketParams};
use deephedge_core::payoff::{bs_price, CallClaim};

fn paper_market() -> MarketParams<f64> {
    MarketParams { mu: 0.08, sigma: 0.3, s0: 100.0, r: 0.0, maturity: 10.0, n_steps: 100 }
}

#[test]
fn loss_descends_on_average() {
    // pure shortfall objective (no costs, no penalty), p = 2: the batch-mean
    // total loss over the last 50 iterations must beat the first 50
    let market = paper_market();
    let claim = CallClaim::new(110.0);
    let mut config = HedgeConfig::new(16.738490839367536, 2.0);
    config.c_ad = 0.0;
    let mut settings = TrainSettings::new(2718);
    settings.batch_size = 64;
    settings.n_iterations = 200;
    let out = deephedge_core::engine::train(&market, &claim, &config, &settings).unwrap();
    assert_eq!(out.history.len(), 200);
    assert!(out.history.iter().all(|l| l.is_finite()));
    let first: f64 = out.history[..50].iter().map(|l| l.total).sum::<f64>() / 50.0;
    let last: f64 = out.history[150..].iter().map(|l| l.total).sum::<f64>() / 50.0;
    assert!(last < first, "no descent: first-50 mean {} last-50 mean {}", first, last);
}

#[test]
fn training_runs_are_bit_identical() {
    let market = MarketParams { n_steps: 10, maturity: 1.0, ..paper_market() };
    let claim = CallClaim::new(110.0);
    let config = HedgeConfig::new(5.0, 1.1);
    let mut settings = TrainSettings::new(5);
    settings.batch_size = 16;
    settings.n_iterations = 30;
    let a = deephedge_core::engine::train(&market, &claim, &config, &settings).unwrap();
    let b = deephedge_core::engine::train(&market, &claim, &config, &settings).unwrap();
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.l_p, y.l_p);
        assert_eq!(x.l_cost, y.l_cost);
        assert_eq!(x.l_ad, y.l_ad);
        assert_eq!(x.total, y.total);
    }
    assert_eq!(a.strategy, b.strategy);
}

#[test]
fn delta_hedge_error_shrinks_with_refinement() {
    // one Brownian driver sampled at N = 400 and coarsened to 100 and 25;
    // with full Black-Scholes capital and no costs the shortfall term of the
    // delta hedge must decrease strictly in N
    let base = paper_market();
    let claim = CallClaim::new(110.0);
    let v0 = bs_price(base.s0, &claim, 0.0, base.sigma, base.maturity);
    let n_paths = 4000;

    let fine_market = MarketParams { n_steps: 400, ..base };
    let fine = generate_increments(n_paths, 400, fine_market.dt(), 314);

    let mut losses = Vec::new();
    for n in [25usize, 100, 400] {
        let market = MarketParams { n_steps: n, ..base };
        let incs = coarsen_increments(&fine, 400 / n);
        let paths = simulate_paths(&market, incs);
        let mut config = HedgeConfig::new(v0, 1.0);
        config.c_ad = 0.0;
        let strategy = DeltaStrategy::new(&market, claim);
        let loss = batch_loss(&paths, &strategy, &claim, &config);
        losses.push(loss.l_p);
    }
    assert!(
        losses[0] > losses[1] && losses[1] > losses[2],
        "shortfall not decreasing across refinements: {:?}",
        losses
    );
}
