//! Geometric-Brownian-motion market simulation on a uniform time grid.
//!
//! Prices are stepped with the exact lognormal recursion
//! `S_{k+1} = S_k * exp((mu - sigma^2/2) dt + sigma dW_k)`, so simulated
//! prices carry no discretization bias of their own; only the hedging grid
//! is discrete. The Brownian increments that drive each step are stored
//! alongside the prices because the wealth recursion's geometric fallback
//! consumes the same increment as the stock step.
//!
//! Reproducibility: each path draws from its own ChaCha8 stream
//! (`seed_from_u64(seed)` + `set_stream(path_index)`), so a batch is
//! bit-identical for a given `(seed, shape)` within this implementation,
//! independent of how paths are partitioned across threads, and a longer
//! batch extends a shorter one path-for-path. Across implementations only
//! distribution-level agreement is promised.

use std::io;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Parameters of the simulated Black-Scholes market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams<T> {
    /// Drift per year.
    pub mu: T,
    /// Volatility per sqrt-year, > 0.
    pub sigma: T,
    /// Initial price, > 0.
    pub s0: T,
    /// Risk-free rate per year; used only by the pricing formulas of the
    /// delta-hedge baseline, never by the wealth recursion.
    pub r: T,
    /// Horizon in years, > 0.
    pub maturity: T,
    /// Number of time steps N (grid has N+1 points), >= 1.
    pub n_steps: usize,
}

impl<T: Scalar> MarketParams<T> {
    /// Grid spacing `maturity / n_steps`.
    #[inline]
    pub fn dt(&self) -> T {
        self.maturity / T::of_usize(self.n_steps)
    }

    /// Panics if any invariant is violated (usage error).
    pub fn validate(&self) {
        assert!(self.sigma > T::zero(), "sigma must be > 0, got {}", self.sigma);
        assert!(self.s0 > T::zero(), "s0 must be > 0, got {}", self.s0);
        assert!(self.maturity > T::zero(), "maturity must be > 0, got {}", self.maturity);
        assert!(self.n_steps >= 1, "n_steps must be >= 1");
    }
}

/// A matrix of Brownian increments: one row per path, one column per step,
/// entries distributed N(0, dt).
#[derive(Debug, Clone)]
pub struct Increments<T> {
    pub values: Array2<T>,
    /// Grid spacing the increments were drawn for.
    pub dt: T,
    /// Seed that produced the matrix (0 by convention for crafted inputs).
    pub seed: u64,
}

/// Fills `out` with the increments of one path: independent N(0, dt) draws
/// from the ChaCha8 stream addressed by `(seed, path_index)`.
pub fn fill_path_increments<T: Scalar>(seed: u64, path_index: u64, dt: T, out: &mut [T]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    let scale = dt.sqrt();
    for slot in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *slot = scale * T::of(z);
    }
}

/// Draws a batch of Brownian increments with mean 0 and variance `dt`.
///
/// Identical `(seed, n_paths, n_steps, dt)` yield a bit-identical matrix.
pub fn generate_increments<T: Scalar>(
    n_paths: usize,
    n_steps: usize,
    dt: T,
    seed: u64,
) -> Increments<T> {
    assert!(n_paths >= 1, "n_paths must be >= 1");
    assert!(n_steps >= 1, "n_steps must be >= 1");
    assert!(dt >= T::zero(), "dt must be >= 0, got {}", dt);
    let mut values = Array2::zeros((n_paths, n_steps));
    for (i, mut row) in values.rows_mut().into_iter().enumerate() {
        fill_path_increments(seed, i as u64, dt, row.as_slice_mut().expect("row contiguous"));
    }
    Increments { values, dt, seed }
}

/// Sums groups of `factor` consecutive fine increments into one coarse
/// increment, producing the same Brownian path on a grid `factor` times
/// coarser. Requires `n_steps % factor == 0`.
pub fn coarsen_increments<T: Scalar>(fine: &Increments<T>, factor: usize) -> Increments<T> {
    assert!(factor >= 1, "factor must be >= 1");
    let (n_paths, n_fine) = fine.values.dim();
    assert!(
        n_fine % factor == 0,
        "step count {} not divisible by coarsening factor {}",
        n_fine,
        factor
    );
    let n_coarse = n_fine / factor;
    let mut values = Array2::zeros((n_paths, n_coarse));
    for i in 0..n_paths {
        for k in 0..n_coarse {
            let mut acc = T::zero();
            for j in 0..factor {
                acc += fine.values[[i, k * factor + j]];
            }
            values[[i, k]] = acc;
        }
    }
    Increments { values, dt: fine.dt * T::of_usize(factor), seed: fine.seed }
}

/// A batch of simulated price paths together with the increments that
/// generated them. Immutable after construction; cheap to share read-only.
#[derive(Debug, Clone)]
pub struct PathBatch<T> {
    /// Prices, shape `n_paths x (n_steps + 1)`; column 0 equals `s0`.
    pub prices: Array2<T>,
    /// The Brownian increments consumed by each price step,
    /// shape `n_paths x n_steps`.
    pub increments: Array2<T>,
    /// Grid spacing in years.
    pub dt: T,
    /// Seed that produced the increments.
    pub seed: u64,
    /// Market the batch was simulated under.
    pub market: MarketParams<T>,
}

impl<T: Scalar> PathBatch<T> {
    #[inline]
    pub fn n_paths(&self) -> usize {
        self.prices.nrows()
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.increments.ncols()
    }

    /// Writes the batch in the debugging CSV layout: header then one row
    /// `path,step,price` per grid point, path-major.
    pub fn write_debug_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "path,step,price")?;
        for i in 0..self.n_paths() {
            for k in 0..=self.n_steps() {
                writeln!(w, "{},{},{:e}", i, k, self.prices[[i, k]].as_f64())?;
            }
        }
        Ok(())
    }
}

/// Fills `prices` (length `n_steps + 1`) with one exact lognormal path
/// driven by `increments`.
pub fn fill_path_prices<T: Scalar>(params: &MarketParams<T>, increments: &[T], prices: &mut [T]) {
    debug_assert_eq!(prices.len(), increments.len() + 1);
    let dt = params.dt();
    let half = T::of(0.5);
    let drift = (params.mu - half * params.sigma * params.sigma) * dt;
    let mut s = params.s0;
    prices[0] = s;
    for (k, dw) in increments.iter().enumerate() {
        s = s * (drift + params.sigma * *dw).exp();
        prices[k + 1] = s;
    }
}

/// Simulates a price batch with the exact lognormal scheme.
///
/// The increment matrix must be shaped `n_paths x params.n_steps` and carry
/// the same grid spacing as `params` (usage errors otherwise).
pub fn simulate_paths<T: Scalar>(params: &MarketParams<T>, increments: Increments<T>) -> PathBatch<T> {
    params.validate();
    let (n_paths, n_steps) = increments.values.dim();
    assert_eq!(
        n_steps,
        params.n_steps,
        "increments have {} steps but params.n_steps is {}",
        n_steps,
        params.n_steps
    );
    let dt = params.dt();
    let rel = ((increments.dt - dt) / dt).abs();
    assert!(
        rel <= T::of(1e-9),
        "increment grid spacing {} does not match params dt {}",
        increments.dt,
        dt
    );

    let mut prices = Array2::zeros((n_paths, n_steps + 1));
    for i in 0..n_paths {
        let inc_row = increments.values.row(i);
        let mut price_row = prices.row_mut(i);
        fill_path_prices(
            params,
            inc_row.as_slice().expect("row contiguous"),
            price_row.as_slice_mut().expect("row contiguous"),
        );
    }
    PathBatch { prices, increments: increments.values, dt, seed: increments.seed, market: *params }
}
