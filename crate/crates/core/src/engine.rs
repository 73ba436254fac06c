//! Discrete-time hedging engine: wealth roll-forward with a hard bankruptcy
//! bound, three-term loss (shortfall + proportional transaction costs +
//! admissibility penalty), mini-batch training of per-step networks, and
//! held-out evaluation.
//!
//! The wealth recursion: over step `k` the position `K_k` (chosen from
//! information at `t_k`) earns `K_k (S_{k+1} - S_k)`. If that candidate
//! update would cross the bankruptcy bound `B`, the step is replaced by the
//! geometric update
//! `V_{k+1} = (V_k - B) exp(pi (mu dt + sigma dW_k) - pi^2 sigma^2 dt / 2) + B`
//! with `pi = K_k S_k / V_k` and the same Brownian increment that drove the
//! stock step, which keeps wealth strictly above `B`. Once wealth lands
//! within `bankruptcy_eps` of `B` the path is frozen there with zero
//! position.
//!
//! Two implementations of the same arithmetic exist side by side: a plain
//! one for fast evaluation and a tape-recorded one for training. They mirror
//! each other operation for operation and are cross-checked by tests.
//!
//! Branch decisions (which wealth update applies, bankruptcy, the running
//! minimum used by the admissibility penalty) are taken on forward values
//! and treated as piecewise-fixed: gradients flow through the taken branch
//! only.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, VarId};
use crate::market::{fill_path_increments, fill_path_prices, generate_increments, simulate_paths, MarketParams, PathBatch};
use crate::nn::{adam_step, clip_global_norm, param_count, AdamParams, AdamState, MlpParams};
use crate::payoff::{shortfall_loss, Claim, LossSpec};
use crate::scalar::Scalar;
use crate::seeds::{derive_seed, TAG_NET_INIT, TAG_TRAIN_BATCH};

use ndarray::Array2;

/// Fixed chunk width for per-path work. Chunks are reduced in index order,
/// so results are bit-identical for any thread count.
const PATH_CHUNK: usize = 64;

/// Hedging problem configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeConfig<T> {
    /// Initial capital.
    pub v0: T,
    /// Hard wealth floor `B < 0`.
    pub bankruptcy_bound: T,
    /// Proportional transaction-cost coefficient, >= 0.
    pub c_cost: T,
    /// Admissibility-penalty coefficient, >= 0.
    pub c_ad: T,
    /// Risk-aversion exponent of the shortfall loss.
    pub loss: LossSpec<T>,
    /// Wealth within this distance of the bound is declared bankrupt.
    pub bankruptcy_eps: T,
    /// The geometric update's exponent argument is clamped to this band.
    pub exponent_clamp: T,
    /// Charge the initial position acquisition `|K_0| S_0` as well
    /// (off by default; the cost term otherwise covers interior rebalances
    /// only).
    pub charge_initial_position: bool,
}

impl<T: Scalar> HedgeConfig<T> {
    /// Defaults: bound -100, no transaction costs, admissibility coefficient
    /// 1, eps 1e-9, clamp 50.
    pub fn new(v0: T, p: T) -> Self {
        HedgeConfig {
            v0,
            bankruptcy_bound: T::of(-100.0),
            c_cost: T::zero(),
            c_ad: T::one(),
            loss: LossSpec::new(p),
            bankruptcy_eps: T::of(1e-9),
            exponent_clamp: T::of(50.0),
            charge_initial_position: false,
        }
    }

    pub fn validate(&self) {
        assert!(self.v0.is_finite(), "v0 must be finite");
        assert!(
            self.bankruptcy_bound < T::zero(),
            "bankruptcy bound must be < 0, got {}",
            self.bankruptcy_bound
        );
        assert!(self.bankruptcy_eps > T::zero(), "bankruptcy_eps must be > 0");
        assert!(self.c_cost >= T::zero(), "c_cost must be >= 0");
        assert!(self.c_ad >= T::zero(), "c_ad must be >= 0");
        assert!(self.loss.p > T::zero(), "loss exponent must be > 0");
        assert!(self.exponent_clamp > T::zero(), "exponent_clamp must be > 0");
        assert!(
            self.v0 > self.bankruptcy_bound,
            "initial capital {} must lie above the bankruptcy bound {}",
            self.v0,
            self.bankruptcy_bound
        );
    }
}

/// Division guard for the geometric update: `|V_k|` below this is treated
/// as immediate bankruptcy (recorded in the results, not silent).
const PI_GUARD: f64 = 1e-12;

/// A hedging strategy: the position held over `(t_k, t_{k+1}]`, decided from
/// the spot at `t_k`.
pub trait Strategy<T: Scalar> {
    fn position(&self, step: usize, t: T, spot: T) -> T;
}

impl<T: Scalar, F: Fn(usize, T, T) -> T> Strategy<T> for F {
    #[inline]
    fn position(&self, step: usize, t: T, spot: T) -> T {
        self(step, t, spot)
    }
}

/// Default hidden-layer widths of the per-step networks.
pub const DEFAULT_HIDDEN: [usize; 2] = [21, 21];

/// One small network per rebalancing time; the trainable strategy.
///
/// Networks read the log-moneyness `ln(spot / spot_scale)` rather than the
/// raw price; the transform is part of the strategy definition and recorded
/// in serialized artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyStack<T> {
    nets: Vec<MlpParams<T>>,
    spot_scale: T,
}

impl<T: Scalar> StrategyStack<T> {
    /// One `[1, 21, 21, 1]` network per step, Glorot-initialized from
    /// per-step seeds derived from `seed`.
    pub fn init(market: &MarketParams<T>, seed: u64) -> Self {
        Self::init_with_hidden(market, &DEFAULT_HIDDEN, seed)
    }

    pub fn init_with_hidden(market: &MarketParams<T>, hidden: &[usize], seed: u64) -> Self {
        market.validate();
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(1);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let nets = (0..market.n_steps)
            .map(|k| MlpParams::init(&sizes, derive_seed(seed, TAG_NET_INIT, k as u64)))
            .collect();
        StrategyStack { nets, spot_scale: market.s0 }
    }

    pub fn from_nets(nets: Vec<MlpParams<T>>, spot_scale: T) -> Self {
        assert!(!nets.is_empty(), "need at least one step network");
        assert!(spot_scale > T::zero(), "spot scale must be > 0");
        StrategyStack { nets, spot_scale }
    }

    #[inline]
    pub fn nets(&self) -> &[MlpParams<T>] {
        &self.nets
    }

    #[inline]
    pub fn nets_mut(&mut self) -> &mut [MlpParams<T>] {
        &mut self.nets
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.nets.len()
    }

    #[inline]
    pub fn spot_scale(&self) -> T {
        self.spot_scale
    }

    /// Total trainable parameter count across all step networks.
    pub fn flat_len(&self) -> usize {
        self.nets.iter().map(|n| n.len()).sum()
    }

    #[inline]
    pub fn preprocess(&self, spot: T) -> T {
        (spot / self.spot_scale).ln()
    }
}

impl<T: Scalar> Strategy<T> for StrategyStack<T> {
    #[inline]
    fn position(&self, step: usize, _t: T, spot: T) -> T {
        assert!(step < self.nets.len(), "no network for step {}", step);
        self.nets[step].eval(self.preprocess(spot))
    }
}

/// Simulated wealth and positions for a batch of paths.
#[derive(Debug, Clone)]
pub struct SimResult<T> {
    /// Wealth, shape `n_paths x (n_steps + 1)`; column 0 equals `v0`.
    pub wealth: Array2<T>,
    /// Positions, shape `n_paths x n_steps`.
    pub positions: Array2<T>,
    /// First step index at which each path was declared bankrupt.
    pub bankrupt_at: Vec<Option<usize>>,
    /// Per-path running minimum of wealth over the whole grid.
    pub running_min: Vec<T>,
    /// Paths that hit the division guard of the geometric update.
    pub pi_guard_bankruptcies: usize,
}

/// The three loss components and their sum, as batch means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    /// Mean shortfall loss `l((H - V_T)_+)`.
    pub l_p: T,
    /// Mean transaction-cost charge (coefficient included).
    pub l_cost: T,
    /// Mean admissibility penalty (coefficient included).
    pub l_ad: T,
    /// `l_p + l_cost + l_ad`.
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn new(l_p: T, l_cost: T, l_ad: T) -> Self {
        LossBreakdown { l_p, l_cost, l_ad, total: l_p + l_cost + l_ad }
    }

    pub fn is_finite(&self) -> bool {
        self.l_p.is_finite() && self.l_cost.is_finite() && self.l_ad.is_finite()
    }
}

struct PathRoll<T> {
    bankrupt_at: Option<usize>,
    running_min: T,
    pi_guard: bool,
}

/// Rolls one path forward, appending to `wealth` (length n+1) and
/// `positions` (length n).
fn roll_path<T: Scalar, S: Strategy<T> + ?Sized>(
    prices: &[T],
    increments: &[T],
    market: &MarketParams<T>,
    strategy: &S,
    config: &HedgeConfig<T>,
    wealth: &mut Vec<T>,
    positions: &mut Vec<T>,
) -> PathRoll<T> {
    let n = increments.len();
    debug_assert_eq!(prices.len(), n + 1);
    let dt = market.dt();
    let b = config.bankruptcy_bound;
    let half = T::of(0.5);
    let c2 = half * market.sigma * market.sigma * dt;
    let guard = T::of(PI_GUARD);

    wealth.clear();
    positions.clear();
    wealth.push(config.v0);
    let mut v = config.v0;
    let mut rmin = v;
    let mut bankrupt: Option<usize> = None;
    let mut pi_guard = false;

    for k in 0..n {
        if bankrupt.is_some() {
            positions.push(T::zero());
            wealth.push(b);
            continue;
        }
        let t_k = T::of_usize(k) * dt;
        let kpos = strategy.position(k, t_k, prices[k]);
        let ds = prices[k + 1] - prices[k];
        let candidate = v + kpos * ds;
        let mut vnext;
        if candidate >= b {
            vnext = candidate;
        } else if v.abs() < guard {
            // position-to-wealth ratio undefined: immediate bankruptcy
            pi_guard = true;
            vnext = b;
        } else {
            let pi = kpos * prices[k] / v;
            let shock = market.mu * dt + market.sigma * increments[k];
            let arg = (pi * shock - pi * pi * c2).min(config.exponent_clamp).max(-config.exponent_clamp);
            vnext = (v - b) * arg.exp() + b;
        }
        if vnext - b <= config.bankruptcy_eps {
            vnext = b;
            bankrupt = Some(k + 1);
        }
        positions.push(kpos);
        wealth.push(vnext);
        if vnext < rmin {
            rmin = vnext;
        }
        v = vnext;
    }
    PathRoll { bankrupt_at: bankrupt, running_min: rmin, pi_guard }
}

/// Simulates the wealth process for every path in the batch.
pub fn roll_forward<T: Scalar, S: Strategy<T> + ?Sized>(
    paths: &PathBatch<T>,
    strategy: &S,
    config: &HedgeConfig<T>,
) -> SimResult<T> {
    config.validate();
    let n_paths = paths.n_paths();
    let n = paths.n_steps();
    let mut wealth = Array2::zeros((n_paths, n + 1));
    let mut positions = Array2::zeros((n_paths, n));
    let mut bankrupt_at = Vec::with_capacity(n_paths);
    let mut running_min = Vec::with_capacity(n_paths);
    let mut guards = 0usize;
    let mut wbuf = Vec::with_capacity(n + 1);
    let mut pbuf = Vec::with_capacity(n);
    for i in 0..n_paths {
        let roll = roll_path(
            paths.prices.row(i).as_slice().expect("row contiguous"),
            paths.increments.row(i).as_slice().expect("row contiguous"),
            &paths.market,
            strategy,
            config,
            &mut wbuf,
            &mut pbuf,
        );
        wealth.row_mut(i).as_slice_mut().unwrap().copy_from_slice(&wbuf);
        positions.row_mut(i).as_slice_mut().unwrap().copy_from_slice(&pbuf);
        bankrupt_at.push(roll.bankrupt_at);
        running_min.push(roll.running_min);
        if roll.pi_guard {
            guards += 1;
        }
    }
    SimResult { wealth, positions, bankrupt_at, running_min, pi_guard_bankruptcies: guards }
}

/// Per-path loss components (coefficients applied).
fn path_loss<T: Scalar, C: Claim<T> + ?Sized>(
    prices: &[T],
    wealth: &[T],
    positions: &[T],
    claim: &C,
    config: &HedgeConfig<T>,
) -> (T, T, T) {
    let n = positions.len();
    let h = claim.payoff(prices[n]);
    let l_p = shortfall_loss(h, wealth[n], &config.loss);

    let mut acc = if config.charge_initial_position {
        positions[0].abs() * prices[0]
    } else {
        T::zero()
    };
    for j in 1..n {
        acc = acc + (positions[j] - positions[j - 1]).abs() * prices[j];
    }
    let l_cost = acc * config.c_cost;

    let mut rmin = wealth[0];
    for &w in &wealth[1..] {
        if w < rmin {
            rmin = w;
        }
    }
    let l_ad = (-rmin).max(T::zero()) * config.c_ad;
    (l_p, l_cost, l_ad)
}

/// Assembles the three-term loss over a simulated batch.
pub fn compute_loss<T: Scalar, C: Claim<T> + ?Sized>(
    sim: &SimResult<T>,
    paths: &PathBatch<T>,
    claim: &C,
    config: &HedgeConfig<T>,
) -> LossBreakdown<T> {
    let n_paths = paths.n_paths();
    assert_eq!(sim.wealth.nrows(), n_paths, "simulation does not match batch");
    assert_eq!(sim.wealth.ncols(), paths.n_steps() + 1, "simulation does not match batch");
    let (mut sp, mut sc, mut sa) = (T::zero(), T::zero(), T::zero());
    for i in 0..n_paths {
        let (lp, lc, la) = path_loss(
            paths.prices.row(i).as_slice().unwrap(),
            sim.wealth.row(i).as_slice().unwrap(),
            sim.positions.row(i).as_slice().unwrap(),
            claim,
            config,
        );
        sp += lp;
        sc += lc;
        sa += la;
    }
    let n = T::of_usize(n_paths);
    LossBreakdown::new(sp / n, sc / n, sa / n)
}

/// Convenience: roll forward and compute the loss in one call.
pub fn batch_loss<T: Scalar, S: Strategy<T> + ?Sized, C: Claim<T> + ?Sized>(
    paths: &PathBatch<T>,
    strategy: &S,
    claim: &C,
    config: &HedgeConfig<T>,
) -> LossBreakdown<T> {
    let sim = roll_forward(paths, strategy, config);
    compute_loss(&sim, paths, claim, config)
}

struct TapedPath<T> {
    total: VarId,
    lp: T,
    lc: T,
    la: T,
    eq3: bool,
    bankrupt: bool,
}

/// Tape-recorded mirror of [`roll_path`] + [`path_loss`] for one path;
/// returns the per-path total-loss node and the component values.
#[allow(clippy::too_many_arguments)]
fn roll_and_loss_taped<T: Scalar, C: Claim<T> + ?Sized>(
    tape: &mut Tape<T>,
    bases: &[u32],
    stack: &StrategyStack<T>,
    prices: &[T],
    increments: &[T],
    market: &MarketParams<T>,
    claim: &C,
    config: &HedgeConfig<T>,
) -> TapedPath<T> {
    let n = increments.len();
    let dt = market.dt();
    let b = config.bankruptcy_bound;
    let half = T::of(0.5);
    let c2 = half * market.sigma * market.sigma * dt;
    let guard = T::of(PI_GUARD);

    let zero = tape.constant(T::zero());
    let bconst = tape.constant(b);
    let mut v = tape.constant(config.v0);
    let mut vmin = v;
    let mut positions: Vec<VarId> = Vec::with_capacity(n);
    let mut bankrupt = false;
    let mut eq3_taken = false;

    for k in 0..n {
        if bankrupt {
            positions.push(zero);
            continue;
        }
        let x = tape.leaf(stack.preprocess(prices[k]));
        let kvar = stack.nets[k].forward_taped(tape, bases[k], x);
        let ds = prices[k + 1] - prices[k];
        let kds = tape.mul_const(kvar, ds);
        let candidate = tape.add(v, kds);
        let cand_val = tape.val(candidate);
        tape.note_branch_gap((cand_val - b).abs());
        let mut vnext;
        if cand_val >= b {
            vnext = candidate;
        } else if tape.val(v).abs() < guard {
            // ratio guard: same immediate-bankruptcy treatment as the plain roll
            vnext = bconst;
        } else {
            eq3_taken = true;
            let ks = tape.mul_const(kvar, prices[k]);
            let pi = tape.div(ks, v);
            let shock = market.mu * dt + market.sigma * increments[k];
            let a1 = tape.mul_const(pi, shock);
            let pisq = tape.mul(pi, pi);
            let a2 = tape.mul_const(pisq, c2);
            let arg = tape.sub(a1, a2);
            let arg = tape.min_const(arg, config.exponent_clamp);
            let arg = tape.max_const(arg, -config.exponent_clamp);
            let e = tape.exp(arg);
            let vmb = tape.add_const(v, -b);
            let prod = tape.mul(vmb, e);
            vnext = tape.add_const(prod, b);
        }
        let vnval = tape.val(vnext);
        tape.note_branch_gap(((vnval - b) - config.bankruptcy_eps).abs());
        if vnval - b <= config.bankruptcy_eps {
            vnext = bconst;
            bankrupt = true;
        }
        positions.push(kvar);
        let gap = (tape.val(vnext) - tape.val(vmin)).abs();
        tape.note_branch_gap(gap);
        if tape.val(vnext) < tape.val(vmin) {
            vmin = vnext;
        }
        v = vnext;
    }

    // shortfall term
    let h = claim.payoff(prices[n]);
    let diff = tape.sub_from_const(h, v);
    let sf = tape.relu(diff);
    let l_p = if tape.val(sf) > T::zero() {
        let l = tape.ln(sf);
        let pl = tape.mul_const(l, config.loss.p);
        let e = tape.exp(pl);
        tape.mul_const(e, T::one() / config.loss.p)
    } else {
        tape.constant(T::zero())
    };

    // transaction costs over interior rebalances
    let mut acc = if config.charge_initial_position {
        let a = tape.abs(positions[0]);
        tape.mul_const(a, prices[0])
    } else {
        tape.constant(T::zero())
    };
    for j in 1..n {
        let d = tape.sub(positions[j], positions[j - 1]);
        let a = tape.abs(d);
        let term = tape.mul_const(a, prices[j]);
        acc = tape.add(acc, term);
    }
    let l_cost = tape.mul_const(acc, config.c_cost);

    // admissibility penalty on the running minimum
    let neg_min = tape.neg(vmin);
    let viol = tape.relu(neg_min);
    let l_ad = tape.mul_const(viol, config.c_ad);

    let s = tape.add(l_p, l_cost);
    let total = tape.add(s, l_ad);
    TapedPath {
        total,
        lp: tape.val(l_p),
        lc: tape.val(l_cost),
        la: tape.val(l_ad),
        eq3: eq3_taken,
        bankrupt,
    }
}

/// Batch loss together with its gradient with respect to every parameter of
/// the stack (flat layout: networks in step order, each in its own flat
/// layout).
#[derive(Debug, Clone)]
pub struct GradReport<T> {
    pub loss: LossBreakdown<T>,
    pub grad: Vec<T>,
    /// Smallest kink/branch margin observed while recording the batch.
    pub min_branch_gap: T,
    /// Paths on which the geometric fallback fired at least once.
    pub geometric_branch_paths: usize,
    /// Paths declared bankrupt.
    pub bankrupt_paths: usize,
}

struct ChunkOut<T> {
    grad: Vec<T>,
    lp: T,
    lc: T,
    la: T,
    gap: T,
    eq3: usize,
    bankrupt: usize,
}

/// Differentiates the batch-mean total loss through the full simulation.
///
/// Per-path tapes are processed in fixed chunks and reduced in index order:
/// the result is bit-identical whether run on one thread or many.
pub fn batch_loss_and_grad<T: Scalar, C: Claim<T> + Sync + ?Sized>(
    stack: &StrategyStack<T>,
    paths: &PathBatch<T>,
    claim: &C,
    config: &HedgeConfig<T>,
) -> GradReport<T> {
    config.validate();
    assert_eq!(
        stack.n_steps(),
        paths.n_steps(),
        "strategy has {} step networks but batch has {} steps",
        stack.n_steps(),
        paths.n_steps()
    );
    let n_paths = paths.n_paths();
    let flat_len = stack.flat_len();
    let n_chunks = n_paths.div_ceil(PATH_CHUNK);

    let chunk_outs: Vec<ChunkOut<T>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * PATH_CHUNK;
            let hi = (lo + PATH_CHUNK).min(n_paths);
            // per-step tape cost is dominated by the network forward passes
            let per_path = 16 + stack.nets.iter().map(|n| 3 * n.len()).sum::<usize>();
            let mut tape = Tape::with_capacity(flat_len + per_path);
            let mut bases = Vec::with_capacity(stack.n_steps());
            for net in &stack.nets {
                bases.push(net.bind(&mut tape));
            }
            let base_len = tape.len();
            debug_assert_eq!(base_len, flat_len);

            let mut grad = vec![T::zero(); flat_len];
            let mut adj: Vec<T> = Vec::new();
            let (mut lp, mut lc, mut la) = (T::zero(), T::zero(), T::zero());
            let (mut eq3, mut bankrupt) = (0usize, 0usize);
            for i in lo..hi {
                tape.truncate(base_len);
                let path = roll_and_loss_taped(
                    &mut tape,
                    &bases,
                    stack,
                    paths.prices.row(i).as_slice().unwrap(),
                    paths.increments.row(i).as_slice().unwrap(),
                    &paths.market,
                    claim,
                    config,
                );
                tape.backward_into(path.total, &mut adj);
                for (g, a) in grad.iter_mut().zip(&adj[..flat_len]) {
                    *g += *a;
                }
                lp += path.lp;
                lc += path.lc;
                la += path.la;
                if path.eq3 {
                    eq3 += 1;
                }
                if path.bankrupt {
                    bankrupt += 1;
                }
            }
            ChunkOut { grad, lp, lc, la, gap: tape.min_branch_gap(), eq3, bankrupt }
        })
        .collect();

    let mut grad = vec![T::zero(); flat_len];
    let (mut lp, mut lc, mut la) = (T::zero(), T::zero(), T::zero());
    let mut gap = T::infinity();
    let (mut eq3, mut bankrupt) = (0usize, 0usize);
    for out in &chunk_outs {
        for (g, cg) in grad.iter_mut().zip(&out.grad) {
            *g += *cg;
        }
        lp += out.lp;
        lc += out.lc;
        la += out.la;
        if out.gap < gap {
            gap = out.gap;
        }
        eq3 += out.eq3;
        bankrupt += out.bankrupt;
    }
    let n = T::of_usize(n_paths);
    for g in grad.iter_mut() {
        *g = *g / n;
    }
    GradReport {
        loss: LossBreakdown::new(lp / n, lc / n, la / n),
        grad,
        min_branch_gap: gap,
        geometric_branch_paths: eq3,
        bankrupt_paths: bankrupt,
    }
}

/// Mini-batch training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings<T> {
    pub batch_size: usize,
    pub n_iterations: usize,
    pub seed: u64,
    /// Global-norm gradient clip applied before each optimizer step;
    /// `None` disables clipping.
    pub clip_norm: Option<T>,
    pub adam: AdamParams<T>,
}

impl<T: Scalar> TrainSettings<T> {
    /// Defaults: batch 256, 5000 iterations, clipping at global norm 10.
    pub fn new(seed: u64) -> Self {
        TrainSettings {
            batch_size: 256,
            n_iterations: 5000,
            seed,
            clip_norm: Some(T::of(10.0)),
            adam: AdamParams::default(),
        }
    }
}

/// Training failure: the loss left the finite range.
#[derive(Debug, Clone, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite {component} loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, component: &'static str },
}

/// A trained strategy plus its per-iteration loss history.
#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub strategy: StrategyStack<T>,
    pub history: Vec<LossBreakdown<T>>,
}

/// Trains a fresh stack of per-step networks by Adam on the three-term loss.
///
/// Every iteration simulates a fresh mini-batch seeded from
/// `(settings.seed, iteration)`, so the whole run is reproducible from the
/// settings alone.
pub fn train<T: Scalar, C: Claim<T> + Sync + ?Sized>(
    market: &MarketParams<T>,
    claim: &C,
    config: &HedgeConfig<T>,
    settings: &TrainSettings<T>,
) -> Result<TrainOutput<T>, TrainError> {
    market.validate();
    config.validate();
    assert!(settings.batch_size >= 1, "batch_size must be >= 1");
    assert!(settings.n_iterations >= 1, "n_iterations must be >= 1");

    let mut stack = StrategyStack::init(market, settings.seed);
    let mut states: Vec<AdamState<T>> =
        stack.nets().iter().map(|n| AdamState::new(n.len())).collect();
    let mut history = Vec::with_capacity(settings.n_iterations);

    for iteration in 0..settings.n_iterations {
        let batch_seed = derive_seed(settings.seed, TAG_TRAIN_BATCH, iteration as u64);
        let increments =
            generate_increments(settings.batch_size, market.n_steps, market.dt(), batch_seed);
        let paths = simulate_paths(market, increments);
        let mut report = batch_loss_and_grad(&stack, &paths, claim, config);

        for (component, value) in [
            ("shortfall", report.loss.l_p),
            ("transaction-cost", report.loss.l_cost),
            ("admissibility", report.loss.l_ad),
        ] {
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { iteration, component });
            }
        }

        if let Some(max_norm) = settings.clip_norm {
            clip_global_norm(&mut report.grad, max_norm);
        }
        let mut offset = 0usize;
        for (net, state) in stack.nets_mut().iter_mut().zip(states.iter_mut()) {
            let len = net.len();
            adam_step(net.values_mut(), &report.grad[offset..offset + len], &settings.adam, state);
            offset += len;
        }
        history.push(report.loss);
    }
    Ok(TrainOutput { strategy: stack, history })
}

/// Held-out evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub n_paths: usize,
    /// Evaluation seed; by convention distinct from any training seed.
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { n_paths: 100_000, seed: 0x6576_616c }
    }
}

/// Moments and empirical quantiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats<T> {
    pub mean: T,
    pub std: T,
    pub min: T,
    pub q05: T,
    pub q25: T,
    pub median: T,
    pub q75: T,
    pub q95: T,
    pub max: T,
}

impl<T: Scalar> SummaryStats<T> {
    pub fn from_samples(samples: &[T]) -> Self {
        assert!(!samples.is_empty());
        let n = T::of_usize(samples.len());
        let mean = samples.iter().copied().sum::<T>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>()
                / T::of_usize(samples.len() - 1)
        } else {
            T::zero()
        };
        let mut sorted = samples.to_vec();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        let q = |p: f64| -> T {
            let h = p * (sorted.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            let w = T::of(h - lo as f64);
            sorted[lo] + w * (sorted[hi] - sorted[lo])
        };
        SummaryStats {
            mean,
            std: var.sqrt(),
            min: sorted[0],
            q05: q(0.05),
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            q95: q(0.95),
            max: *sorted.last().unwrap(),
        }
    }
}

/// Evaluation report on a held-out batch.
#[derive(Debug, Clone)]
pub struct EvalReport<T> {
    pub loss: LossBreakdown<T>,
    pub terminal_wealth: SummaryStats<T>,
    pub min_wealth: SummaryStats<T>,
    /// Mean of `(-min_t V_t)_+`, the raw admissibility violation
    /// (no coefficient).
    pub mean_admissibility_violation: T,
    pub bankruptcies: usize,
    pub pi_guard_bankruptcies: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Per-path terminal wealth, in path order.
    pub terminal_samples: Vec<T>,
    /// Per-path running-minimum wealth, in path order.
    pub min_wealth_samples: Vec<T>,
}

struct PathStat<T> {
    v_t: T,
    rmin: T,
    lp: T,
    lc: T,
    la: T,
    bankrupt: bool,
    pi_guard: bool,
}

/// Simulates a held-out batch path by path (no batch matrices are
/// materialized) and reports the loss and wealth distribution summaries.
///
/// The paths generated for a given `(market, eval)` are identical to the
/// corresponding rows of [`generate_increments`] + [`simulate_paths`], so
/// evaluations of different strategies under the same settings are paired.
pub fn evaluate<T: Scalar, S: Strategy<T> + Sync + ?Sized, C: Claim<T> + Sync + ?Sized>(
    strategy: &S,
    market: &MarketParams<T>,
    claim: &C,
    config: &HedgeConfig<T>,
    eval: &EvalSettings,
) -> EvalReport<T> {
    market.validate();
    config.validate();
    assert!(eval.n_paths >= 1, "n_paths must be >= 1");
    let n = market.n_steps;
    let dt = market.dt();
    let n_chunks = eval.n_paths.div_ceil(PATH_CHUNK);

    let chunk_stats: Vec<Vec<PathStat<T>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * PATH_CHUNK;
            let hi = (lo + PATH_CHUNK).min(eval.n_paths);
            let mut inc = vec![T::zero(); n];
            let mut prices = vec![T::zero(); n + 1];
            let mut wealth = Vec::with_capacity(n + 1);
            let mut positions = Vec::with_capacity(n);
            let mut stats = Vec::with_capacity(hi - lo);
            for i in lo..hi {
                fill_path_increments(eval.seed, i as u64, dt, &mut inc);
                fill_path_prices(market, &inc, &mut prices);
                let roll = roll_path(&prices, &inc, market, strategy, config, &mut wealth, &mut positions);
                let (lp, lc, la) = path_loss(&prices, &wealth, &positions, claim, config);
                stats.push(PathStat {
                    v_t: wealth[n],
                    rmin: roll.running_min,
                    lp,
                    lc,
                    la,
                    bankrupt: roll.bankrupt_at.is_some(),
                    pi_guard: roll.pi_guard,
                });
            }
            stats
        })
        .collect();

    let mut terminal = Vec::with_capacity(eval.n_paths);
    let mut minima = Vec::with_capacity(eval.n_paths);
    let (mut sp, mut sc, mut sa, mut sviol) = (T::zero(), T::zero(), T::zero(), T::zero());
    let (mut bankruptcies, mut guards) = (0usize, 0usize);
    for chunk in &chunk_stats {
        for s in chunk {
            terminal.push(s.v_t);
            minima.push(s.rmin);
            sp += s.lp;
            sc += s.lc;
            sa += s.la;
            sviol += (-s.rmin).max(T::zero());
            if s.bankrupt {
                bankruptcies += 1;
            }
            if s.pi_guard {
                guards += 1;
            }
        }
    }
    let n_t = T::of_usize(eval.n_paths);
    EvalReport {
        loss: LossBreakdown::new(sp / n_t, sc / n_t, sa / n_t),
        terminal_wealth: SummaryStats::from_samples(&terminal),
        min_wealth: SummaryStats::from_samples(&minima),
        mean_admissibility_violation: sviol / n_t,
        bankruptcies,
        pi_guard_bankruptcies: guards,
        n_paths: eval.n_paths,
        seed: eval.seed,
        terminal_samples: terminal,
        min_wealth_samples: minima,
    }
}

/// JSON sidecar written next to every serialized strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyManifest {
    pub format_version: u32,
    /// Input transform applied before each step network.
    pub preprocessing: String,
    pub spot_scale: f64,
    pub n_steps: usize,
    /// Layer sizes shared by every step network.
    pub layer_sizes: Vec<usize>,
    pub total_params: usize,
    pub market: MarketParams<f64>,
    pub strike: f64,
    pub hedge: HedgeConfig<f64>,
    pub training: Option<TrainSettings<f64>>,
    /// SHA-256 of the parameter blob, hex-encoded.
    pub sha256: String,
}

pub const STRATEGY_FORMAT_VERSION: u32 = 1;
pub const PREPROCESSING_CONVENTION: &str = "log(spot / spot_scale)";

/// Strategy artifact I/O failures.
#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parameter blob does not match manifest hash (expected {expected}, found {found})")]
    HashMismatch { expected: String, found: String },
    #[error("{0}")]
    Format(String),
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        use std::fmt::Write;
        let _ = write!(s, "{:02x}", b);
        s
    })
}

/// Serializes the stack: one flat f64 little-endian blob per step network,
/// concatenated in step order, plus a JSON manifest carrying shapes, the
/// preprocessing convention, provenance and a content hash.
pub fn save_strategy<T: Scalar>(
    stack: &StrategyStack<T>,
    market: &MarketParams<f64>,
    strike: f64,
    hedge: &HedgeConfig<f64>,
    training: Option<&TrainSettings<f64>>,
    blob_path: &Path,
    manifest_path: &Path,
) -> Result<StrategyManifest, ArtifactError> {
    let sizes = stack.nets()[0].layer_sizes().to_vec();
    for net in stack.nets() {
        if net.layer_sizes() != sizes.as_slice() {
            return Err(ArtifactError::Format(
                "step networks with heterogeneous layer sizes cannot be serialized".into(),
            ));
        }
    }
    let mut blob = Vec::with_capacity(stack.flat_len() * 8);
    for net in stack.nets() {
        blob.extend_from_slice(&net.to_blob_bytes());
    }
    let manifest = StrategyManifest {
        format_version: STRATEGY_FORMAT_VERSION,
        preprocessing: PREPROCESSING_CONVENTION.to_string(),
        spot_scale: stack.spot_scale().as_f64(),
        n_steps: stack.n_steps(),
        layer_sizes: sizes,
        total_params: stack.flat_len(),
        market: *market,
        strike,
        hedge: *hedge,
        training: training.copied(),
        sha256: sha256_hex(&blob),
    };
    fs::write(blob_path, &blob)?;
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(manifest_path, json)?;
    Ok(manifest)
}

/// Loads a strategy saved by [`save_strategy`], verifying the content hash
/// and shapes.
pub fn load_strategy(
    blob_path: &Path,
    manifest_path: &Path,
) -> Result<(StrategyStack<f64>, StrategyManifest), ArtifactError> {
    let manifest: StrategyManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    if manifest.format_version != STRATEGY_FORMAT_VERSION {
        return Err(ArtifactError::Format(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    if manifest.preprocessing != PREPROCESSING_CONVENTION {
        return Err(ArtifactError::Format(format!(
            "unknown preprocessing convention {:?}",
            manifest.preprocessing
        )));
    }
    let blob = fs::read(blob_path)?;
    let found = sha256_hex(&blob);
    if found != manifest.sha256 {
        return Err(ArtifactError::HashMismatch { expected: manifest.sha256.clone(), found });
    }
    let per_net = param_count(&manifest.layer_sizes) * 8;
    if blob.len() != per_net * manifest.n_steps {
        return Err(ArtifactError::Format(format!(
            "blob has {} bytes, expected {} networks x {} bytes",
            blob.len(),
            manifest.n_steps,
            per_net
        )));
    }
    let nets = blob
        .chunks_exact(per_net)
        .map(|chunk| {
            MlpParams::from_blob_bytes(&manifest.layer_sizes, chunk).map_err(ArtifactError::Format)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((StrategyStack::from_nets(nets, manifest.spot_scale), manifest))
}
