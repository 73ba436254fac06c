//! Deep hedging of European claims in discrete time under a shortfall-loss
//! objective with proportional transaction costs and admissibility
//! penalties.
//!
//! The library simulates geometric-Brownian-motion price paths, rolls a
//! self-financing wealth process forward under an arbitrary strategy (with a
//! hard bankruptcy bound), differentiates the whole simulation with a
//! scalar-tape reverse-mode engine, and trains one small network per
//! rebalancing time by Adam. A discretized Black-Scholes delta hedge runs
//! through the identical pipeline as the baseline.
//!
//! All numerics are generic over the scalar type via [`scalar::Scalar`]
//! (`f32` or `f64`); the `*64` aliases below fix the default double
//! precision used by the experiment CLI.

pub mod autodiff;
pub mod baseline;
pub mod engine;
pub mod market;
pub mod nn;
pub mod payoff;
pub mod scalar;
pub mod seeds;

pub use scalar::Scalar;

pub type MarketParams64 = market::MarketParams<f64>;
pub type PathBatch64 = market::PathBatch<f64>;
pub type Increments64 = market::Increments<f64>;
pub type CallClaim64 = payoff::CallClaim<f64>;
pub type LossSpec64 = payoff::LossSpec<f64>;
pub type Tape64 = autodiff::Tape<f64>;
pub type MlpParams64 = nn::MlpParams<f64>;
pub type AdamParams64 = nn::AdamParams<f64>;
pub type HedgeConfig64 = engine::HedgeConfig<f64>;
pub type StrategyStack64 = engine::StrategyStack<f64>;
pub type TrainSettings64 = engine::TrainSettings<f64>;
pub type LossBreakdown64 = engine::LossBreakdown<f64>;
pub type EvalReport64 = engine::EvalReport<f64>;
pub type DeltaStrategy64 = baseline::DeltaStrategy<f64>;
