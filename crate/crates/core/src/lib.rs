//! Persistence-aware scheduling toolkit for wireless status updates.
//!
//! A central scheduler serves M sources over an unreliable shared channel,
//! at most one transmission per slot. Each source tracks a transmitter-side
//! and a receiver-side age of information (AoI); reliability is measured not
//! just by how often the receiver-side AoI exceeds a threshold ζ (the age
//! violation rate, AVR) but by how long violations *persist*: the consecutive
//! age violation rate (C-AVR) vector collects, for every window length
//! k = 1..k_max, the rate of k-slot-long violation runs, and a weighting
//! scheme collapses the vector into a scalar objective.
//!
//! The crate provides:
//!
//! - [`env`] — the discrete-time simulator (arrivals, scheduling, stochastic
//!   delivery, coupled AoI/violation-counter evolution);
//! - [`metrics`] — trajectory analytics: AVR, C-AVR vector, weighted C-AVR
//!   under uniform/exponential/one-hot weightings, tail persistence index,
//!   empirical transmission cost;
//! - [`oracle`] — exact evaluation of small single-source instances via the
//!   stationary distribution of the induced finite Markov chain;
//! - [`cmdp`] — Lagrangian machinery for the average-cost constraint:
//!   per-step reward, running cost estimate, multiplier update;
//! - [`valuenet`] — a from-scratch feedforward value network with optional
//!   dueling heads and N-quantile outputs, losses, gradients, Adam;
//! - [`agents`] — four value-learning schedulers (DQN, D3QN, QR-DQN,
//!   QR-D3QN) with replay buffer, ε-greedy exploration, target networks;
//! - [`dpp`] — the drift-plus-penalty index baseline with a virtual cost
//!   queue;
//! - [`harness`] — configuration, seeding, experiment orchestration
//!   (training, evaluation, sweeps, oracle runs) and CSV emission.

pub mod agents;
pub mod cmdp;
pub mod dpp;
pub mod env;
pub mod harness;
pub mod metrics;
pub mod oracle;
pub mod valuenet;

pub use agents::{Agent, AgentConfig, AgentVariant, ReplayBuffer, Transition};
pub use cmdp::LagrangeState;
pub use dpp::{DppConfig, DppPolicy, PenaltyTable, VirtualQueue};
pub use env::{Environment, SourceParams, SourceState, StepOutcome, SystemConfig};
pub use harness::{EvalOutcome, ExperimentConfig, Policy, PolicyRuntime, RunRecord, SweepAxis};
pub use metrics::{CavrEstimate, CostEstimate, WeightScheme, WeightVector};
pub use oracle::{ChainSpec, OraclePolicy, OracleResult, StationaryDist};
pub use valuenet::{NetParams, NetShape, QuantileValue};
