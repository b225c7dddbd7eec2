//! Lagrangian machinery for the average-cost constraint, shared by all
//! learning agents: the per-step reward, the running empirical cost
//! estimate η̂, and the projected-subgradient multiplier update.
//!
//! The reward charges the weighted share of post-slot violation events and
//! prices the transmission against the budget:
//!
//!   r = −(1/M)·Σ_k w_k·Σ_m 1[v(t+1, m) ≥ k] − λ·(c − η_max),
//!
//! so an idle slot earns a +λ·η_max bonus and a transmitting slot pays
//! λ·(1−η_max). Both η̂ and the global slot counter persist across episode
//! boundaries; λ is updated once per slot, and replayed transitions keep the
//! reward computed with the λ that was current when they were stored.

use crate::metrics::WeightVector;

/// Mutable constraint state for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeState {
    /// Multiplier λ; kept ≥ 0 by projection.
    pub lambda: f64,
    /// Running empirical average transmission cost η̂ over all slots so far.
    pub eta_hat: f64,
    /// Global slot counter t, advanced by [`LagrangeState::update_eta`].
    pub slot: u64,
    /// Step size ξ for the λ update.
    pub xi: f64,
    /// Cost budget η_max.
    pub eta_max: f64,
    /// Discount factor γ (carried here so agents share one source of truth).
    pub gamma: f64,
}

impl LagrangeState {
    /// Fresh state: λ = 0, η̂ = 0, slot 0.
    pub fn new(xi: f64, eta_max: f64, gamma: f64) -> Self {
        Self { lambda: 0.0, eta_hat: 0.0, slot: 0, xi, eta_max, gamma }
    }

    /// Advances the global slot and folds this slot's cost into the running
    /// mean: η̂ ← η̂ + (1/t)(c − η̂). Returns the updated η̂.
    pub fn update_eta(&mut self, cost: u32) -> f64 {
        self.slot += 1;
        self.eta_hat += (f64::from(cost) - self.eta_hat) / self.slot as f64;
        self.eta_hat
    }

    /// Projected subgradient step λ ← max(0, λ + ξ·(η̂ − η_max)).
    /// Returns the updated λ.
    pub fn update_lambda(&mut self) -> f64 {
        self.lambda = (self.lambda + self.xi * (self.eta_hat - self.eta_max)).max(0.0);
        self.lambda
    }
}

/// Per-step Lagrangian reward from the post-slot violation counters, the
/// slot's cost, and the current multiplier.
pub fn reward(
    next_viol_counts: &[u32],
    cost: u32,
    weights: &WeightVector,
    lambda: f64,
    eta_max: f64,
) -> f64 {
    let m = next_viol_counts.len() as f64;
    let mut violation = 0.0;
    for (i, &w_k) in weights.weights().iter().enumerate() {
        let k = (i + 1) as u32;
        let hits = next_viol_counts.iter().filter(|&&v| v >= k).count();
        violation += w_k * hits as f64;
    }
    let r = -violation / m - lambda * (f64::from(cost) - eta_max);
    debug_assert!(
        r >= -1.0 - lambda * (1.0 - eta_max) - 1e-12 && r <= lambda * eta_max + 1e-12,
        "reward {r} outside its bound"
    );
    r
}
