//! Drift-plus-penalty baseline scheduler. Each slot it scores every source
//! with an index I_m = p_succ·(H(F_m) − H(S_m)) — the expected reduction in
//! the weighted persistence penalty from serving source m — where H is the
//! cumulative weight table and F_m/S_m are the next-slot violation counters
//! if the transmission fails or succeeds. A virtual queue Z tracks
//! cumulative budget debt; the best source transmits only while V·I > Z
//! (strictly), which trades penalty reduction against constraint drift. The
//! per-slot 1/M factor of the averaged objective is absorbed into the
//! control gain V.

use crate::env::{SourceState, SystemConfig};
use crate::metrics::WeightVector;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DppError {
    #[error("control gain must be positive, got {0}")]
    NonPositiveControlGain(f64),
    #[error("weight vector covers k_max={weights} but the system uses k_max={system}")]
    KMaxMismatch { weights: u32, system: u32 },
}

/// Control knobs for the index rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DppConfig {
    /// Penalty weight V in the drift-plus-penalty trade-off.
    pub v_dpp: f64,
}

impl Default for DppConfig {
    fn default() -> Self {
        Self { v_dpp: 10.0 }
    }
}

impl DppConfig {
    pub fn validate(&self) -> Result<(), DppError> {
        if !(self.v_dpp > 0.0 && self.v_dpp.is_finite()) {
            return Err(DppError::NonPositiveControlGain(self.v_dpp));
        }
        Ok(())
    }
}

/// Cumulative weight table H(n) = Σ_{k ≤ n} w_k for n = 0..k_max:
/// the penalty incurred by a slot whose violation counter equals n.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyTable {
    h: Vec<f64>,
}

/// Builds the table by prefix-summing the weights; H(0) = 0 and
/// H(k_max) = Σ w_k = 1.
pub fn penalty_table(weights: &WeightVector) -> PenaltyTable {
    let w = weights.weights();
    let mut h = Vec::with_capacity(w.len() + 1);
    h.push(0.0);
    let mut acc = 0.0;
    for &wk in w {
        acc += wk;
        h.push(acc);
    }
    PenaltyTable { h }
}

impl PenaltyTable {
    /// H(n); `n` is clamped to k_max, matching the counter truncation.
    pub fn value(&self, n: u32) -> f64 {
        self.h[(n as usize).min(self.h.len() - 1)]
    }

    /// Largest supported counter value k_max.
    pub fn k_max(&self) -> u32 {
        (self.h.len() - 1) as u32
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.h
    }
}

/// Scheduling index for one source: with d_F/d_S the next-slot receiver AoI
/// under failure/success, F and S are the corresponding next violation
/// counters, and I = p_succ·(H(F) − H(S)). A fresh transmitter-side packet
/// makes S = 0; a stale one (d_S still above ζ) makes S = F and I = 0 —
/// delivery alone cannot break the violation run.
pub fn dpp_index(
    state: &SourceState,
    p_succ: f64,
    zeta: u32,
    delta_max: u32,
    k_max: u32,
    table: &PenaltyTable,
) -> f64 {
    let d_fail = (state.aoi_rx + 1).min(delta_max);
    let d_succ = (state.aoi_tx + 1).min(delta_max);
    let next_count = (state.viol_count + 1).min(k_max);
    let f = if d_fail > zeta { next_count } else { 0 };
    let s = if d_succ > zeta { next_count } else { 0 };
    p_succ * (table.value(f) - table.value(s))
}

/// One slot of the index rule: compute every I_m, take the lowest-index
/// argmax m*, and transmit to it only if V·I_{m*} strictly exceeds the
/// virtual queue backlog Z; otherwise idle. Returns an action in
/// {0, 1, …, M} (0 = idle).
pub fn dpp_decide(
    states: &[SourceState],
    p_succ: &[f64],
    zeta: u32,
    delta_max: u32,
    k_max: u32,
    table: &PenaltyTable,
    z: f64,
    v_dpp: f64,
) -> usize {
    debug_assert_eq!(states.len(), p_succ.len());
    let mut best = 0usize;
    let mut best_index = f64::NEG_INFINITY;
    for (m, state) in states.iter().enumerate() {
        let index = dpp_index(state, p_succ[m], zeta, delta_max, k_max, table);
        if index > best_index {
            best = m;
            best_index = index;
        }
    }
    if v_dpp * best_index > z {
        best + 1
    } else {
        0
    }
}

/// Budget-debt queue Z(t): grows by the excess of the slot cost over the
/// budget and is floored at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualQueue {
    z: f64,
    eta_max: f64,
}

impl VirtualQueue {
    pub fn new(eta_max: f64) -> Self {
        Self { z: 0.0, eta_max }
    }

    /// Resumes a queue from a recorded backlog, e.g. when replaying a logged
    /// run. `z` must be a value the recursion can produce, i.e. nonnegative.
    pub fn with_backlog(z: f64, eta_max: f64) -> Self {
        assert!(z >= 0.0, "backlog must be nonnegative, got {z}");
        Self { z, eta_max }
    }

    /// Z ← max(Z + cost − η_max, 0); returns the new backlog.
    pub fn update(&mut self, cost: u32) -> f64 {
        self.z = (self.z + f64::from(cost) - self.eta_max).max(0.0);
        self.z
    }

    pub fn backlog(&self) -> f64 {
        self.z
    }
}

/// Ready-to-run policy state: the penalty table, per-source success
/// probabilities, thresholds, control gain, and the virtual queue.
#[derive(Debug, Clone)]
pub struct DppPolicy {
    table: PenaltyTable,
    p_succ: Vec<f64>,
    zeta: u32,
    delta_max: u32,
    k_max: u32,
    v_dpp: f64,
    queue: VirtualQueue,
}

impl DppPolicy {
    pub fn new(
        weights: &WeightVector,
        config: &SystemConfig,
        dpp: DppConfig,
    ) -> Result<Self, DppError> {
        dpp.validate()?;
        if weights.k_max() != config.k_max {
            return Err(DppError::KMaxMismatch {
                weights: weights.k_max(),
                system: config.k_max,
            });
        }
        Ok(Self {
            table: penalty_table(weights),
            p_succ: config.sources.iter().map(|s| s.p_succ).collect(),
            zeta: config.zeta,
            delta_max: config.delta_max,
            k_max: config.k_max,
            v_dpp: dpp.v_dpp,
            queue: VirtualQueue::new(config.eta_max),
        })
    }

    /// The action for the current states under the current backlog.
    pub fn decide(&self, states: &[SourceState]) -> usize {
        dpp_decide(
            states,
            &self.p_succ,
            self.zeta,
            self.delta_max,
            self.k_max,
            &self.table,
            self.queue.backlog(),
            self.v_dpp,
        )
    }

    /// Per-source indices for the current states (diagnostic logging).
    pub fn indices(&self, states: &[SourceState]) -> Vec<f64> {
        states
            .iter()
            .zip(&self.p_succ)
            .map(|(state, &p)| {
                dpp_index(state, p, self.zeta, self.delta_max, self.k_max, &self.table)
            })
            .collect()
    }

    /// Feeds the realized slot cost into the virtual queue; returns the new
    /// backlog.
    pub fn observe_cost(&mut self, cost: u32) -> f64 {
        self.queue.update(cost)
    }

    pub fn backlog(&self) -> f64 {
        self.queue.backlog()
    }

    pub fn penalty_table(&self) -> &PenaltyTable {
        &self.table
    }
}
