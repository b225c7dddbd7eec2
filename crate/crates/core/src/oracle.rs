//! Exact evaluation of small instances: build the finite Markov chain the
//! simulator induces under a fixed stationary policy, solve for its
//! stationary distribution, and read off C-AVR, AVR, and average cost.
//!
//! The chain lives on the full truncated state cube — per source,
//! (aoi_tx, aoi_rx, viol_count) ∈ [0, Δ_max] × [1, Δ_max] × [0, k_max] —
//! so S = ((Δ_max+1)·Δ_max·(k_max+1))^M states, capped by a configurable
//! ceiling. Cube corners that the dynamics can never reproduce (for example
//! a zero counter next to a violating receiver AoI) are transient; the
//! solver restricts the stationary distribution to the unique closed
//! communicating class and gives every transient state exactly zero mass,
//! which makes the oracle AVR bit-identical to psi[1].
//!
//! Intended regime is M = 1 (the ceiling rejects anything large); the
//! construction is generic in M so that toy multi-source instances stay
//! checkable.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::env::{advance_source, EnvError, SourceState, SystemConfig};

/// Default bound on the number of chain states.
pub const DEFAULT_STATE_CEILING: usize = 100_000;

/// Successive-iterate max-norm threshold for power iteration.
pub const POWER_ITERATION_TOL: f64 = 1e-12;

/// Iteration budget for power iteration.
pub const POWER_ITERATION_MAX: usize = 1_000_000;

/// Stationary policy evaluated by the oracle.
#[derive(Debug, Clone, Copy)]
pub enum OraclePolicy {
    /// The same action every slot; 0 idles, m ≥ 1 schedules source m.
    Fixed(usize),
    /// Uniform over {0..M} every slot, independent of the state.
    UniformRandom,
    /// Deterministic state→action map.
    Rule(fn(&[SourceState]) -> usize),
}

/// A small instance to evaluate exactly: system, policy, and the state-count
/// ceiling above which construction is rejected rather than approximated.
#[derive(Debug, Clone)]
pub struct ChainSpec {
    pub config: SystemConfig,
    pub policy: OraclePolicy,
    pub state_ceiling: usize,
}

/// Row-sparse row-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseChain {
    pub num_states: usize,
    /// `rows[s]` lists (successor, probability) with strictly positive
    /// probabilities, sorted by successor, summing to 1 per row.
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// Stationary distribution over the chain's full state cube; transient
/// states carry exactly zero mass.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    pub pi: Vec<f64>,
}

/// Exact long-run metrics under the evaluated policy.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// `psi[k-1]` = stationary probability of a k-window violation,
    /// averaged over sources.
    pub psi: Vec<f64>,
    /// Stationary probability of the receiver-side AoI exceeding ζ,
    /// averaged over sources; equals `psi[0]` bit-for-bit.
    pub avr: f64,
    /// Stationary transmission rate of the policy.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("state space has {states} states, exceeding the ceiling of {ceiling}")]
    StateCeilingExceeded { states: u128, ceiling: usize },
    #[error("policy returned action {action} for a {num_sources}-source system")]
    PolicyActionOutOfRange { action: usize, num_sources: usize },
    #[error(
        "power iteration did not converge within {max_iters} iterations \
         (last max-norm delta {delta:e})"
    )]
    NonConvergence { max_iters: usize, delta: f64 },
    #[error("chain is reducible: {closed_classes} closed communicating classes")]
    Reducible { closed_classes: usize },
}

impl ChainSpec {
    /// Validates the system configuration and adopts the default ceiling.
    pub fn new(config: SystemConfig, policy: OraclePolicy) -> Result<Self, OracleError> {
        config.validate()?;
        Ok(Self { config, policy, state_ceiling: DEFAULT_STATE_CEILING })
    }

    /// States per source: (Δ_max+1) transmitter ages × Δ_max receiver ages
    /// × (k_max+1) counter values.
    pub fn states_per_source(&self) -> usize {
        (self.config.delta_max as usize + 1)
            * self.config.delta_max as usize
            * (self.config.k_max as usize + 1)
    }

    /// Total joint states, or an error when the ceiling is exceeded.
    pub fn num_states(&self) -> Result<usize, OracleError> {
        let per = self.states_per_source() as u128;
        let states = per
            .checked_pow(self.config.num_sources as u32)
            .unwrap_or(u128::MAX);
        if states > self.state_ceiling as u128 {
            return Err(OracleError::StateCeilingExceeded {
                states,
                ceiling: self.state_ceiling,
            });
        }
        Ok(states as usize)
    }

    fn index_one(&self, s: SourceState) -> usize {
        let dmax = self.config.delta_max as usize;
        let kmax = self.config.k_max as usize;
        (s.aoi_tx as usize * dmax + (s.aoi_rx as usize - 1)) * (kmax + 1) + s.viol_count as usize
    }

    fn state_one(&self, idx: usize) -> SourceState {
        let dmax = self.config.delta_max as usize;
        let kmax = self.config.k_max as usize;
        let viol_count = (idx % (kmax + 1)) as u32;
        let rest = idx / (kmax + 1);
        let aoi_rx = (rest % dmax + 1) as u32;
        let aoi_tx = (rest / dmax) as u32;
        SourceState { aoi_tx, aoi_rx, viol_count }
    }

    /// Bijection from joint per-source states to {0..S−1}, mixed-radix in
    /// source order.
    pub fn index(&self, states: &[SourceState]) -> usize {
        let base = self.states_per_source();
        states.iter().fold(0usize, |acc, &s| acc * base + self.index_one(s))
    }

    /// Inverse of [`ChainSpec::index`].
    pub fn state_at(&self, mut idx: usize) -> Vec<SourceState> {
        let base = self.states_per_source();
        let m = self.config.num_sources;
        let mut out = vec![SourceState { aoi_tx: 0, aoi_rx: 1, viol_count: 0 }; m];
        for slot in (0..m).rev() {
            out[slot] = self.state_one(idx % base);
            idx /= base;
        }
        out
    }

    fn action_for(&self, states: &[SourceState]) -> Result<Option<usize>, OracleError> {
        let check = |action: usize| {
            if action > self.config.num_sources {
                Err(OracleError::PolicyActionOutOfRange {
                    action,
                    num_sources: self.config.num_sources,
                })
            } else {
                Ok(action)
            }
        };
        match self.policy {
            OraclePolicy::Fixed(a) => check(a).map(Some),
            OraclePolicy::Rule(rule) => check(rule(states)).map(Some),
            OraclePolicy::UniformRandom => Ok(None),
        }
    }

    /// Stationary transmission probability of the policy in a given state.
    pub fn transmit_probability(&self, states: &[SourceState]) -> Result<f64, OracleError> {
        Ok(match self.action_for(states)? {
            Some(a) => f64::from(a != 0),
            None => {
                // Uniform over {0..M}: idle with probability 1/(M+1).
                self.config.num_sources as f64 / (self.config.num_sources as f64 + 1.0)
            }
        })
    }
}

/// Enumerates every (arrival pattern × delivery outcome) branch of one slot
/// under `action`, scattering probability mass over successor states.
fn accumulate_action(
    spec: &ChainSpec,
    states: &[SourceState],
    action: usize,
    weight: f64,
    row: &mut BTreeMap<usize, f64>,
) {
    let cfg = &spec.config;
    let m = cfg.num_sources;
    let p_succ = if action > 0 { cfg.sources[action - 1].p_succ } else { 0.0 };

    for arrival_mask in 0u32..(1 << m) {
        let mut p_arrival = 1.0;
        for (i, s) in cfg.sources.iter().enumerate() {
            let arrived = arrival_mask & (1 << i) != 0;
            p_arrival *= if arrived { s.p_gen } else { 1.0 - s.p_gen };
        }
        if p_arrival == 0.0 {
            continue;
        }
        for &delivered in &[true, false] {
            let p_branch = p_arrival * if delivered { p_succ } else { 1.0 - p_succ };
            if p_branch == 0.0 {
                continue;
            }
            let next: Vec<SourceState> = states
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    advance_source(
                        s,
                        arrival_mask & (1 << i) != 0,
                        delivered && action == i + 1,
                        cfg.zeta,
                        cfg.k_max,
                        cfg.delta_max,
                    )
                })
                .collect();
            *row.entry(spec.index(&next)).or_insert(0.0) += weight * p_branch;
        }
    }
}

/// Builds the row-stochastic transition matrix of the chain `spec` induces.
pub fn build_chain(spec: &ChainSpec) -> Result<SparseChain, OracleError> {
    spec.config.validate()?;
    let num_states = spec.num_states()?;
    let mut rows = Vec::with_capacity(num_states);
    for idx in 0..num_states {
        let states = spec.state_at(idx);
        let mut row = BTreeMap::new();
        match spec.action_for(&states)? {
            Some(a) => accumulate_action(spec, &states, a, 1.0, &mut row),
            None => {
                let w = 1.0 / (spec.config.num_sources as f64 + 1.0);
                for a in 0..=spec.config.num_sources {
                    accumulate_action(spec, &states, a, w, &mut row);
                }
            }
        }
        rows.push(row.into_iter().collect::<Vec<_>>());
    }
    Ok(SparseChain { num_states, rows })
}

/// Strongly connected components by iterative Tarjan; returns the component
/// id per node and, per component, whether it is closed (no edge leaves it).
fn closed_components(chain: &SparseChain) -> (Vec<usize>, Vec<bool>) {
    let n = chain.num_states;
    let mut comp = vec![usize::MAX; n];
    let mut index = vec![u32::MAX; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0u32;
    let mut num_comps = 0usize;

    // Explicit DFS frames: (node, next outgoing edge position).
    let mut frames: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != u32::MAX {
            continue;
        }
        frames.push((root, 0));
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (node, ref mut edge)) = frames.last_mut() {
            if *edge < chain.rows[node].len() {
                let succ = chain.rows[node][*edge].0;
                *edge += 1;
                if index[succ] == u32::MAX {
                    index[succ] = next_index;
                    low[succ] = next_index;
                    next_index += 1;
                    stack.push(succ);
                    on_stack[succ] = true;
                    frames.push((succ, 0));
                } else if on_stack[succ] {
                    low[node] = low[node].min(index[succ]);
                }
            } else {
                frames.pop();
                if let Some(&mut (parent, _)) = frames.last_mut() {
                    low[parent] = low[parent].min(low[node]);
                }
                if low[node] == index[node] {
                    loop {
                        let v = stack.pop().expect("tarjan stack underflow");
                        on_stack[v] = false;
                        comp[v] = num_comps;
                        if v == node {
                            break;
                        }
                    }
                    num_comps += 1;
                }
            }
        }
    }

    let mut closed = vec![true; num_comps];
    for (node, row) in chain.rows.iter().enumerate() {
        for &(succ, _) in row {
            if comp[succ] != comp[node] {
                closed[comp[node]] = false;
            }
        }
    }
    (comp, closed)
}

/// Solves πP = π over the chain's unique closed communicating class.
///
/// Power iteration runs on the half-lazy kernel (P + I)/2, which has the
/// same fixed points but converges for periodic chains too; it starts from
/// the uniform vector on the closed class and stops when the
/// successive-iterate max-norm falls below [`POWER_ITERATION_TOL`].
/// Transient states receive exactly zero mass.
pub fn stationary_distribution(chain: &SparseChain) -> Result<StationaryDist, OracleError> {
    let (comp, closed) = closed_components(chain);
    let closed_count = closed.iter().filter(|&&c| c).count();
    if closed_count != 1 {
        return Err(OracleError::Reducible { closed_classes: closed_count });
    }
    let target = closed.iter().position(|&c| c).expect("one closed class");

    let members: Vec<usize> =
        (0..chain.num_states).filter(|&s| comp[s] == target).collect();
    let mut local = vec![usize::MAX; chain.num_states];
    for (i, &s) in members.iter().enumerate() {
        local[s] = i;
    }
    // A closed class keeps all its mass: successors of members are members.
    let local_rows: Vec<Vec<(usize, f64)>> = members
        .iter()
        .map(|&s| chain.rows[s].iter().map(|&(succ, p)| (local[succ], p)).collect())
        .collect();

    let n = members.len();
    let mut x = vec![1.0 / n as f64; n];
    let mut y = vec![0.0f64; n];
    let mut converged = false;
    let mut delta = f64::INFINITY;
    for _ in 0..POWER_ITERATION_MAX {
        for (j, v) in y.iter_mut().enumerate() {
            *v = 0.5 * x[j];
        }
        for (i, row) in local_rows.iter().enumerate() {
            let mass = 0.5 * x[i];
            for &(j, p) in row {
                y[j] += mass * p;
            }
        }
        let total: f64 = y.iter().sum();
        for v in &mut y {
            *v /= total;
        }
        delta = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        std::mem::swap(&mut x, &mut y);
        if delta < POWER_ITERATION_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OracleError::NonConvergence { max_iters: POWER_ITERATION_MAX, delta });
    }

    let mut pi = vec![0.0f64; chain.num_states];
    for (i, &s) in members.iter().enumerate() {
        pi[s] = x[i];
    }
    Ok(StationaryDist { pi })
}

/// Reads exact C-AVR components, AVR, and average cost off a stationary
/// distribution. Sums run in ascending state order with identical terms for
/// AVR and psi[1], so those two come out bit-identical.
pub fn exact_cavr(pi: &StationaryDist, spec: &ChainSpec) -> Result<OracleResult, OracleError> {
    let cfg = &spec.config;
    let m = cfg.num_sources as f64;
    let k_max = cfg.k_max as usize;
    let mut psi = vec![0.0f64; k_max];
    let mut avr = 0.0f64;
    let mut cost = 0.0f64;

    for (idx, &mass) in pi.pi.iter().enumerate() {
        let states = spec.state_at(idx);
        for k in 1..=k_max {
            let hits = states.iter().filter(|s| s.viol_count as usize >= k).count();
            psi[k - 1] += mass * hits as f64 / m;
        }
        let rx_hits = states.iter().filter(|s| s.aoi_rx > cfg.zeta).count();
        avr += mass * rx_hits as f64 / m;
        cost += mass * spec.transmit_probability(&states)?;
    }
    Ok(OracleResult { psi, avr, cost })
}

/// Convenience: build, solve, and read metrics in one call.
pub fn evaluate(spec: &ChainSpec) -> Result<OracleResult, OracleError> {
    let chain = build_chain(spec)?;
    let pi = stationary_distribution(&chain)?;
    exact_cavr(&pi, spec)
}
