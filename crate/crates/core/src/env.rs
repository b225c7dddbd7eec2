//! Discrete-time simulator of the M-source status-update system.
//!
//! Each slot proceeds in a fixed order: (1) every source independently
//! generates a fresh packet with probability `p_gen`, resetting its
//! transmitter-side AoI to zero (otherwise the AoI increments); (2) if the
//! scheduler picked source m, the channel delivers with probability
//! `p_succ`; (3) on delivery the receiver-side AoI becomes the post-arrival
//! transmitter-side AoI plus one — a packet generated at the start of a slot
//! can be delivered within that same slot — otherwise it increments; (4) the
//! consecutive-violation counter increments (capped at `k_max`) whenever the
//! new receiver-side AoI exceeds ζ and resets to zero otherwise; (5) the
//! slot costs one transmission unit iff the action was nonzero.
//!
//! All AoI values are truncated at `delta_max`, keeping the state space
//! finite. RNG contract: one stream per simulation run; each step consumes
//! the per-source arrival draws in source order, then (only for nonzero
//! actions) one channel draw — so an idle slot consumes exactly M draws and
//! a transmitting slot M+1.

use rand::Rng;
use thiserror::Error;

/// Per-source stochastic parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    /// Per-slot packet generation probability, in [0, 1].
    pub p_gen: f64,
    /// Per-slot delivery success probability, in [0, 1].
    pub p_succ: f64,
}

/// Static description of the M-source system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Number of sources M ≥ 1.
    pub num_sources: usize,
    /// Per-source parameters; length must equal `num_sources`.
    pub sources: Vec<SourceParams>,
    /// AoI violation threshold ζ; must satisfy 0 < ζ < `delta_max`.
    pub zeta: u32,
    /// Maximum persistence window length k_max ≥ 1; violation counters are
    /// truncated here.
    pub k_max: u32,
    /// Upper truncation bound for all AoI values.
    pub delta_max: u32,
    /// Long-run average transmission cost budget, in (0, 1].
    pub eta_max: f64,
}

/// State of one source: transmitter-side AoI, receiver-side AoI, and the
/// length of the current consecutive-violation run (capped at `k_max`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceState {
    /// Transmitter-side AoI Δ_s ≥ 0.
    pub aoi_tx: u32,
    /// Receiver-side AoI Δ_r ≥ 1.
    pub aoi_rx: u32,
    /// Consecutive violation counter v ∈ [0, k_max]; positive only while
    /// `aoi_rx` exceeds ζ.
    pub viol_count: u32,
}

/// What one slot did: the action taken, whether the channel delivered, the
/// transmission cost, and the post-slot violation counters the reward needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    /// Action index in {0..M}; 0 is idle, m ≥ 1 schedules source m.
    pub scheduled: usize,
    /// True iff a scheduled transmission succeeded this slot.
    pub delivered: bool,
    /// 1 iff `scheduled != 0`.
    pub cost: u32,
    /// Violation counters after the slot, one per source.
    pub next_viol_counts: Vec<u32>,
}

/// Configuration or action errors, reported with the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("num_sources must be at least 1")]
    NoSources,
    #[error("sources list has {got} entries but num_sources is {expected}")]
    SourceCountMismatch { got: usize, expected: usize },
    #[error("source {index}: p_gen = {value} lies outside [0, 1]")]
    InvalidPGen { index: usize, value: f64 },
    #[error("source {index}: p_succ = {value} lies outside [0, 1]")]
    InvalidPSucc { index: usize, value: f64 },
    #[error("zeta = {zeta} must satisfy 0 < zeta < delta_max = {delta_max}")]
    InvalidZeta { zeta: u32, delta_max: u32 },
    #[error("k_max must be at least 1")]
    InvalidKMax,
    #[error("eta_max = {0} must lie in (0, 1]")]
    InvalidEtaMax(f64),
    #[error("action {action} out of range: valid actions are 0..={num_sources}")]
    ActionOutOfRange { action: usize, num_sources: usize },
    #[error("state list has {got} entries but num_sources is {expected}")]
    StateCountMismatch { got: usize, expected: usize },
}

impl SystemConfig {
    /// A system whose M sources all share the same parameters.
    pub fn homogeneous(
        num_sources: usize,
        p_gen: f64,
        p_succ: f64,
        zeta: u32,
        k_max: u32,
        delta_max: u32,
        eta_max: f64,
    ) -> Self {
        Self {
            num_sources,
            sources: vec![SourceParams { p_gen, p_succ }; num_sources],
            zeta,
            k_max,
            delta_max,
            eta_max,
        }
    }

    /// Checks every invariant, reporting the first violated field.
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.num_sources == 0 {
            return Err(EnvError::NoSources);
        }
        if self.sources.len() != self.num_sources {
            return Err(EnvError::SourceCountMismatch {
                got: self.sources.len(),
                expected: self.num_sources,
            });
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.p_gen) || s.p_gen.is_nan() {
                return Err(EnvError::InvalidPGen { index: i, value: s.p_gen });
            }
            if !(0.0..=1.0).contains(&s.p_succ) || s.p_succ.is_nan() {
                return Err(EnvError::InvalidPSucc { index: i, value: s.p_succ });
            }
        }
        if self.zeta == 0 || self.zeta >= self.delta_max {
            return Err(EnvError::InvalidZeta { zeta: self.zeta, delta_max: self.delta_max });
        }
        if self.k_max == 0 {
            return Err(EnvError::InvalidKMax);
        }
        if !(self.eta_max > 0.0 && self.eta_max <= 1.0) {
            return Err(EnvError::InvalidEtaMax(self.eta_max));
        }
        Ok(())
    }

    /// Number of scheduling actions, |A| = M + 1 (idle plus one per source).
    pub fn num_actions(&self) -> usize {
        self.num_sources + 1
    }
}

/// Fresh per-source states: transmitter AoI 0, receiver AoI 1, counter 0.
pub fn reset(config: &SystemConfig) -> Result<Vec<SourceState>, EnvError> {
    config.validate()?;
    Ok(vec![SourceState { aoi_tx: 0, aoi_rx: 1, viol_count: 0 }; config.num_sources])
}

/// Deterministic one-slot update for a single source, given the slot's
/// arrival and delivery outcomes. `delivered` may only be true for the
/// scheduled source. Shared verbatim by the simulator and the exact chain
/// oracle so both walk identical dynamics.
pub fn advance_source(
    state: SourceState,
    arrived: bool,
    delivered: bool,
    zeta: u32,
    k_max: u32,
    delta_max: u32,
) -> SourceState {
    let aoi_tx = if arrived { 0 } else { (state.aoi_tx + 1).min(delta_max) };
    let aoi_rx = if delivered {
        // Delivery carries the packet generated this slot if one arrived.
        (aoi_tx + 1).min(delta_max)
    } else {
        (state.aoi_rx + 1).min(delta_max)
    };
    let viol_count = if aoi_rx > zeta { (state.viol_count + 1).min(k_max) } else { 0 };
    SourceState { aoi_tx, aoi_rx, viol_count }
}

/// Advances the whole system one slot under `action` (0 = idle, m ≥ 1 =
/// schedule source m), drawing arrivals for every source in source order and
/// then, for a nonzero action, one channel outcome.
pub fn step<R: Rng + ?Sized>(
    config: &SystemConfig,
    states: &[SourceState],
    action: usize,
    rng: &mut R,
) -> Result<(Vec<SourceState>, StepOutcome), EnvError> {
    if action > config.num_sources {
        return Err(EnvError::ActionOutOfRange { action, num_sources: config.num_sources });
    }
    if states.len() != config.num_sources {
        return Err(EnvError::StateCountMismatch {
            got: states.len(),
            expected: config.num_sources,
        });
    }

    let arrived: Vec<bool> =
        config.sources.iter().map(|s| rng.random::<f64>() < s.p_gen).collect();
    let delivered = action > 0 && rng.random::<f64>() < config.sources[action - 1].p_succ;

    let next: Vec<SourceState> = states
        .iter()
        .enumerate()
        .map(|(m, &s)| {
            advance_source(
                s,
                arrived[m],
                delivered && action == m + 1,
                config.zeta,
                config.k_max,
                config.delta_max,
            )
        })
        .collect();

    let outcome = StepOutcome {
        scheduled: action,
        delivered,
        cost: u32::from(action != 0),
        next_viol_counts: next.iter().map(|s| s.viol_count).collect(),
    };
    Ok((next, outcome))
}

/// Normalized 3M-feature encoding: per source, in source order,
/// (aoi_tx/delta_max, aoi_rx/delta_max, viol_count/k_max).
pub fn encode_state(states: &[SourceState], config: &SystemConfig) -> Vec<f64> {
    let mut features = Vec::with_capacity(3 * states.len());
    for s in states {
        features.push(f64::from(s.aoi_tx) / f64::from(config.delta_max));
        features.push(f64::from(s.aoi_rx) / f64::from(config.delta_max));
        features.push(f64::from(s.viol_count) / f64::from(config.k_max));
    }
    features
}

/// Owned simulator instance: configuration, current per-source states, and
/// the run's RNG stream. Instances share nothing, so independent instances
/// can run on independent threads.
#[derive(Debug, Clone)]
pub struct Environment<R: Rng> {
    config: SystemConfig,
    states: Vec<SourceState>,
    rng: R,
}

impl<R: Rng> Environment<R> {
    /// Validates the configuration and starts from fresh states.
    pub fn new(config: SystemConfig, rng: R) -> Result<Self, EnvError> {
        let states = reset(&config)?;
        Ok(Self { config, states, rng })
    }

    /// Re-initializes the per-source states; the RNG stream continues.
    pub fn reset(&mut self) {
        for s in &mut self.states {
            *s = SourceState { aoi_tx: 0, aoi_rx: 1, viol_count: 0 };
        }
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn states(&self) -> &[SourceState] {
        &self.states
    }

    /// Normalized feature view of the current states.
    pub fn features(&self) -> Vec<f64> {
        encode_state(&self.states, &self.config)
    }

    /// Advances one slot in place and reports what happened.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        let (next, outcome) = step(&self.config, &self.states, action, &mut self.rng)?;
        self.states = next;
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(m: usize, p_gen: f64, p_succ: f64) -> SystemConfig {
        SystemConfig::homogeneous(m, p_gen, p_succ, 15, 9, 100, 0.75)
    }

    #[test]
    fn reset_initializes_tx_zero_rx_one_counter_zero() {
        for m in [1, 2, 10] {
            let states = reset(&cfg(m, 0.7, 0.7)).unwrap();
            assert_eq!(states.len(), m);
            for s in states {
                assert_eq!(s, SourceState { aoi_tx: 0, aoi_rx: 1, viol_count: 0 });
            }
        }
    }

    #[test]
    fn validate_reports_offending_field() {
        let mut c = cfg(2, 0.7, 0.7);
        c.sources[1].p_gen = 1.5;
        assert_eq!(c.validate(), Err(EnvError::InvalidPGen { index: 1, value: 1.5 }));

        let mut c = cfg(1, 0.7, 0.7);
        c.zeta = 100; // == delta_max
        assert!(matches!(c.validate(), Err(EnvError::InvalidZeta { .. })));

        let mut c = cfg(1, 0.7, 0.7);
        c.eta_max = 0.0;
        assert_eq!(c.validate(), Err(EnvError::InvalidEtaMax(0.0)));

        let mut c = cfg(3, 0.7, 0.7);
        c.sources.pop();
        assert_eq!(
            c.validate(),
            Err(EnvError::SourceCountMismatch { got: 2, expected: 3 })
        );
    }

    #[test]
    fn delivery_sets_receiver_aoi_to_post_arrival_tx_plus_one() {
        // No arrival this slot: transmitter AoI goes 2 -> 3, and the delivered
        // packet resets the receiver AoI to 3 + 1 = 4.
        let s = SourceState { aoi_tx: 2, aoi_rx: 10, viol_count: 0 };
        let next = advance_source(s, false, true, 15, 9, 100);
        assert_eq!(next, SourceState { aoi_tx: 3, aoi_rx: 4, viol_count: 0 });

        // Same-slot arrival then delivery: receiver AoI drops to 1.
        let s = SourceState { aoi_tx: 50, aoi_rx: 80, viol_count: 9 };
        let next = advance_source(s, true, true, 15, 9, 100);
        assert_eq!(next, SourceState { aoi_tx: 0, aoi_rx: 1, viol_count: 0 });
    }

    #[test]
    fn idle_at_truncation_bound_is_a_fixed_point() {
        let s = SourceState { aoi_tx: 100, aoi_rx: 100, viol_count: 9 };
        let next = advance_source(s, false, false, 15, 9, 100);
        assert_eq!(next, s);
    }

    #[test]
    fn counter_starts_a_run_when_receiver_aoi_crosses_zeta() {
        // zeta = 15, receiver AoI 15 -> 16 under idle: run starts.
        let s = SourceState { aoi_tx: 3, aoi_rx: 15, viol_count: 0 };
        let next = advance_source(s, false, false, 15, 9, 100);
        assert_eq!(next.aoi_rx, 16);
        assert_eq!(next.viol_count, 1);

        // Counter saturates at k_max.
        let s = SourceState { aoi_tx: 3, aoi_rx: 40, viol_count: 9 };
        let next = advance_source(s, false, false, 15, 9, 100);
        assert_eq!(next.viol_count, 9);

        // Dropping to or below zeta resets the counter.
        let s = SourceState { aoi_tx: 4, aoi_rx: 40, viol_count: 7 };
        let next = advance_source(s, false, true, 15, 9, 100);
        assert_eq!(next.aoi_rx, 6);
        assert_eq!(next.viol_count, 0);
    }

    #[test]
    fn cost_is_indicator_of_nonzero_action() {
        let config = cfg(2, 0.7, 0.7);
        let states = reset(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (_, idle) = step(&config, &states, 0, &mut rng).unwrap();
        assert_eq!(idle.cost, 0);
        assert!(!idle.delivered);
        let (_, tx) = step(&config, &states, 2, &mut rng).unwrap();
        assert_eq!(tx.cost, 1);
    }

    #[test]
    fn action_out_of_range_is_rejected() {
        let config = cfg(2, 0.7, 0.7);
        let states = reset(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let err = step(&config, &states, 3, &mut rng).unwrap_err();
        assert_eq!(err, EnvError::ActionOutOfRange { action: 3, num_sources: 2 });
    }

    #[test]
    fn rng_draw_budget_per_slot_is_sources_plus_channel() {
        // Two RNGs stepping in lockstep stay identical iff each slot consumes
        // M draws when idle and M+1 when transmitting.
        let config = cfg(3, 0.5, 0.5);
        let states = reset(&config).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        let _ = step(&config, &states, 0, &mut a).unwrap();
        for _ in 0..3 {
            let _: f64 = b.random();
        }
        assert_eq!(a.random::<u64>(), b.random::<u64>());

        let _ = step(&config, &states, 2, &mut a).unwrap();
        for _ in 0..4 {
            let _: f64 = b.random();
        }
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn encode_normalizes_each_component() {
        let config = cfg(1, 0.7, 0.7);
        let f = encode_state(&[SourceState { aoi_tx: 10, aoi_rx: 20, viol_count: 3 }], &config);
        assert_eq!(f.len(), 3);
        assert!((f[0] - 0.10).abs() < 1e-15);
        assert!((f[1] - 0.20).abs() < 1e-15);
        assert!((f[2] - 3.0 / 9.0).abs() < 1e-15);

        let f = encode_state(&reset(&config).unwrap(), &config);
        assert_eq!(f, vec![0.0, 0.01, 0.0]);

        let f =
            encode_state(&[SourceState { aoi_tx: 100, aoi_rx: 100, viol_count: 9 }], &config);
        assert_eq!(f, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn same_seed_same_actions_same_trajectory() {
        let config = cfg(4, 0.6, 0.8);
        let run = |seed: u64| {
            let mut env =
                Environment::new(config.clone(), ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut log = Vec::new();
            for t in 0..500 {
                let action = t % (config.num_sources + 1);
                let out = env.step(action).unwrap();
                log.push((env.states().to_vec(), out));
            }
            log
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn no_deliveries_pins_receiver_aoi_at_delta_max() {
        let config = SystemConfig::homogeneous(1, 0.7, 0.0, 15, 9, 100, 0.75);
        let mut env = Environment::new(config, ChaCha8Rng::seed_from_u64(3)).unwrap();
        for _ in 0..100 {
            env.step(1).unwrap();
        }
        assert_eq!(env.states()[0].aoi_rx, 100);
        for _ in 0..50 {
            env.step(1).unwrap();
            assert_eq!(env.states()[0].aoi_rx, 100);
            assert_eq!(env.states()[0].viol_count, 9);
        }
    }
}
