//! Trajectory analytics: AVR, the C-AVR vector, weighted C-AVR under the
//! three weighting schemes, tail persistence index, and empirical
//! transmission cost.
//!
//! The k-window consecutive violation event at slot t is equivalent to the
//! violation counter reaching k (`v(t, m) ≥ k`), so all C-AVR estimates are
//! computed from recorded counter trajectories. The finite-horizon estimator
//! for window length k averages over slots t = k..T, giving the denominator
//! M·(T−k+1) rather than M·T.

use thiserror::Error;

/// Tolerance for the Σw_k = 1 normalization check.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// How the per-window weights w_1..w_{k_max} are generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme {
    /// Equal importance across all persistence scales: w_k = 1/k_max.
    Uniform,
    /// Progressively larger weights for longer violations:
    /// w_k = β^k / Σ_j β^j with β > 1.
    Exponential { beta: f64 },
    /// All weight on a single window length k_o.
    OneHot { k_o: u32 },
}

/// Normalized weighting vector over persistence scales k = 1..k_max.
///
/// Entry `weights()[k-1]` holds w_k. Construction rejects anything that is
/// not nonnegative and summing to 1 within [`WEIGHT_SUM_TOLERANCE`];
/// unnormalized input is never silently rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
    scheme: WeightScheme,
}

/// Finite-horizon C-AVR estimate over M sources and T slots.
#[derive(Debug, Clone, PartialEq)]
pub struct CavrEstimate {
    /// `window_counts[k-1]` = Σ_{t=k}^{T} Σ_m 1[v(t,m) ≥ k]; non-increasing
    /// in k because {v ≥ k} ⊆ {v ≥ k−1} and the slot range only shrinks.
    pub window_counts: Vec<u64>,
    /// Horizon T in slots.
    pub horizon: usize,
    /// Number of sources M.
    pub num_sources: usize,
    /// `psi[k-1]` = window_counts[k-1] / (M·(T−k+1)), each in [0, 1].
    pub psi: Vec<f64>,
}

/// Empirical transmission-cost estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    /// Slots with a nonzero action.
    pub transmit_slots: u64,
    /// Total slots observed.
    pub horizon: u64,
    /// transmit_slots / horizon.
    pub eta_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("k_max must be at least 1")]
    InvalidKMax,
    #[error("exponential weighting requires beta > 1, got {0}")]
    InvalidBeta(f64),
    #[error("one-hot window k_o = {k_o} out of range 1..={k_max}")]
    InvalidKo { k_o: u32, k_max: u32 },
    #[error("weight entry {index} is negative: {value}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights sum to {0}, not 1 (tolerance 1e-12); rescale explicitly")]
    UnnormalizedWeights(f64),
    #[error("trajectory horizon {horizon} is shorter than k_max = {k_max}")]
    HorizonTooShort { horizon: usize, k_max: u32 },
    #[error("slot {slot} has {got} per-source entries, expected {expected}")]
    RaggedTrajectory { slot: usize, got: usize, expected: usize },
    #[error("psi has {psi_len} entries but the weight vector has {weights_len}")]
    LengthMismatch { psi_len: usize, weights_len: usize },
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("trajectory CSV line {line}: {message}")]
    Csv { line: usize, message: String },
}

impl WeightVector {
    /// Builds the weight vector for `scheme` over windows 1..k_max.
    pub fn new(scheme: WeightScheme, k_max: u32) -> Result<Self, MetricsError> {
        if k_max == 0 {
            return Err(MetricsError::InvalidKMax);
        }
        let weights = match scheme {
            WeightScheme::Uniform => {
                vec![1.0 / f64::from(k_max); k_max as usize]
            }
            WeightScheme::Exponential { beta } => {
                if !(beta > 1.0) {
                    return Err(MetricsError::InvalidBeta(beta));
                }
                let powers: Vec<f64> = (1..=k_max).map(|k| beta.powi(k as i32)).collect();
                let total: f64 = powers.iter().sum();
                powers.into_iter().map(|p| p / total).collect()
            }
            WeightScheme::OneHot { k_o } => {
                if k_o == 0 || k_o > k_max {
                    return Err(MetricsError::InvalidKo { k_o, k_max });
                }
                let mut w = vec![0.0; k_max as usize];
                w[(k_o - 1) as usize] = 1.0;
                w
            }
        };
        Self::from_weights(weights, scheme)
    }

    /// Wraps explicit weights after checking nonnegativity and that they sum
    /// to 1 within [`WEIGHT_SUM_TOLERANCE`]. Rejects, never rescales.
    pub fn from_weights(weights: Vec<f64>, scheme: WeightScheme) -> Result<Self, MetricsError> {
        if weights.is_empty() {
            return Err(MetricsError::InvalidKMax);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value >= 0.0) {
                return Err(MetricsError::NegativeWeight { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(MetricsError::UnnormalizedWeights(total));
        }
        Ok(Self { weights, scheme })
    }

    /// w_1..w_{k_max}; index k−1 holds w_k.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    /// Number of persistence scales k_max.
    pub fn k_max(&self) -> u32 {
        self.weights.len() as u32
    }
}

/// Counts k-window violation events from a recorded counter trajectory:
/// `viol_counts[t-1][m]` = v(t, m) for slots t = 1..T.
///
/// For every window length k = 1..k_max, slot t contributes source m iff
/// t ≥ k and v(t, m) ≥ k.
pub fn accumulate_cavr(
    viol_counts: &[Vec<u32>],
    k_max: u32,
    num_sources: usize,
) -> Result<CavrEstimate, MetricsError> {
    if k_max == 0 {
        return Err(MetricsError::InvalidKMax);
    }
    let horizon = viol_counts.len();
    if horizon < k_max as usize {
        return Err(MetricsError::HorizonTooShort { horizon, k_max });
    }
    for (slot, per_source) in viol_counts.iter().enumerate() {
        if per_source.len() != num_sources {
            return Err(MetricsError::RaggedTrajectory {
                slot: slot + 1,
                got: per_source.len(),
                expected: num_sources,
            });
        }
    }

    // Each (t, m) contributes one event to every k ≤ min(v, t, k_max);
    // accumulate range additions via a difference array.
    let k_max_us = k_max as usize;
    let mut diff = vec![0i64; k_max_us + 1];
    for (idx, per_source) in viol_counts.iter().enumerate() {
        let t = idx + 1;
        for &v in per_source {
            let cap = (v as usize).min(t).min(k_max_us);
            if cap >= 1 {
                diff[0] += 1;
                diff[cap] -= 1;
            }
        }
    }
    let mut window_counts = Vec::with_capacity(k_max_us);
    let mut running = 0i64;
    for d in &diff[..k_max_us] {
        running += d;
        window_counts.push(running as u64);
    }

    let psi = window_counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let k = i + 1;
            c as f64 / (num_sources as f64 * (horizon - k + 1) as f64)
        })
        .collect();

    Ok(CavrEstimate { window_counts, horizon, num_sources, psi })
}

/// Weighted C-AVR: the dot product Σ_k w_k·psi[k].
pub fn weighted_cavr(psi: &[f64], weights: &WeightVector) -> Result<f64, MetricsError> {
    let w = weights.weights();
    if psi.len() != w.len() {
        return Err(MetricsError::LengthMismatch {
            psi_len: psi.len(),
            weights_len: w.len(),
        });
    }
    Ok(psi.iter().zip(w).map(|(p, w)| p * w).sum())
}

/// Tail persistence index: the smallest window length k (1-based) whose
/// C-AVR component is at or below `eps_hat`, or k_max + 1 if none is.
///
/// Precondition: `eps_hat` ∈ (0, 1).
pub fn sigma_min(psi: &[f64], eps_hat: f64) -> u32 {
    assert!(
        eps_hat > 0.0 && eps_hat < 1.0,
        "eps_hat must lie in (0, 1), got {eps_hat}"
    );
    for (i, &p) in psi.iter().enumerate() {
        if p <= eps_hat {
            return (i + 1) as u32;
        }
    }
    psi.len() as u32 + 1
}

/// Fraction of slots with a nonzero action.
pub fn avg_cost(actions: &[usize]) -> Result<CostEstimate, MetricsError> {
    if actions.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let transmit_slots = actions.iter().filter(|&&a| a != 0).count() as u64;
    let horizon = actions.len() as u64;
    Ok(CostEstimate {
        transmit_slots,
        horizon,
        eta_hat: transmit_slots as f64 / horizon as f64,
    })
}

/// Direct AVR count: the fraction of (slot, source) pairs whose recorded
/// receiver-side AoI exceeds ζ. Used to cross-check that the counter-based
/// Ψ̂¹ reduces to the plain violation rate.
pub fn direct_avr(aoi_rx: &[Vec<u32>], zeta: u32) -> Result<f64, MetricsError> {
    if aoi_rx.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let num_sources = aoi_rx[0].len();
    let mut violations = 0u64;
    for (slot, per_source) in aoi_rx.iter().enumerate() {
        if per_source.len() != num_sources {
            return Err(MetricsError::RaggedTrajectory {
                slot: slot + 1,
                got: per_source.len(),
                expected: num_sources,
            });
        }
        violations += per_source.iter().filter(|&&d| d > zeta).count() as u64;
    }
    Ok(violations as f64 / (num_sources as f64 * aoi_rx.len() as f64))
}

/// A recorded trajectory: per-slot action plus per-source AoI and counter
/// values at decision time, as written to / read from trajectory CSVs with
/// columns `t,source,aoi_tx,aoi_rx,viol_count,action,cost`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub num_sources: usize,
    /// `aoi_tx[t-1][m]`.
    pub aoi_tx: Vec<Vec<u32>>,
    /// `aoi_rx[t-1][m]`.
    pub aoi_rx: Vec<Vec<u32>>,
    /// `viol_counts[t-1][m]`.
    pub viol_counts: Vec<Vec<u32>>,
    /// `actions[t-1]`, shared by all sources of a slot.
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn new(num_sources: usize) -> Self {
        Self {
            num_sources,
            aoi_tx: Vec::new(),
            aoi_rx: Vec::new(),
            viol_counts: Vec::new(),
            actions: Vec::new(),
        }
    }

    /// Appends one slot's decision-time view and the action taken in it.
    pub fn push_slot(&mut self, states: &[crate::env::SourceState], action: usize) {
        debug_assert_eq!(states.len(), self.num_sources);
        self.aoi_tx.push(states.iter().map(|s| s.aoi_tx).collect());
        self.aoi_rx.push(states.iter().map(|s| s.aoi_rx).collect());
        self.viol_counts.push(states.iter().map(|s| s.viol_count).collect());
        self.actions.push(action);
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Header line for trajectory CSVs.
    pub const CSV_HEADER: &'static str = "t,source,aoi_tx,aoi_rx,viol_count,action,cost";

    /// Serializes to the trajectory CSV schema, one row per (slot, source),
    /// sources 1-based in source order within each slot.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * self.horizon() * self.num_sources + 64);
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for t in 0..self.horizon() {
            let action = self.actions[t];
            let cost = u32::from(action != 0);
            for m in 0..self.num_sources {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    t + 1,
                    m + 1,
                    self.aoi_tx[t][m],
                    self.aoi_rx[t][m],
                    self.viol_counts[t][m],
                    action,
                    cost
                ));
            }
        }
        out
    }

    /// Parses the trajectory CSV schema produced by [`Trajectory::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(MetricsError::EmptyTrajectory)?;
        if header.trim() != Self::CSV_HEADER {
            return Err(MetricsError::Csv {
                line: 1,
                message: format!("expected header `{}`", Self::CSV_HEADER),
            });
        }

        let mut rows: Vec<(u64, usize, u32, u32, u32, usize, u32)> = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(MetricsError::Csv {
                    line: idx + 1,
                    message: format!("expected 7 fields, got {}", fields.len()),
                });
            }
            let parse = |f: &str, name: &str| {
                f.parse::<u64>().map_err(|e| MetricsError::Csv {
                    line: idx + 1,
                    message: format!("bad {name} `{f}`: {e}"),
                })
            };
            rows.push((
                parse(fields[0], "t")?,
                parse(fields[1], "source")? as usize,
                parse(fields[2], "aoi_tx")? as u32,
                parse(fields[3], "aoi_rx")? as u32,
                parse(fields[4], "viol_count")? as u32,
                parse(fields[5], "action")? as usize,
                parse(fields[6], "cost")? as u32,
            ));
        }
        if rows.is_empty() {
            return Err(MetricsError::EmptyTrajectory);
        }

        let num_sources = rows.iter().map(|r| r.1).max().unwrap();
        if num_sources == 0 {
            return Err(MetricsError::Csv {
                line: 2,
                message: "source indices are 1-based; found 0".to_string(),
            });
        }
        let horizon = rows.iter().map(|r| r.0).max().unwrap() as usize;
        if rows.len() != horizon * num_sources {
            return Err(MetricsError::Csv {
                line: 2,
                message: format!(
                    "expected {} rows for T={horizon}, M={num_sources}; got {}",
                    horizon * num_sources,
                    rows.len()
                ),
            });
        }

        let mut traj = Trajectory::new(num_sources);
        traj.aoi_tx = vec![vec![0; num_sources]; horizon];
        traj.aoi_rx = vec![vec![0; num_sources]; horizon];
        traj.viol_counts = vec![vec![0; num_sources]; horizon];
        traj.actions = vec![0; horizon];
        for (t, source, aoi_tx, aoi_rx, viol, action, _cost) in rows {
            let ti = t as usize - 1;
            let mi = source - 1;
            traj.aoi_tx[ti][mi] = aoi_tx;
            traj.aoi_rx[ti][mi] = aoi_rx;
            traj.viol_counts[ti][mi] = viol;
            traj.actions[ti] = action;
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_weights_split_equally() {
        let w = WeightVector::new(WeightScheme::Uniform, 4).unwrap();
        assert_eq!(w.weights(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn exponential_weights_follow_beta_powers() {
        let w = WeightVector::new(WeightScheme::Exponential { beta: 2.0 }, 3).unwrap();
        let expected = [1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0];
        for (got, want) in w.weights().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "got {got}, want {want}");
        }
    }

    #[test]
    fn one_hot_concentrates_all_weight() {
        let w = WeightVector::new(WeightScheme::OneHot { k_o: 9 }, 9).unwrap();
        assert_eq!(w.weights()[8], 1.0);
        assert_eq!(w.weights()[..8], [0.0; 8]);
    }

    #[test]
    fn weight_construction_rejects_bad_parameters() {
        assert_eq!(
            WeightVector::new(WeightScheme::Exponential { beta: 1.0 }, 3),
            Err(MetricsError::InvalidBeta(1.0))
        );
        assert_eq!(
            WeightVector::new(WeightScheme::OneHot { k_o: 4 }, 3),
            Err(MetricsError::InvalidKo { k_o: 4, k_max: 3 })
        );
        assert_eq!(
            WeightVector::new(WeightScheme::Uniform, 0),
            Err(MetricsError::InvalidKMax)
        );
    }

    #[test]
    fn unnormalized_input_is_rejected_not_rescaled() {
        let err = WeightVector::from_weights(vec![0.5, 0.6], WeightScheme::Uniform).unwrap_err();
        assert!(matches!(err, MetricsError::UnnormalizedWeights(_)));
        let err =
            WeightVector::from_weights(vec![1.5, -0.5], WeightScheme::Uniform).unwrap_err();
        assert_eq!(err, MetricsError::NegativeWeight { index: 1, value: -0.5 });
    }

    #[test]
    fn cavr_hand_counted_trace() {
        // M=1, T=5, v = (0,1,2,0,1): three slots with v ≥ 1; one slot (t=3)
        // with v ≥ 2 inside t = 2..5; none with v ≥ 3.
        let viol: Vec<Vec<u32>> = [0u32, 1, 2, 0, 1].iter().map(|&v| vec![v]).collect();
        let est = accumulate_cavr(&viol, 3, 1).unwrap();
        assert_eq!(est.window_counts, vec![3, 1, 0]);
        assert_eq!(est.psi, vec![3.0 / 5.0, 1.0 / 4.0, 0.0]);
    }

    #[test]
    fn cavr_extremes() {
        let zeros = vec![vec![0u32, 0]; 10];
        let est = accumulate_cavr(&zeros, 4, 2).unwrap();
        assert!(est.psi.iter().all(|&p| p == 0.0));

        let pinned = vec![vec![4u32, 4]; 10];
        let est = accumulate_cavr(&pinned, 4, 2).unwrap();
        assert!(est.psi.iter().all(|&p| p == 1.0), "psi = {:?}", est.psi);
    }

    #[test]
    fn cavr_counts_are_monotone_in_k() {
        let viol: Vec<Vec<u32>> =
            [0u32, 1, 2, 3, 4, 0, 1, 2, 0, 1, 2, 3].iter().map(|&v| vec![v]).collect();
        let est = accumulate_cavr(&viol, 5, 1).unwrap();
        for k in 1..est.window_counts.len() {
            assert!(est.window_counts[k] <= est.window_counts[k - 1]);
        }
    }

    #[test]
    fn cavr_rejects_short_or_ragged_input() {
        let viol = vec![vec![0u32]; 3];
        assert_eq!(
            accumulate_cavr(&viol, 4, 1),
            Err(MetricsError::HorizonTooShort { horizon: 3, k_max: 4 })
        );
        let ragged = vec![vec![0u32, 0], vec![0u32]];
        assert!(matches!(
            accumulate_cavr(&ragged, 1, 2),
            Err(MetricsError::RaggedTrajectory { slot: 2, .. })
        ));
    }

    #[test]
    fn weighted_cavr_cases() {
        let one_hot = WeightVector::new(WeightScheme::OneHot { k_o: 1 }, 3).unwrap();
        assert_eq!(weighted_cavr(&[0.6, 0.25, 0.0], &one_hot).unwrap(), 0.6);

        let uniform = WeightVector::new(WeightScheme::Uniform, 3).unwrap();
        let got = weighted_cavr(&[0.3, 0.2, 0.1], &uniform).unwrap();
        assert!((got - 0.2).abs() < 1e-15);

        assert_eq!(weighted_cavr(&[0.0, 0.0, 0.0], &uniform).unwrap(), 0.0);

        assert!(matches!(
            weighted_cavr(&[0.1], &uniform),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn sigma_min_scans_for_first_component_at_or_below_target() {
        assert_eq!(sigma_min(&[0.2, 0.08, 0.04, 0.01], 0.05), 3);
        assert_eq!(sigma_min(&[0.03, 0.5, 0.5], 0.05), 1);
        // No component qualifies: sentinel k_max + 1.
        assert_eq!(sigma_min(&[0.9; 9], 0.05), 10);
    }

    #[test]
    fn avg_cost_counts_nonzero_actions() {
        assert_eq!(avg_cost(&[1, 0, 2, 0]).unwrap().eta_hat, 0.5);
        assert_eq!(avg_cost(&[0, 0, 0]).unwrap().eta_hat, 0.0);
        assert_eq!(avg_cost(&[1, 2, 1]).unwrap().eta_hat, 1.0);
        assert_eq!(avg_cost(&[]), Err(MetricsError::EmptyTrajectory));
    }

    #[test]
    fn trajectory_csv_round_trips() {
        use crate::env::SourceState;
        let mut traj = Trajectory::new(2);
        traj.push_slot(
            &[
                SourceState { aoi_tx: 0, aoi_rx: 1, viol_count: 0 },
                SourceState { aoi_tx: 2, aoi_rx: 17, viol_count: 2 },
            ],
            2,
        );
        traj.push_slot(
            &[
                SourceState { aoi_tx: 1, aoi_rx: 2, viol_count: 0 },
                SourceState { aoi_tx: 0, aoi_rx: 3, viol_count: 0 },
            ],
            0,
        );
        let text = traj.to_csv();
        assert!(text.starts_with("t,source,aoi_tx,aoi_rx,viol_count,action,cost\n"));
        assert_eq!(Trajectory::from_csv(&text).unwrap(), traj);
    }

    #[test]
    fn trajectory_csv_rejects_malformed_input() {
        assert!(matches!(
            Trajectory::from_csv("wrong,header\n1,1,0,1,0,0,0\n"),
            Err(MetricsError::Csv { line: 1, .. })
        ));
        let text = format!("{}\n1,1,0,1,0,0\n", Trajectory::CSV_HEADER);
        assert!(matches!(Trajectory::from_csv(&text), Err(MetricsError::Csv { line: 2, .. })));
    }
}
