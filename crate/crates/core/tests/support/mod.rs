//! Helpers shared by the integration suites: seeded rollouts that record
//! full trajectories, and batch-means standard errors for comparing
//! correlated Monte-Carlo estimates against exact values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cavr_core::env::{self, SystemConfig};
use cavr_core::metrics::accumulate_cavr;

/// Everything a property might want to recheck about a rollout.
pub struct Rollout {
    pub viol_counts: Vec<Vec<u32>>,
    pub aoi_rx: Vec<Vec<u32>>,
    pub actions: Vec<usize>,
}

/// Rolls `horizon` slots from a fresh start, choosing each action with
/// `decide(slot, states)`; the environment consumes `seed`'s stream.
pub fn rollout(
    system: &SystemConfig,
    seed: u64,
    horizon: usize,
    mut decide: impl FnMut(usize, &[env::SourceState]) -> usize,
) -> Rollout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = env::reset(system).expect("valid system");
    let mut viol_counts = Vec::with_capacity(horizon);
    let mut aoi_rx = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let action = decide(t, &states);
        let (next, outcome) = env::step(system, &states, action, &mut rng).expect("valid step");
        viol_counts.push(outcome.next_viol_counts.clone());
        aoi_rx.push(next.iter().map(|s| s.aoi_rx).collect());
        actions.push(action);
        states = next;
    }
    Rollout { viol_counts, aoi_rx, actions }
}

/// A uniformly random action in 0..=M drawn from a policy-only stream.
pub fn random_policy(seed: u64, num_sources: usize) -> impl FnMut(usize, &[env::SourceState]) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move |_, _| rng.random_range(0..=num_sources)
}

/// Batch-means standard error of each Ψ̂ component: the trajectory is cut
/// into `batches` disjoint stretches, Ψ̂ is computed on each, and the SE of
/// the mean is the batch standard deviation over √batches. Handles the
/// autocorrelation a per-slot binomial SE would ignore.
pub fn batch_means_se(
    viol_counts: &[Vec<u32>],
    k_max: u32,
    num_sources: usize,
    batches: usize,
) -> Vec<f64> {
    let len = viol_counts.len() / batches;
    assert!(len > k_max as usize, "batches too short for k_max");
    let mut per_batch: Vec<Vec<f64>> = Vec::with_capacity(batches);
    for b in 0..batches {
        let slice = &viol_counts[b * len..(b + 1) * len];
        let estimate = accumulate_cavr(slice, k_max, num_sources).expect("valid batch");
        per_batch.push(estimate.psi);
    }
    (0..k_max as usize)
        .map(|k| {
            let mean: f64 = per_batch.iter().map(|p| p[k]).sum::<f64>() / batches as f64;
            let var: f64 = per_batch.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>()
                / (batches - 1) as f64;
            (var / batches as f64).sqrt()
        })
        .collect()
}
