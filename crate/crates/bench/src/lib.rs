//! Benchmark-only crate; see `benches/hot_paths.rs` for the measurements.
//! The hot paths are the per-slot environment step, the value network's
//! forward and backward passes at full scale, one replay gradient step,
//! and the oracle's stationary-distribution solve.
