//! Experiment orchestration: seeded RNG streams, flat key=value run
//! configuration with flag overrides, training and evaluation drivers for
//! learning, index, and static policies, parameter sweeps over a worker
//! pool, exact-oracle emission, and the CSV formats downstream plotting
//! consumes.
//!
//! Reproducibility contract: every run is keyed by (configuration, seed).
//! One `u64` seed fans out into independent ChaCha streams — environment,
//! exploration, replay sampling, weight init, heterogeneous parameter
//! draws, and a separate pair for evaluation — so changing, say, the batch
//! sampler can never perturb the arrival process. Run directories are named
//! by an FNV-1a hash of the canonical configuration text plus the seed, and
//! every output file is written in a single deterministic pass.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agents::{self, Agent, AgentConfig, AgentError, AgentVariant, Transition};
use crate::cmdp::{self, LagrangeState};
use crate::dpp::{DppConfig, DppError, DppPolicy};
use crate::env::{self, EnvError, Environment, SourceParams, SourceState, SystemConfig};
use crate::metrics::{
    accumulate_cavr, weighted_cavr, CavrEstimate, MetricsError, WeightScheme, WeightVector,
};
use crate::oracle::{self, ChainSpec, OraclePolicy, OracleError, OracleResult};
use crate::valuenet::{NetParams, ValueNetError};

/// Stream ids hung off one seed; each gets an independent ChaCha keystream.
pub mod streams {
    /// Training environment (arrivals and channel).
    pub const ENV: u64 = 1;
    /// ε-greedy exploration draws during training.
    pub const EXPLORE: u64 = 2;
    /// Replay mini-batch sampling.
    pub const BATCH: u64 = 3;
    /// Network weight initialization.
    pub const INIT: u64 = 4;
    /// Heterogeneous per-source parameter draws.
    pub const HETERO: u64 = 5;
    /// Evaluation environment (kept apart from training draws).
    pub const EVAL_ENV: u64 = 6;
    /// Evaluation-time policy randomness (random baseline, greedy coin).
    pub const EVAL_POLICY: u64 = 7;
}

/// A deterministic generator for one (seed, stream) pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// FNV-1a 64-bit hash; names run directories from canonical config text.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Dpp(#[from] DppError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Net(#[from] ValueNetError),
    #[error("configuration error: {message}")]
    Config { message: String },
    #[error("unknown configuration key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid value `{value}` for configuration key `{key}`")]
    InvalidValue { key: String, value: String },
    #[error("policy `{policy}` needs a trained checkpoint before evaluation")]
    MissingCheckpoint { policy: String },
    #[error("the exact oracle cannot represent policy `{policy}`: {reason}")]
    UnsupportedOraclePolicy { policy: String, reason: String },
    #[error("sweep value list is empty")]
    EmptySweep,
    #[error("self-test failed {failures} check(s)")]
    SelftestFailed { failures: usize },
}

impl HarnessError {
    fn config(message: impl Into<String>) -> Self {
        HarnessError::Config { message: message.into() }
    }
}

/// Scheduling policy selector, learning and analytic alike.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Dqn,
    D3qn,
    QrDqn,
    QrD3qn,
    Dpp,
    AlwaysTransmit,
    RoundRobin,
    Random,
}

impl Policy {
    pub const ALL: [Policy; 8] = [
        Policy::Dqn,
        Policy::D3qn,
        Policy::QrDqn,
        Policy::QrD3qn,
        Policy::Dpp,
        Policy::AlwaysTransmit,
        Policy::RoundRobin,
        Policy::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Dqn => "dqn",
            Policy::D3qn => "d3qn",
            Policy::QrDqn => "qr_dqn",
            Policy::QrD3qn => "qr_d3qn",
            Policy::Dpp => "dpp",
            Policy::AlwaysTransmit => "always_transmit",
            Policy::RoundRobin => "round_robin",
            Policy::Random => "random",
        }
    }

    /// The agent variant behind a learning policy, `None` for baselines.
    pub fn learning_variant(self) -> Option<AgentVariant> {
        match self {
            Policy::Dqn => Some(AgentVariant::Dqn),
            Policy::D3qn => Some(AgentVariant::D3qn),
            Policy::QrDqn => Some(AgentVariant::QrDqn),
            Policy::QrD3qn => Some(AgentVariant::QrD3qn),
            _ => None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == text)
            .ok_or_else(|| HarnessError::InvalidValue {
                key: "policy".to_string(),
                value: text.to_string(),
            })
    }
}

impl std::str::FromStr for Policy {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::parse(s)
    }
}

/// Which weighting family the run uses; the numeric parameter lives in the
/// `beta` / `k_o` config fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Uniform,
    Exponential,
    OneHot,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Uniform => "uniform",
            SchemeKind::Exponential => "exponential",
            SchemeKind::OneHot => "one_hot",
        }
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        match text {
            "uniform" => Ok(SchemeKind::Uniform),
            "exponential" => Ok(SchemeKind::Exponential),
            "one_hot" => Ok(SchemeKind::OneHot),
            _ => Err(HarnessError::InvalidValue {
                key: "scheme".to_string(),
                value: text.to_string(),
            }),
        }
    }
}

/// Full description of one experiment. Defaults mirror the baseline setup:
/// ten sources with p_gen = p_succ = 0.7, ζ = 15, Δ_max = 100, k_max = 9,
/// η_max = 0.75, exponential weighting with β = 2, ε̂ = 0.05, ξ = 0.1, and
/// ten seeds. Every field parses from `key=value` text ([`ExperimentConfig::apply_pair`]);
/// later assignments win, so CLI flags override file entries by being
/// applied afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub num_sources: usize,
    pub p_gen: f64,
    pub p_succ: f64,
    pub zeta: u32,
    pub k_max: u32,
    pub delta_max: u32,
    pub eta_max: f64,
    pub scheme: SchemeKind,
    pub beta: f64,
    pub k_o: u32,
    /// Target level ε̂ for the tail persistence index σ_min.
    pub eps_hat: f64,
    /// Multiplier step size ξ.
    pub xi: f64,
    pub policy: Policy,
    /// Policies a sweep compares.
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    pub eval_horizon: u64,
    pub heterogeneous: bool,
    pub hetero_low: f64,
    pub hetero_high: f64,
    // Agent overrides (defaults match `AgentConfig::new`).
    pub gamma: f64,
    pub alpha: f64,
    pub batch_size: usize,
    /// 0 keeps each variant's default quantile count; a positive value
    /// overrides it for the distributional variants only.
    pub num_quantiles: usize,
    pub target_period: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_episodes: u32,
    pub episodes: u32,
    pub slots_per_episode: u32,
    pub kappa: f64,
    pub buffer_capacity: usize,
    pub min_fill: usize,
    pub hidden: usize,
    pub v_dpp: f64,
    /// Output root; not part of the config hash.
    pub out_dir: PathBuf,
    /// Sweep worker threads; not part of the config hash.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_sources: 10,
            p_gen: 0.7,
            p_succ: 0.7,
            zeta: 15,
            k_max: 9,
            delta_max: 100,
            eta_max: 0.75,
            scheme: SchemeKind::Exponential,
            beta: 2.0,
            k_o: 1,
            eps_hat: 0.05,
            xi: 0.1,
            policy: Policy::QrD3qn,
            policies: vec![Policy::QrD3qn, Policy::D3qn],
            seeds: (1..=10).collect(),
            eval_horizon: 100_000,
            heterogeneous: false,
            hetero_low: 0.6,
            hetero_high: 0.8,
            gamma: 0.98,
            alpha: 2e-3,
            batch_size: 256,
            num_quantiles: 0,
            target_period: 3,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_episodes: 1000,
            episodes: 3000,
            slots_per_episode: 100,
            kappa: 1.0,
            buffer_capacity: 1_000_000,
            min_fill: 1000,
            hidden: 128,
            v_dpp: 10.0,
            out_dir: PathBuf::from("runs"),
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl ExperimentConfig {
    /// Applies one `key=value` assignment. `m` is accepted as shorthand for
    /// `num_sources`.
    pub fn apply_pair(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
            value.parse().map_err(|_| HarnessError::InvalidValue {
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        match key {
            "num_sources" | "m" => self.num_sources = num(key, value)?,
            "p_gen" => self.p_gen = num(key, value)?,
            "p_succ" => self.p_succ = num(key, value)?,
            "zeta" => self.zeta = num(key, value)?,
            "k_max" => self.k_max = num(key, value)?,
            "delta_max" => self.delta_max = num(key, value)?,
            "eta_max" => self.eta_max = num(key, value)?,
            "scheme" => self.scheme = SchemeKind::parse(value)?,
            "beta" => self.beta = num(key, value)?,
            "k_o" => self.k_o = num(key, value)?,
            "eps_hat" => self.eps_hat = num(key, value)?,
            "xi" => self.xi = num(key, value)?,
            "policy" => self.policy = Policy::parse(value)?,
            "policies" => {
                self.policies = value
                    .split(',')
                    .map(|p| Policy::parse(p.trim()))
                    .collect::<Result<Vec<_>, _>>()?;
            }
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| num::<u64>(key, s.trim()))
                    .collect::<Result<Vec<_>, _>>()?;
            }
            "eval_horizon" => self.eval_horizon = num(key, value)?,
            "heterogeneous" => {
                self.heterogeneous = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => {
                        return Err(HarnessError::InvalidValue {
                            key: key.to_string(),
                            value: value.to_string(),
                        })
                    }
                }
            }
            "hetero_low" => self.hetero_low = num(key, value)?,
            "hetero_high" => self.hetero_high = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "num_quantiles" => self.num_quantiles = num(key, value)?,
            "target_period" => self.target_period = num(key, value)?,
            "eps_start" => self.eps_start = num(key, value)?,
            "eps_end" => self.eps_end = num(key, value)?,
            "eps_decay_episodes" => self.eps_decay_episodes = num(key, value)?,
            "episodes" => self.episodes = num(key, value)?,
            "slots_per_episode" => self.slots_per_episode = num(key, value)?,
            "kappa" => self.kappa = num(key, value)?,
            "buffer_capacity" => self.buffer_capacity = num(key, value)?,
            "min_fill" => self.min_fill = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "v_dpp" => self.v_dpp = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "threads" => self.threads = num(key, value)?,
            _ => return Err(HarnessError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    /// Parses flat `key=value` text: one assignment per line, blank lines
    /// and `#` comments ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::config(format!("line {}: expected key=value, got `{line}`", idx + 1))
            })?;
            self.apply_pair(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let mut config = Self::default();
        config.apply_text(&fs::read_to_string(path)?)?;
        Ok(config)
    }

    /// Canonical text form of every semantic field (output root and thread
    /// count excluded — they do not change the experiment).
    pub fn canonical_string(&self) -> String {
        let policies: Vec<&str> = self.policies.iter().map(|p| p.name()).collect();
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "num_sources={}", self.num_sources);
        let _ = writeln!(s, "p_gen={}", self.p_gen);
        let _ = writeln!(s, "p_succ={}", self.p_succ);
        let _ = writeln!(s, "zeta={}", self.zeta);
        let _ = writeln!(s, "k_max={}", self.k_max);
        let _ = writeln!(s, "delta_max={}", self.delta_max);
        let _ = writeln!(s, "eta_max={}", self.eta_max);
        let _ = writeln!(s, "scheme={}", self.scheme.name());
        let _ = writeln!(s, "beta={}", self.beta);
        let _ = writeln!(s, "k_o={}", self.k_o);
        let _ = writeln!(s, "eps_hat={}", self.eps_hat);
        let _ = writeln!(s, "xi={}", self.xi);
        let _ = writeln!(s, "policy={}", self.policy.name());
        let _ = writeln!(s, "policies={}", policies.join(","));
        let _ = writeln!(s, "seeds={}", seeds.join(","));
        let _ = writeln!(s, "eval_horizon={}", self.eval_horizon);
        let _ = writeln!(s, "heterogeneous={}", self.heterogeneous);
        let _ = writeln!(s, "hetero_low={}", self.hetero_low);
        let _ = writeln!(s, "hetero_high={}", self.hetero_high);
        let _ = writeln!(s, "gamma={}", self.gamma);
        let _ = writeln!(s, "alpha={}", self.alpha);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "num_quantiles={}", self.num_quantiles);
        let _ = writeln!(s, "target_period={}", self.target_period);
        let _ = writeln!(s, "eps_start={}", self.eps_start);
        let _ = writeln!(s, "eps_end={}", self.eps_end);
        let _ = writeln!(s, "eps_decay_episodes={}", self.eps_decay_episodes);
        let _ = writeln!(s, "episodes={}", self.episodes);
        let _ = writeln!(s, "slots_per_episode={}", self.slots_per_episode);
        let _ = writeln!(s, "kappa={}", self.kappa);
        let _ = writeln!(s, "buffer_capacity={}", self.buffer_capacity);
        let _ = writeln!(s, "min_fill={}", self.min_fill);
        let _ = writeln!(s, "hidden={}", self.hidden);
        let _ = writeln!(s, "v_dpp={}", self.v_dpp);
        s
    }

    /// FNV-1a hash of the canonical string.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical_string().as_bytes())
    }

    /// Output directory for one (config, seed) run.
    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{:016x}-s{seed}", self.hash()))
    }

    pub fn weight_scheme(&self) -> WeightScheme {
        match self.scheme {
            SchemeKind::Uniform => WeightScheme::Uniform,
            SchemeKind::Exponential => WeightScheme::Exponential { beta: self.beta },
            SchemeKind::OneHot => WeightScheme::OneHot { k_o: self.k_o },
        }
    }

    pub fn weight_vector(&self) -> Result<WeightVector, HarnessError> {
        Ok(WeightVector::new(self.weight_scheme(), self.k_max)?)
    }

    /// Agent hyperparameters for a variant, with this config's overrides
    /// applied. A positive `num_quantiles` only affects the distributional
    /// variants; the scalar ones keep N = 1.
    pub fn agent_config(&self, variant: AgentVariant) -> AgentConfig {
        let mut agent = AgentConfig::new(variant);
        agent.gamma = self.gamma;
        agent.alpha = self.alpha;
        agent.batch_size = self.batch_size;
        if self.num_quantiles > 0 && variant.default_quantiles() > 1 {
            agent.num_quantiles = self.num_quantiles;
        }
        agent.target_period = self.target_period;
        agent.eps_start = self.eps_start;
        agent.eps_end = self.eps_end;
        agent.eps_decay_episodes = self.eps_decay_episodes;
        agent.episodes = self.episodes;
        agent.slots_per_episode = self.slots_per_episode;
        agent.kappa = self.kappa;
        agent.buffer_capacity = self.buffer_capacity;
        agent.min_fill = self.min_fill;
        agent.hidden = self.hidden;
        agent
    }

    /// Per-source parameters for one seed: the homogeneous values, or — in
    /// heterogeneous mode — one (p_gen, p_succ) pair per source drawn
    /// uniformly from [hetero_low, hetero_high], taken once from the
    /// dedicated stream before any training randomness.
    pub fn source_params_for_seed(&self, seed: u64) -> Vec<SourceParams> {
        if !self.heterogeneous {
            return vec![
                SourceParams { p_gen: self.p_gen, p_succ: self.p_succ };
                self.num_sources
            ];
        }
        let mut rng = stream_rng(seed, streams::HETERO);
        let span = self.hetero_high - self.hetero_low;
        (0..self.num_sources)
            .map(|_| {
                let p_gen = self.hetero_low + span * rng.random::<f64>();
                let p_succ = self.hetero_low + span * rng.random::<f64>();
                SourceParams { p_gen, p_succ }
            })
            .collect()
    }

    /// The validated system a given seed runs on.
    pub fn system_for_seed(&self, seed: u64) -> Result<SystemConfig, HarnessError> {
        let system = SystemConfig {
            num_sources: self.num_sources,
            sources: self.source_params_for_seed(seed),
            zeta: self.zeta,
            k_max: self.k_max,
            delta_max: self.delta_max,
            eta_max: self.eta_max,
        };
        system.validate()?;
        Ok(system)
    }

    /// Cross-field checks beyond what the typed fields enforce.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.system_for_seed(self.seeds.first().copied().unwrap_or(0))?;
        self.weight_vector()?;
        if self.seeds.is_empty() {
            return Err(HarnessError::config("at least one seed is required"));
        }
        if self.policies.is_empty() {
            return Err(HarnessError::config("at least one sweep policy is required"));
        }
        if self.eval_horizon < u64::from(self.k_max) {
            return Err(HarnessError::config(format!(
                "eval_horizon ({}) must cover at least k_max ({}) slots",
                self.eval_horizon, self.k_max
            )));
        }
        if !(self.eps_hat > 0.0 && self.eps_hat < 1.0) {
            return Err(HarnessError::config(format!(
                "eps_hat must lie in (0, 1), got {}",
                self.eps_hat
            )));
        }
        if !(self.xi > 0.0) {
            return Err(HarnessError::config(format!("xi must be positive, got {}", self.xi)));
        }
        if self.heterogeneous
            && !(0.0 <= self.hetero_low
                && self.hetero_low <= self.hetero_high
                && self.hetero_high <= 1.0)
        {
            return Err(HarnessError::config(format!(
                "heterogeneous range [{}, {}] must be an interval inside [0, 1]",
                self.hetero_low, self.hetero_high
            )));
        }
        if let Some(variant) = self.policy.learning_variant() {
            self.agent_config(variant).validate()?;
        }
        Ok(())
    }
}

/// Artifacts of one (config, seed) training run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub policy: Policy,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub learning_curve: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub queue_log: Option<PathBuf>,
    /// Per-source parameters actually used (matters in heterogeneous mode).
    pub source_params: Vec<SourceParams>,
    /// Trained network, kept in memory so evaluation can skip the file.
    pub final_params: Option<NetParams>,
}

/// Evaluation results for one (policy, seed) pair.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub policy: Policy,
    pub seed: u64,
    pub horizon: u64,
    pub estimate: CavrEstimate,
    pub weighted: f64,
    pub sigma_min: u32,
    pub eta_hat: f64,
    /// Per-slot transmission cost, for the cost-over-time series.
    pub costs: Vec<u32>,
    /// Final virtual-queue backlog (index policy only).
    pub final_backlog: Option<f64>,
}

/// Stalest-receiver rule the always-transmit baseline uses for M > 1:
/// serve the source with the largest receiver-side AoI, lowest index on
/// ties. With M = 1 this is simply "transmit every slot".
pub fn always_transmit_action(states: &[SourceState]) -> usize {
    let mut best = 0;
    for (m, state) in states.iter().enumerate().skip(1) {
        if state.aoi_rx > states[best].aoi_rx {
            best = m;
        }
    }
    best + 1
}

/// A policy instantiated for rollouts.
#[derive(Debug, Clone)]
pub enum PolicyRuntime {
    /// Greedy network policy (ε = 0).
    Net(NetParams),
    Dpp(DppPolicy),
    AlwaysTransmit,
    RoundRobin { next: usize },
    Random,
}

impl PolicyRuntime {
    /// Builds the runtime for `policy`. Learning policies require trained
    /// parameters; the index policy starts with an empty virtual queue.
    pub fn build(
        policy: Policy,
        config: &ExperimentConfig,
        system: &SystemConfig,
        params: Option<NetParams>,
    ) -> Result<Self, HarnessError> {
        match policy {
            Policy::Dqn | Policy::D3qn | Policy::QrDqn | Policy::QrD3qn => params
                .map(PolicyRuntime::Net)
                .ok_or_else(|| HarnessError::MissingCheckpoint {
                    policy: policy.name().to_string(),
                }),
            Policy::Dpp => {
                let weights = config.weight_vector()?;
                let dpp = DppPolicy::new(&weights, system, DppConfig { v_dpp: config.v_dpp })?;
                Ok(PolicyRuntime::Dpp(dpp))
            }
            Policy::AlwaysTransmit => Ok(PolicyRuntime::AlwaysTransmit),
            Policy::RoundRobin => Ok(PolicyRuntime::RoundRobin { next: 0 }),
            Policy::Random => Ok(PolicyRuntime::Random),
        }
    }

    /// The action for the current slot.
    pub fn decide<R: Rng + ?Sized>(
        &mut self,
        states: &[SourceState],
        features: &[f64],
        rng: &mut R,
    ) -> Result<usize, HarnessError> {
        match self {
            PolicyRuntime::Net(params) => Ok(agents::select_action(params, features, 0.0, rng)?),
            PolicyRuntime::Dpp(policy) => Ok(policy.decide(states)),
            PolicyRuntime::AlwaysTransmit => Ok(always_transmit_action(states)),
            PolicyRuntime::RoundRobin { next } => {
                let action = *next + 1;
                *next = (*next + 1) % states.len();
                Ok(action)
            }
            PolicyRuntime::Random => Ok(rng.random_range(0..=states.len())),
        }
    }

    /// Feeds the realized slot cost to policies that track it.
    pub fn observe_cost(&mut self, cost: u32) {
        if let PolicyRuntime::Dpp(policy) = self {
            policy.observe_cost(cost);
        }
    }

    pub fn final_backlog(&self) -> Option<f64> {
        match self {
            PolicyRuntime::Dpp(policy) => Some(policy.backlog()),
            _ => None,
        }
    }
}

fn write_source_params(run_dir: &Path, system: &SystemConfig) -> Result<(), HarnessError> {
    let mut csv = String::from("source,p_gen,p_succ\n");
    for (m, s) in system.sources.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{}", m + 1, s.p_gen, s.p_succ);
    }
    fs::write(run_dir.join("source_params.csv"), csv)?;
    Ok(())
}

/// Trains (or, for analytic policies, rolls out) one (config, seed) cell
/// and persists its artifacts under the run directory:
/// `config.txt` and `source_params.csv` always; learning policies add
/// `learning_curve.csv` (one row per episode) and `checkpoint.txt`; the
/// index policy adds a per-slot `queue.csv`. Deterministic per seed.
pub fn train(config: &ExperimentConfig, seed: u64) -> Result<RunRecord, HarnessError> {
    config.validate()?;
    let run_dir = config.run_dir(seed);
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.txt"), config.canonical_string())?;
    let system = config.system_for_seed(seed)?;
    write_source_params(&run_dir, &system)?;

    let mut record = RunRecord {
        policy: config.policy,
        seed,
        run_dir: run_dir.clone(),
        learning_curve: None,
        checkpoint: None,
        queue_log: None,
        source_params: system.sources.clone(),
        final_params: None,
    };

    if let Some(variant) = config.policy.learning_variant() {
        train_learner(config, seed, &run_dir, &system, variant, &mut record)?;
    } else if config.policy == Policy::Dpp {
        log_dpp_rollout(config, seed, &run_dir, &system, &mut record)?;
    }
    Ok(record)
}

/// The training loop: each slot selects ε-greedily, steps the environment,
/// computes the Lagrangian reward under the current multiplier, stores the
/// transition, folds the cost into η̂, runs one replay gradient step (with
/// periodic target sync), and finally takes the projected multiplier step.
fn train_learner(
    config: &ExperimentConfig,
    seed: u64,
    run_dir: &Path,
    system: &SystemConfig,
    variant: AgentVariant,
    record: &mut RunRecord,
) -> Result<(), HarnessError> {
    let weights = config.weight_vector()?;
    let mut environment = Environment::new(system.clone(), stream_rng(seed, streams::ENV))?;
    let mut explore_rng = stream_rng(seed, streams::EXPLORE);
    let mut batch_rng = stream_rng(seed, streams::BATCH);
    let mut init_rng = stream_rng(seed, streams::INIT);

    let agent_config = config.agent_config(variant);
    let episodes = agent_config.episodes;
    let slots_per_episode = agent_config.slots_per_episode;
    let mut agent = Agent::new(
        agent_config,
        3 * system.num_sources,
        system.num_actions(),
        &mut init_rng,
    )?;
    let mut lagrange = LagrangeState::new(config.xi, system.eta_max, config.gamma);

    let mut curve = String::from("episode,slot,epsilon,lambda,eta_hat,loss,episodic_reward\n");
    let mut global_slot: u64 = 0;
    for episode in 1..=episodes {
        environment.reset();
        let eps = agent.epsilon(episode);
        let mut episodic_reward = 0.0;
        let mut loss_sum = 0.0;
        let mut loss_count: u32 = 0;
        for _ in 0..slots_per_episode {
            global_slot += 1;
            let features = environment.features();
            let action = agent.select_action(&features, eps, &mut explore_rng)?;
            let outcome = environment.step(action)?;
            let reward = cmdp::reward(
                &outcome.next_viol_counts,
                outcome.cost,
                &weights,
                lagrange.lambda,
                lagrange.eta_max,
            );
            episodic_reward += reward;
            agent.store(Transition {
                features,
                action,
                reward,
                next_features: environment.features(),
            });
            lagrange.update_eta(outcome.cost);
            if let Some(loss) = agent.train_step(global_slot, &mut batch_rng)? {
                loss_sum += loss;
                loss_count += 1;
            }
            lagrange.update_lambda();
        }
        let mean_loss = if loss_count > 0 {
            format!("{}", loss_sum / f64::from(loss_count))
        } else {
            String::new()
        };
        let _ = writeln!(
            curve,
            "{episode},{global_slot},{eps},{},{},{mean_loss},{episodic_reward}",
            lagrange.lambda, lagrange.eta_hat
        );
    }

    let curve_path = run_dir.join("learning_curve.csv");
    fs::write(&curve_path, curve)?;
    let checkpoint_path = run_dir.join("checkpoint.txt");
    fs::write(&checkpoint_path, agent.online().save_to_string())?;
    record.learning_curve = Some(curve_path);
    record.checkpoint = Some(checkpoint_path);
    record.final_params = Some(agent.online().clone());
    Ok(())
}

/// Rolls the index policy for the same slot budget a learner would train
/// on, logging the virtual-queue trajectory.
fn log_dpp_rollout(
    config: &ExperimentConfig,
    seed: u64,
    run_dir: &Path,
    system: &SystemConfig,
    record: &mut RunRecord,
) -> Result<(), HarnessError> {
    let weights = config.weight_vector()?;
    let mut environment = Environment::new(system.clone(), stream_rng(seed, streams::ENV))?;
    let mut policy = DppPolicy::new(&weights, system, DppConfig { v_dpp: config.v_dpp })?;
    let total_slots = u64::from(config.episodes) * u64::from(config.slots_per_episode);
    let mut log = String::from("slot,action,cost,backlog\n");
    for slot in 1..=total_slots {
        let action = policy.decide(environment.states());
        let outcome = environment.step(action)?;
        let backlog = policy.observe_cost(outcome.cost);
        let _ = writeln!(log, "{slot},{action},{},{backlog}", outcome.cost);
    }
    let queue_path = run_dir.join("queue.csv");
    fs::write(&queue_path, log)?;
    record.queue_log = Some(queue_path);
    Ok(())
}

/// Loads a checkpoint produced by [`train`].
pub fn load_checkpoint(path: &Path) -> Result<NetParams, HarnessError> {
    Ok(NetParams::load_from_str(&fs::read_to_string(path)?)?)
}

/// Greedy rollout of `horizon` slots on `system` under a built policy,
/// followed by metric accumulation: the Ψ̂ vector, its weighted combination,
/// the tail persistence index at level ε̂, and the realized cost rate. Uses
/// the evaluation RNG streams, so results are independent of training
/// randomness.
pub fn evaluate(
    config: &ExperimentConfig,
    system: &SystemConfig,
    policy: Policy,
    runtime: &mut PolicyRuntime,
    seed: u64,
    horizon: u64,
) -> Result<EvalOutcome, HarnessError> {
    let weights = config.weight_vector()?;
    let mut environment = Environment::new(system.clone(), stream_rng(seed, streams::EVAL_ENV))?;
    let mut policy_rng = stream_rng(seed, streams::EVAL_POLICY);
    let mut viol_counts: Vec<Vec<u32>> = Vec::with_capacity(horizon as usize);
    let mut costs: Vec<u32> = Vec::with_capacity(horizon as usize);
    let mut transmit_slots: u64 = 0;
    for _ in 0..horizon {
        let features = environment.features();
        let action = runtime.decide(environment.states(), &features, &mut policy_rng)?;
        let outcome = environment.step(action)?;
        transmit_slots += u64::from(outcome.cost);
        runtime.observe_cost(outcome.cost);
        costs.push(outcome.cost);
        viol_counts.push(outcome.next_viol_counts);
    }
    let estimate = accumulate_cavr(&viol_counts, config.k_max, system.num_sources)?;
    let weighted = weighted_cavr(&estimate.psi, &weights)?;
    let sigma = crate::metrics::sigma_min(&estimate.psi, config.eps_hat);
    Ok(EvalOutcome {
        policy,
        seed,
        horizon,
        weighted,
        sigma_min: sigma,
        eta_hat: transmit_slots as f64 / horizon as f64,
        costs,
        final_backlog: runtime.final_backlog(),
        estimate,
    })
}

/// The evaluation CSV: one row per window length k, with the scalar
/// summary columns repeated.
pub fn metrics_csv(outcomes: &[EvalOutcome]) -> String {
    let mut csv = String::from("policy,seed,k,psi_k,weighted_cavr,sigma_min,eta_hat,horizon\n");
    for o in outcomes {
        for (i, psi) in o.estimate.psi.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                o.policy.name(),
                o.seed,
                i + 1,
                psi,
                o.weighted,
                o.sigma_min,
                o.eta_hat,
                o.horizon
            );
        }
    }
    csv
}

/// The cost-over-time CSV: per-slot cost plus the running average.
pub fn cost_series_csv(outcome: &EvalOutcome) -> String {
    let mut csv = String::from("slot,cost,avg_cost\n");
    let mut total: u64 = 0;
    for (t, &cost) in outcome.costs.iter().enumerate() {
        total += u64::from(cost);
        let _ = writeln!(csv, "{},{cost},{}", t + 1, total as f64 / (t + 1) as f64);
    }
    csv
}

/// Writes the evaluation artifacts (`metrics.csv`, `cost_series.csv`) into
/// a directory.
pub fn write_eval_outputs(dir: &Path, outcome: &EvalOutcome) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(std::slice::from_ref(outcome)))?;
    fs::write(dir.join("cost_series.csv"), cost_series_csv(outcome))?;
    Ok(())
}

/// [`train`] followed by [`evaluate`] on the same (config, seed) cell;
/// writes the evaluation artifacts into the run directory.
pub fn train_and_evaluate(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(RunRecord, EvalOutcome), HarnessError> {
    let record = train(config, seed)?;
    let system = config.system_for_seed(seed)?;
    let mut runtime =
        PolicyRuntime::build(config.policy, config, &system, record.final_params.clone())?;
    let outcome = evaluate(
        config,
        &system,
        config.policy,
        &mut runtime,
        seed,
        config.eval_horizon,
    )?;
    write_eval_outputs(&record.run_dir, &outcome)?;
    Ok((record, outcome))
}

/// Sweepable configuration axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    KMax,
    KO,
    PGen,
    PSucc,
    Zeta,
    M,
    Beta,
    Scheme,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 8] = [
        SweepAxis::KMax,
        SweepAxis::KO,
        SweepAxis::PGen,
        SweepAxis::PSucc,
        SweepAxis::Zeta,
        SweepAxis::M,
        SweepAxis::Beta,
        SweepAxis::Scheme,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::KMax => "k_max",
            SweepAxis::KO => "k_o",
            SweepAxis::PGen => "p_gen",
            SweepAxis::PSucc => "p_succ",
            SweepAxis::Zeta => "zeta",
            SweepAxis::M => "num_sources",
            SweepAxis::Beta => "beta",
            SweepAxis::Scheme => "scheme",
        }
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        match text {
            "k_max" => Ok(SweepAxis::KMax),
            "k_o" => Ok(SweepAxis::KO),
            "p_gen" => Ok(SweepAxis::PGen),
            "p_succ" => Ok(SweepAxis::PSucc),
            "zeta" => Ok(SweepAxis::Zeta),
            "m" | "num_sources" => Ok(SweepAxis::M),
            "beta" => Ok(SweepAxis::Beta),
            "scheme" => Ok(SweepAxis::Scheme),
            _ => Err(HarnessError::InvalidValue {
                key: "axis".to_string(),
                value: text.to_string(),
            }),
        }
    }

    /// Applies one swept value to a config. The `k_o` and `beta` axes also
    /// switch the weighting family to the one they parameterize.
    pub fn apply(self, config: &mut ExperimentConfig, value: &str) -> Result<(), HarnessError> {
        match self {
            SweepAxis::KO => config.apply_pair("scheme", "one_hot")?,
            SweepAxis::Beta => config.apply_pair("scheme", "exponential")?,
            _ => {}
        }
        config.apply_pair(self.name(), value)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepAxis::parse(s)
    }
}

/// One sweep cell's summary metrics.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub policy: Policy,
    pub seed: u64,
    pub weighted: f64,
    pub eta_hat: f64,
    pub sigma_min: u32,
}

/// Sweep artifacts: the per-seed CSV, the aggregated summary CSV, and the
/// in-memory rows.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub per_seed_path: PathBuf,
    pub summary_path: PathBuf,
    pub rows: Vec<SweepRow>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Cross-product run over `values` × config policies × config seeds,
/// dispatched to a pool of `config.threads` workers (each cell owns all of
/// its state; results merge by cell index, so output order is
/// deterministic). Emits one per-seed row per cell plus a per-(value,
/// policy) summary with medians, means, and — where both distributional and
/// plain dueling runs exist — the relative weighted C-AVR reduction of
/// `qr_d3qn` against `d3qn`.
pub fn sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
) -> Result<SweepOutput, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::EmptySweep);
    }
    base.validate()?;

    struct Cell {
        value: String,
        policy: Policy,
        seed: u64,
        config: ExperimentConfig,
    }
    let mut cells = Vec::new();
    for value in values {
        let mut on_axis = base.clone();
        axis.apply(&mut on_axis, value)?;
        on_axis.validate()?;
        for &policy in &base.policies {
            for &seed in &base.seeds {
                let mut config = on_axis.clone();
                config.policy = policy;
                cells.push(Cell { value: value.clone(), policy, seed, config });
            }
        }
    }

    let results: Mutex<Vec<Option<Result<SweepRow, HarnessError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    let workers = base.threads.max(1).min(cells.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = cursor.fetch_add(1, Ordering::Relaxed);
                if index >= cells.len() {
                    break;
                }
                let cell = &cells[index];
                let outcome = train_and_evaluate(&cell.config, cell.seed).map(|(_, eval)| {
                    SweepRow {
                        value: cell.value.clone(),
                        policy: cell.policy,
                        seed: cell.seed,
                        weighted: eval.weighted,
                        eta_hat: eval.eta_hat,
                        sigma_min: eval.sigma_min,
                    }
                });
                results.lock().expect("sweep results poisoned")[index] = Some(outcome);
            });
        }
    });

    let mut rows = Vec::with_capacity(cells.len());
    for slot in results.into_inner().expect("sweep results poisoned") {
        rows.push(slot.expect("sweep cell not executed")?);
    }

    let axis_name = axis.name();
    let mut per_seed = String::from("axis,value,policy,seed,weighted_cavr,eta_hat,sigma_min\n");
    for row in &rows {
        let _ = writeln!(
            per_seed,
            "{axis_name},{},{},{},{},{},{}",
            row.value,
            row.policy.name(),
            row.seed,
            row.weighted,
            row.eta_hat,
            row.sigma_min
        );
    }

    let mut summary = String::from(
        "axis,value,policy,median_weighted_cavr,mean_weighted_cavr,\
         median_eta_hat,mean_eta_hat,rel_reduction_vs_d3qn\n",
    );
    for value in values {
        let collect = |policy: Policy| -> (Vec<f64>, Vec<f64>) {
            rows.iter()
                .filter(|r| &r.value == value && r.policy == policy)
                .map(|r| (r.weighted, r.eta_hat))
                .unzip()
        };
        let mut d3qn_median = None;
        if base.policies.contains(&Policy::D3qn) {
            let (mut w, _) = collect(Policy::D3qn);
            if !w.is_empty() {
                d3qn_median = Some(median(&mut w));
            }
        }
        for &policy in &base.policies {
            let (mut weighted, mut eta) = collect(policy);
            if weighted.is_empty() {
                continue;
            }
            let mean_w = weighted.iter().sum::<f64>() / weighted.len() as f64;
            let mean_e = eta.iter().sum::<f64>() / eta.len() as f64;
            let med_w = median(&mut weighted);
            let med_e = median(&mut eta);
            let reduction = match (policy, d3qn_median) {
                (Policy::QrD3qn, Some(reference)) if reference != 0.0 => {
                    format!("{}", (reference - med_w) / reference)
                }
                _ => String::new(),
            };
            let _ = writeln!(
                summary,
                "{axis_name},{value},{},{med_w},{mean_w},{med_e},{mean_e},{reduction}",
                policy.name()
            );
        }
    }

    fs::create_dir_all(&base.out_dir)?;
    let stem = format!("sweep_{axis_name}_{:016x}", base.hash());
    let per_seed_path = base.out_dir.join(format!("{stem}.csv"));
    let summary_path = base.out_dir.join(format!("{stem}_summary.csv"));
    fs::write(&per_seed_path, per_seed)?;
    fs::write(&summary_path, summary)?;
    Ok(SweepOutput { per_seed_path, summary_path, rows })
}

/// The exact-oracle counterpart of a policy, where one exists: the
/// always-transmit rule and the uniform random baseline are stationary
/// state policies; round-robin (cycle position) and the learned/index
/// policies (network weights, virtual queue) are not.
pub fn oracle_policy_for(policy: Policy) -> Result<OraclePolicy, HarnessError> {
    match policy {
        Policy::AlwaysTransmit => Ok(OraclePolicy::Rule(always_transmit_action)),
        Policy::Random => Ok(OraclePolicy::UniformRandom),
        other => Err(HarnessError::UnsupportedOraclePolicy {
            policy: other.name().to_string(),
            reason: "the oracle handles stationary functions of the source states only"
                .to_string(),
        }),
    }
}

/// Builds the exact chain for the configured policy, solves it, and writes
/// `oracle_<hash>.csv` (`quantity,k,value` rows: psi per k, then avr and
/// cost). Heterogeneous parameters come from the first seed.
pub fn run_oracle(config: &ExperimentConfig) -> Result<(OracleResult, PathBuf), HarnessError> {
    config.validate()?;
    let seed = config.seeds.first().copied().unwrap_or(0);
    let system = config.system_for_seed(seed)?;
    let spec = ChainSpec::new(system, oracle_policy_for(config.policy)?)?;
    let result = oracle::evaluate(&spec)?;

    let mut csv = String::from("quantity,k,value\n");
    for (i, psi) in result.psi.iter().enumerate() {
        let _ = writeln!(csv, "psi,{},{psi}", i + 1);
    }
    let _ = writeln!(csv, "avr,,{}", result.avr);
    let _ = writeln!(csv, "cost,,{}", result.cost);
    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join(format!("oracle_{:016x}.csv", config.hash()));
    fs::write(&path, csv)?;
    Ok((result, path))
}

/// Quick cross-module smoke battery; prints one PASS/FAIL line per check
/// and fails if any check fails.
pub fn selftest() -> Result<(), HarnessError> {
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        if ok {
            println!("PASS {name}");
        } else {
            println!("FAIL {name}");
            failures += 1;
        }
    };

    let delivered = env::advance_source(
        SourceState { aoi_tx: 50, aoi_rx: 80, viol_count: 9 },
        true,
        true,
        5,
        9,
        100,
    );
    check(
        "env-delivery-resets-ages",
        delivered == SourceState { aoi_tx: 0, aoi_rx: 1, viol_count: 0 },
    );

    let trace = vec![vec![0], vec![1], vec![2], vec![0], vec![1]];
    let counts_ok = accumulate_cavr(&trace, 3, 1)
        .map(|est| est.window_counts == vec![3, 1, 0])
        .unwrap_or(false);
    check("metrics-window-counts", counts_ok);

    let reward_ok = WeightVector::from_weights(vec![0.5, 0.5], WeightScheme::Uniform)
        .map(|w| (cmdp::reward(&[2, 0], 1, &w, 0.5, 0.75) + 0.625).abs() < 1e-12)
        .unwrap_or(false);
    check("cmdp-reward-hand-case", reward_ok);

    let table_ok = WeightVector::from_weights(vec![0.5, 0.3, 0.2], WeightScheme::Uniform)
        .map(|w| crate::dpp::penalty_table(&w).as_slice() == [0.0, 0.5, 0.8, 1.0])
        .unwrap_or(false);
    check("dpp-penalty-table", table_ok);

    let oracle_ok = ChainSpec::new(
        SystemConfig::homogeneous(1, 1.0, 1.0, 2, 2, 5, 0.75),
        OraclePolicy::Fixed(1),
    )
    .and_then(|spec| oracle::evaluate(&spec))
    .map(|r| r.psi.iter().all(|&p| p.abs() < 1e-12) && (r.cost - 1.0).abs() < 1e-12)
    .unwrap_or(false);
    check("oracle-perfect-refresh", oracle_ok);

    let shape = crate::valuenet::NetShape {
        input: 6,
        hidden: 8,
        actions: 3,
        quantiles: 4,
        dueling: true,
    };
    let params = NetParams::init(shape, &mut stream_rng(0, streams::INIT));
    let roundtrip_ok = NetParams::load_from_str(&params.save_to_string())
        .map(|loaded| loaded.data == params.data && loaded.shape == params.shape)
        .unwrap_or(false);
    check("valuenet-checkpoint-roundtrip", roundtrip_ok);

    if failures > 0 {
        Err(HarnessError::SelftestFailed { failures })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    /// A config small enough for test-speed training.
    fn tiny_config(out_dir: &Path) -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.num_sources = 2;
        config.zeta = 3;
        config.k_max = 3;
        config.delta_max = 12;
        config.episodes = 4;
        config.slots_per_episode = 25;
        config.eps_decay_episodes = 3;
        config.hidden = 8;
        config.batch_size = 4;
        config.min_fill = 20;
        config.buffer_capacity = 200;
        config.num_quantiles = 4;
        config.eval_horizon = 400;
        config.seeds = vec![1];
        config.out_dir = out_dir.to_path_buf();
        config.threads = 1;
        config
    }

    #[test]
    fn defaults_mirror_the_baseline_setup() {
        let config = ExperimentConfig::default();
        assert_eq!(config.num_sources, 10);
        assert_eq!((config.p_gen, config.p_succ), (0.7, 0.7));
        assert_eq!((config.zeta, config.k_max, config.delta_max), (15, 9, 100));
        assert_eq!(config.eta_max, 0.75);
        assert_eq!(config.scheme, SchemeKind::Exponential);
        assert_eq!(config.beta, 2.0);
        assert_eq!(config.eps_hat, 0.05);
        assert_eq!(config.xi, 0.1);
        assert_eq!((config.hetero_low, config.hetero_high), (0.6, 0.8));
        assert_eq!(config.seeds.len(), 10);
        assert!(config.validate().is_ok());
    }

    #[test]
    fn key_value_text_parses_and_later_flags_win() {
        let mut config = ExperimentConfig::default();
        config
            .apply_text(
                "# comment\n\nm=5\npolicy=dpp\nseeds=3,4\nscheme=one_hot\nk_o=2\n\
                 heterogeneous=true\n",
            )
            .unwrap();
        assert_eq!(config.num_sources, 5);
        assert_eq!(config.policy, Policy::Dpp);
        assert_eq!(config.seeds, vec![3, 4]);
        assert_eq!(config.scheme, SchemeKind::OneHot);
        assert!(config.heterogeneous);

        // A later (CLI-style) override replaces the file value.
        config.apply_pair("m", "3").unwrap();
        assert_eq!(config.num_sources, 3);

        assert!(matches!(
            config.apply_pair("not_a_key", "1"),
            Err(HarnessError::UnknownKey { .. })
        ));
        assert!(matches!(
            config.apply_pair("p_gen", "fast"),
            Err(HarnessError::InvalidValue { .. })
        ));
        assert!(matches!(
            config.apply_text("just-a-line\n"),
            Err(HarnessError::Config { .. })
        ));
    }

    #[test]
    fn config_hash_is_stable_and_field_sensitive() {
        let config = ExperimentConfig::default();
        let mut other = config.clone();
        assert_eq!(config.hash(), other.hash());

        // Output plumbing does not change the experiment identity.
        other.out_dir = PathBuf::from("elsewhere");
        other.threads = 7;
        assert_eq!(config.hash(), other.hash());

        other.zeta = 16;
        assert_ne!(config.hash(), other.hash());
    }

    #[test]
    fn fnv_hash_matches_published_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn stream_rngs_are_deterministic_and_mutually_distinct() {
        use rand::Rng as _;
        let draw = |stream: u64| -> Vec<u64> {
            let mut rng = stream_rng(42, stream);
            (0..8).map(|_| rng.random::<u64>()).collect()
        };
        assert_eq!(draw(streams::ENV), draw(streams::ENV));
        let all: Vec<Vec<u64>> = (1..=7).map(draw).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j], "streams {} and {} collide", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn heterogeneous_params_are_per_seed_and_in_range() {
        let mut config = ExperimentConfig::default();
        config.heterogeneous = true;
        config.num_sources = 4;
        let a = config.source_params_for_seed(1);
        let b = config.source_params_for_seed(1);
        let c = config.source_params_for_seed(2);
        assert_eq!(a, b, "same seed must redraw identically");
        assert_ne!(a, c, "different seeds should draw different parameters");
        for p in &a {
            assert!((0.6..=0.8).contains(&p.p_gen));
            assert!((0.6..=0.8).contains(&p.p_succ));
        }
        // Homogeneous mode ignores the range entirely.
        config.heterogeneous = false;
        let params = config.source_params_for_seed(1);
        assert!(params.iter().all(|p| p.p_gen == 0.7 && p.p_succ == 0.7));
    }

    #[test]
    fn always_transmit_serves_the_stalest_receiver() {
        let states = vec![
            SourceState { aoi_tx: 0, aoi_rx: 3, viol_count: 0 },
            SourceState { aoi_tx: 0, aoi_rx: 7, viol_count: 0 },
            SourceState { aoi_tx: 0, aoi_rx: 7, viol_count: 0 },
        ];
        assert_eq!(always_transmit_action(&states), 2, "lowest index on ties");
        assert_eq!(always_transmit_action(&states[..1]), 1);
    }

    #[test]
    fn round_robin_cycles_through_sources() {
        let states = vec![
            SourceState { aoi_tx: 0, aoi_rx: 1, viol_count: 0 };
            3
        ];
        let mut runtime = PolicyRuntime::RoundRobin { next: 0 };
        let mut rng = stream_rng(0, streams::EVAL_POLICY);
        let actions: Vec<usize> = (0..7)
            .map(|_| runtime.decide(&states, &[], &mut rng).unwrap())
            .collect();
        assert_eq!(actions, vec![1, 2, 3, 1, 2, 3, 1]);
    }

    #[test]
    fn training_smoke_run_emits_all_artifacts_deterministically() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let config_a = tiny_config(dir_a.path());
        let mut config_b = tiny_config(dir_b.path());
        config_b.threads = 3; // non-semantic difference

        let record_a = train(&config_a, 1).unwrap();
        let record_b = train(&config_b, 1).unwrap();
        let curve_a = fs::read(record_a.learning_curve.as_ref().unwrap()).unwrap();
        let curve_b = fs::read(record_b.learning_curve.as_ref().unwrap()).unwrap();
        assert_eq!(curve_a, curve_b, "same seed must produce identical learning curves");

        let text = String::from_utf8(curve_a).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "episode,slot,epsilon,lambda,eta_hat,loss,episodic_reward"
        );
        assert_eq!(lines.count(), 4, "one row per episode");
        assert!(record_a.checkpoint.as_ref().unwrap().exists());
        assert!(record_a.queue_log.is_none());

        // The checkpoint round-trips into a usable greedy policy.
        let params = load_checkpoint(record_a.checkpoint.as_ref().unwrap()).unwrap();
        assert_eq!(params.data, record_a.final_params.unwrap().data);
    }

    #[test]
    fn dpp_training_run_logs_the_queue_and_skips_checkpoints() {
        let dir = tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.policy = Policy::Dpp;
        let record = train(&config, 1).unwrap();
        assert!(record.checkpoint.is_none());
        assert!(record.learning_curve.is_none());
        let log = fs::read_to_string(record.queue_log.unwrap()).unwrap();
        let mut lines = log.lines();
        assert_eq!(lines.next().unwrap(), "slot,action,cost,backlog");
        assert_eq!(lines.count(), 100, "episodes × slots_per_episode rows");
    }

    #[test]
    fn evaluation_of_perfect_refresh_gives_zero_psi_and_unit_cost() {
        let dir = tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.num_sources = 1;
        config.p_gen = 1.0;
        config.p_succ = 1.0;
        config.policy = Policy::AlwaysTransmit;
        let system = config.system_for_seed(1).unwrap();
        let mut runtime =
            PolicyRuntime::build(Policy::AlwaysTransmit, &config, &system, None).unwrap();
        let outcome = evaluate(
            &config,
            &system,
            Policy::AlwaysTransmit,
            &mut runtime,
            1,
            500,
        )
        .unwrap();
        assert!(outcome.estimate.psi.iter().all(|&p| p == 0.0));
        assert_eq!(outcome.eta_hat, 1.0);
        assert_eq!(outcome.weighted, 0.0);
        assert_eq!(outcome.sigma_min, 1);
    }

    #[test]
    fn one_hot_weighting_reports_exactly_the_selected_component() {
        let dir = tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.scheme = SchemeKind::OneHot;
        config.k_o = 1;
        config.policy = Policy::Random;
        let system = config.system_for_seed(5).unwrap();
        let mut runtime = PolicyRuntime::build(Policy::Random, &config, &system, None).unwrap();
        let outcome =
            evaluate(&config, &system, Policy::Random, &mut runtime, 5, 600).unwrap();
        assert_eq!(outcome.weighted, outcome.estimate.psi[0]);
        assert!(outcome.estimate.psi[0] > 0.0, "random policy should see violations");
    }

    #[test]
    fn learned_policies_require_a_checkpoint_to_evaluate() {
        let dir = tempdir().unwrap();
        let config = tiny_config(dir.path());
        let system = config.system_for_seed(1).unwrap();
        let err = PolicyRuntime::build(Policy::QrD3qn, &config, &system, None).unwrap_err();
        assert!(matches!(err, HarnessError::MissingCheckpoint { .. }));
    }

    #[test]
    fn sweep_over_static_policies_has_the_full_cross_product() {
        let dir = tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.policies = vec![Policy::AlwaysTransmit, Policy::Random];
        config.seeds = vec![1, 2];
        config.eval_horizon = 200;
        let values = vec!["2".to_string(), "4".to_string()];
        let output = sweep(&config, SweepAxis::Zeta, &values).unwrap();
        assert_eq!(output.rows.len(), 8, "|values| × |policies| × |seeds|");

        let per_seed = fs::read_to_string(&output.per_seed_path).unwrap();
        assert_eq!(per_seed.lines().count(), 9, "header plus one row per cell");
        assert!(per_seed.starts_with("axis,value,policy,seed,"));
        let summary = fs::read_to_string(&output.summary_path).unwrap();
        assert_eq!(summary.lines().count(), 5, "header plus |values| × |policies|");

        assert!(matches!(sweep(&config, SweepAxis::Zeta, &[]), Err(HarnessError::EmptySweep)));
    }

    #[test]
    fn sweep_emits_the_relative_reduction_column_for_learning_pairs() {
        let dir = tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.policies = vec![Policy::QrD3qn, Policy::D3qn];
        config.seeds = vec![1];
        config.episodes = 2;
        config.eval_horizon = 100;
        config.threads = 2;
        let values = vec!["3".to_string()];
        let output = sweep(&config, SweepAxis::KMax, &values).unwrap();
        assert_eq!(output.rows.len(), 2);
        let summary = fs::read_to_string(&output.summary_path).unwrap();
        let qr_row = summary
            .lines()
            .find(|l| l.contains(",qr_d3qn,"))
            .expect("qr_d3qn summary row");
        assert!(
            !qr_row.ends_with(','),
            "relative reduction must be filled when d3qn medians exist: {qr_row}"
        );
    }

    #[test]
    fn oracle_emission_matches_the_direct_solver() {
        let dir = tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.num_sources = 1;
        config.zeta = 2;
        config.k_max = 2;
        config.delta_max = 6;
        config.policy = Policy::AlwaysTransmit;
        let (result, path) = run_oracle(&config).unwrap();

        let spec = ChainSpec::new(
            config.system_for_seed(1).unwrap(),
            OraclePolicy::Rule(always_transmit_action),
        )
        .unwrap();
        let direct = oracle::evaluate(&spec).unwrap();
        assert_eq!(result.psi, direct.psi);

        let text = fs::read_to_string(path).unwrap();
        assert!(text.starts_with("quantity,k,value\n"));
        assert_eq!(text.lines().count(), 1 + 2 + 2, "header, psi rows, avr, cost");
        assert!(text.contains(&format!("avr,,{}", direct.avr)));

        config.policy = Policy::RoundRobin;
        assert!(matches!(
            run_oracle(&config),
            Err(HarnessError::UnsupportedOraclePolicy { .. })
        ));
    }

    #[test]
    fn selftest_battery_passes() {
        selftest().unwrap();
    }
}
