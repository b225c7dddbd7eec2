//! `cavr` — train, evaluate, sweep, and exactly solve persistence-aware
//! status-update scheduling experiments.
//!
//! Configuration resolves in layers, later layers winning: built-in
//! defaults, then `--config FILE` (flat `key=value` lines), then the
//! dedicated flags below, then repeatable `--set key=value` overrides.
//! Every run's outputs land in a directory named by the configuration
//! hash and seed, so identical invocations land in identical places.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cavr_core::harness::{
    self, evaluate, load_checkpoint, run_oracle, sweep, train_and_evaluate, EvalOutcome,
    ExperimentConfig, PolicyRuntime, SweepAxis,
};

#[derive(Parser)]
#[command(
    name = "cavr",
    version,
    about = "Persistence-aware status-update scheduling: simulation, learning, and exact oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or roll out) the configured policy on every seed, then
    /// evaluate each greedily.
    Train(ConfigArgs),
    /// Evaluate one policy on the first configured seed and print its
    /// metrics; learned policies load `--checkpoint`, or the one a prior
    /// `train` left in the matching run directory.
    Evaluate(EvaluateArgs),
    /// Cross-product sweep of one axis over values × policies × seeds.
    Sweep(SweepArgs),
    /// Solve the exact source-state chain for the configured policy and
    /// system (small instances).
    Oracle(ConfigArgs),
    /// Run the built-in cross-module smoke battery.
    Selftest,
}

/// Configuration layers shared by every subcommand. Each dedicated flag
/// mirrors one configuration key and is applied through the same parser
/// as file entries, after the file and before `--set`.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat key=value configuration file (one assignment per line,
    /// `#` comments allowed).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Number of sources M.
    #[arg(long, value_name = "N")]
    num_sources: Option<String>,
    /// Per-slot status generation probability.
    #[arg(long, value_name = "P")]
    p_gen: Option<String>,
    /// Per-transmission delivery probability.
    #[arg(long, value_name = "P")]
    p_succ: Option<String>,
    /// Age violation threshold ζ.
    #[arg(long, value_name = "SLOTS")]
    zeta: Option<String>,
    /// Longest tracked violation window k_max.
    #[arg(long, value_name = "K")]
    k_max: Option<String>,
    /// Age truncation ceiling Δ_max.
    #[arg(long, value_name = "SLOTS")]
    delta_max: Option<String>,
    /// Average transmission budget η_max.
    #[arg(long, value_name = "RATE")]
    eta_max: Option<String>,
    /// Weighting family: uniform, exponential, or one_hot.
    #[arg(long, value_name = "NAME")]
    scheme: Option<String>,
    /// Exponential weighting base β (> 1).
    #[arg(long, value_name = "BETA")]
    beta: Option<String>,
    /// One-hot weighting window k_o.
    #[arg(long, value_name = "K")]
    k_o: Option<String>,
    /// Target level ε̂ for the tail persistence index.
    #[arg(long, value_name = "LEVEL")]
    eps_hat: Option<String>,
    /// Multiplier step size ξ.
    #[arg(long, value_name = "STEP")]
    xi: Option<String>,
    /// Policy: dqn, d3qn, qr_dqn, qr_d3qn, dpp, always_transmit,
    /// round_robin, or random.
    #[arg(long, value_name = "NAME")]
    policy: Option<String>,
    /// Comma-separated policies a sweep compares.
    #[arg(long, value_name = "LIST")]
    policies: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_name = "LIST")]
    seeds: Option<String>,
    /// Greedy evaluation length in slots.
    #[arg(long, value_name = "SLOTS")]
    eval_horizon: Option<String>,
    /// Draw per-source (p_gen, p_succ) uniformly from the hetero range.
    #[arg(long, value_name = "BOOL")]
    heterogeneous: Option<String>,
    /// Lower end of the heterogeneous parameter range.
    #[arg(long, value_name = "P")]
    hetero_low: Option<String>,
    /// Upper end of the heterogeneous parameter range.
    #[arg(long, value_name = "P")]
    hetero_high: Option<String>,
    /// Discount factor γ.
    #[arg(long, value_name = "GAMMA")]
    gamma: Option<String>,
    /// Adam learning rate α.
    #[arg(long, value_name = "ALPHA")]
    alpha: Option<String>,
    /// Replay mini-batch size.
    #[arg(long, value_name = "B")]
    batch_size: Option<String>,
    /// Quantiles per action for distributional variants (0 = default).
    #[arg(long, value_name = "N")]
    num_quantiles: Option<String>,
    /// Target-network sync period G in global slots.
    #[arg(long, value_name = "SLOTS")]
    target_period: Option<String>,
    /// Initial exploration rate.
    #[arg(long, value_name = "EPS")]
    eps_start: Option<String>,
    /// Final exploration rate.
    #[arg(long, value_name = "EPS")]
    eps_end: Option<String>,
    /// Episodes over which exploration decays linearly.
    #[arg(long, value_name = "E")]
    eps_decay_episodes: Option<String>,
    /// Training episodes E_max.
    #[arg(long, value_name = "E")]
    episodes: Option<String>,
    /// Slots per episode T_max.
    #[arg(long, value_name = "SLOTS")]
    slots_per_episode: Option<String>,
    /// Huber transition width κ.
    #[arg(long, value_name = "KAPPA")]
    kappa: Option<String>,
    /// Replay buffer capacity.
    #[arg(long, value_name = "N")]
    buffer_capacity: Option<String>,
    /// Replay fill floor before gradient steps start.
    #[arg(long, value_name = "N")]
    min_fill: Option<String>,
    /// Width of both trunk layers.
    #[arg(long, value_name = "H")]
    hidden: Option<String>,
    /// Drift-plus-penalty control gain V.
    #[arg(long, value_name = "V")]
    v_dpp: Option<String>,
    /// Output root directory.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<String>,
    /// Sweep worker threads.
    #[arg(long, value_name = "N")]
    threads: Option<String>,

    /// Raw key=value override, applied last (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn flag_pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("num_sources", &self.num_sources),
            ("p_gen", &self.p_gen),
            ("p_succ", &self.p_succ),
            ("zeta", &self.zeta),
            ("k_max", &self.k_max),
            ("delta_max", &self.delta_max),
            ("eta_max", &self.eta_max),
            ("scheme", &self.scheme),
            ("beta", &self.beta),
            ("k_o", &self.k_o),
            ("eps_hat", &self.eps_hat),
            ("xi", &self.xi),
            ("policy", &self.policy),
            ("policies", &self.policies),
            ("seeds", &self.seeds),
            ("eval_horizon", &self.eval_horizon),
            ("heterogeneous", &self.heterogeneous),
            ("hetero_low", &self.hetero_low),
            ("hetero_high", &self.hetero_high),
            ("gamma", &self.gamma),
            ("alpha", &self.alpha),
            ("batch_size", &self.batch_size),
            ("num_quantiles", &self.num_quantiles),
            ("target_period", &self.target_period),
            ("eps_start", &self.eps_start),
            ("eps_end", &self.eps_end),
            ("eps_decay_episodes", &self.eps_decay_episodes),
            ("episodes", &self.episodes),
            ("slots_per_episode", &self.slots_per_episode),
            ("kappa", &self.kappa),
            ("buffer_capacity", &self.buffer_capacity),
            ("min_fill", &self.min_fill),
            ("hidden", &self.hidden),
            ("v_dpp", &self.v_dpp),
            ("out_dir", &self.out_dir),
            ("threads", &self.threads),
        ]
    }

    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)
                .with_context(|| format!("reading configuration file {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        for (key, value) in self.flag_pairs() {
            if let Some(value) = value {
                config.apply_pair(key, value)?;
            }
        }
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .with_context(|| format!("--set expects key=value, got `{pair}`"))?;
            config.apply_pair(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Network checkpoint for a learned policy.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Axis to sweep: k_max, k_o, p_gen, p_succ, zeta, m, beta, or scheme.
    #[arg(long, value_name = "AXIS")]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_name = "LIST")]
    values: String,
}

fn print_outcome(outcome: &EvalOutcome, run_dir: &Path) {
    println!(
        "{} seed={} horizon={}: weighted_cavr={:.6} sigma_min={} eta_hat={:.4}",
        outcome.policy.name(),
        outcome.seed,
        outcome.horizon,
        outcome.weighted,
        outcome.sigma_min,
        outcome.eta_hat
    );
    for (i, psi) in outcome.estimate.psi.iter().enumerate() {
        println!("  psi[{}] = {psi:.6}", i + 1);
    }
    println!("  outputs: {}", run_dir.display());
}

fn cmd_train(args: &ConfigArgs) -> Result<()> {
    let config = args.resolve()?;
    for &seed in &config.seeds {
        let (record, outcome) = train_and_evaluate(&config, seed)?;
        print_outcome(&outcome, &record.run_dir);
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let seed = config.seeds[0];
    let system = config.system_for_seed(seed)?;
    let params = if config.policy.learning_variant().is_some() {
        let path = match &args.checkpoint {
            Some(path) => path.clone(),
            None => {
                let fallback = config.run_dir(seed).join("checkpoint.txt");
                if !fallback.exists() {
                    bail!(
                        "policy `{}` needs --checkpoint (no prior training run at {})",
                        config.policy.name(),
                        fallback.display()
                    );
                }
                fallback
            }
        };
        Some(
            load_checkpoint(&path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?,
        )
    } else {
        None
    };
    let mut runtime = PolicyRuntime::build(config.policy, &config, &system, params)?;
    let outcome = evaluate(
        &config,
        &system,
        config.policy,
        &mut runtime,
        seed,
        config.eval_horizon,
    )?;
    let dir = config.run_dir(seed);
    harness::write_eval_outputs(&dir, &outcome)?;
    print_outcome(&outcome, &dir);
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let axis: SweepAxis = args.axis.parse()?;
    let values: Vec<String> =
        args.values.split(',').map(|v| v.trim().to_string()).collect();
    let output = sweep(&config, axis, &values)?;
    println!("per-seed rows: {}", output.per_seed_path.display());
    println!("summary:       {}", output.summary_path.display());
    Ok(())
}

fn cmd_oracle(args: &ConfigArgs) -> Result<()> {
    let config = args.resolve()?;
    let (result, path) = run_oracle(&config)?;
    for (i, psi) in result.psi.iter().enumerate() {
        println!("psi[{}] = {psi:.10}", i + 1);
    }
    println!("avr  = {:.10}", result.avr);
    println!("cost = {:.10}", result.cost);
    println!("written to {}", path.display());
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Oracle(args) => cmd_oracle(&args),
        Command::Selftest => {
            harness::selftest()?;
            println!("all checks passed");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
