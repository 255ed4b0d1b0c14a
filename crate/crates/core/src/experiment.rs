//! Experiment orchestration: environments per repetition, optional
//! clustering, and one training worker per (repetition, algorithm, mode,
//! agent seed).
//!
//! Every worker of a repetition draws its true states from the same stream,
//! so all algorithms and both modes see the same state sequence. Agents own
//! separate streams derived from their own seed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::agents::{Agent, Algorithm, Transition};
use crate::cluster::{clusterize_environment, ClusterModel, ClusteredEnvironment};
use crate::config::ExperimentConfig;
use crate::diagnostics::{adjacent_state_reward_table, cluster_reward_correlation, CorrelationReport};
use crate::env::{BanditTask, Environment};
use crate::error::{Error, Result};
use crate::eval::{evaluate_cached, EvalCache, EvalSet, EvalSummary};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, derive_stream, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Full,
    Clustered,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Clustered => "clustered",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Mode::Full),
            "clustered" => Ok(Mode::Clustered),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Stream labels under the master seed.
pub fn env_label(rep: usize) -> String {
    format!("rep{rep}/env")
}

pub fn states_label(rep: usize) -> String {
    format!("rep{rep}/states")
}

pub fn eval_label(rep: usize) -> String {
    format!("rep{rep}/eval")
}

pub fn cluster_label(cfg: &ExperimentConfig, rep: usize) -> String {
    if cfg.clustering.refit_per_repetition {
        format!("rep{rep}/cluster")
    } else {
        "cluster".to_owned()
    }
}

pub fn agent_seed_label(rep: usize, seed_index: usize) -> String {
    format!("rep{rep}/agent{seed_index}")
}

/// Seed handed to the agent of `(rep, seed_index)`; shared across algorithms
/// and modes so that comparisons are paired.
pub fn agent_seed(cfg: &ExperimentConfig, rep: usize, seed_index: usize) -> u64 {
    derive_seed(cfg.master_seed, &agent_seed_label(rep, seed_index))
}

/// One use of a random stream, identified by its master seed and label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamUse {
    pub master: u64,
    pub label: String,
    pub owner: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RunKey {
    pub repetition: usize,
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub seed_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub step: u64,
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub key: RunKey,
    pub agent_seed: u64,
    pub records: Vec<EvalRecord>,
    /// SHA-256 over the true states drawn during training.
    pub state_digest: String,
    pub steps_completed: u64,
    pub failure: Option<RunFailure>,
    pub streams: Vec<StreamUse>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionInfo {
    pub repetition: usize,
    pub env_seed: u64,
    pub eval_excluded: usize,
    pub cluster_inertia: Option<f64>,
    pub cluster_iterations: Option<usize>,
    pub setup_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub repetitions: Vec<RepetitionInfo>,
    pub runs: Vec<RunRecord>,
    pub total_seconds: f64,
}

impl ExperimentResult {
    pub fn failures(&self) -> impl Iterator<Item = (&RunKey, &RunFailure)> {
        self.runs
            .iter()
            .filter_map(|r| r.failure.as_ref().map(|f| (&r.key, f)))
    }

    /// Every stream used by the experiment, deduplicated.
    pub fn stream_ledger(&self) -> BTreeSet<StreamUse> {
        self.runs.iter().flat_map(|r| r.streams.iter().cloned()).collect()
    }
}

/// Everything the workers of one repetition share.
pub struct RepetitionContext {
    pub repetition: usize,
    pub env: Arc<Environment>,
    pub clustered: Option<ClusteredEnvironment>,
    pub eval_set: EvalSet,
    pub eval_cache: EvalCache,
    pub streams: Vec<StreamUse>,
}

impl RepetitionContext {
    pub fn task(&self, mode: Mode) -> Result<&dyn BanditTask> {
        match mode {
            Mode::Full => Ok(self.env.as_ref()),
            Mode::Clustered => self
                .clustered
                .as_ref()
                .map(|c| c as &dyn BanditTask)
                .ok_or_else(|| Error::InvalidConfig("clustering is disabled".into())),
        }
    }
}

pub fn modes(cfg: &ExperimentConfig) -> Vec<Mode> {
    if cfg.clustering.enabled {
        vec![Mode::Full, Mode::Clustered]
    } else {
        vec![Mode::Full]
    }
}

pub fn build_environment(cfg: &ExperimentConfig, rep: usize) -> Result<Environment> {
    Environment::build(cfg.env.to_config(derive_seed(cfg.master_seed, &env_label(rep))))
}

/// Fit the clustering used by repetition `rep` on `env`.
pub fn fit_clustering(cfg: &ExperimentConfig, rep: usize, env: Arc<Environment>) -> Result<ClusteredEnvironment> {
    let mut rng = derive_stream(cfg.master_seed, &cluster_label(cfg, rep));
    clusterize_environment(
        env,
        cfg.clustering.n_fit_samples,
        &cfg.clustering.kmeans_params(),
        cfg.clustering.mode,
        &mut rng,
    )
}

pub fn prepare_repetition(
    cfg: &ExperimentConfig,
    rep: usize,
    shared_model: Option<&ClusterModel>,
) -> Result<RepetitionContext> {
    let master = cfg.master_seed;
    let env = Arc::new(build_environment(cfg, rep)?);
    let mut streams = vec![StreamUse {
        master,
        label: env_label(rep),
        owner: "environment",
    }];
    let clustered = if cfg.clustering.enabled {
        streams.push(StreamUse {
            master,
            label: cluster_label(cfg, rep),
            owner: "clustering",
        });
        Some(match shared_model {
            Some(model) => ClusteredEnvironment::new(env.clone(), model.clone(), cfg.clustering.mode)?,
            None => fit_clustering(cfg, rep, env.clone())?,
        })
    } else {
        None
    };
    let mut eval_rng = derive_stream(master, &eval_label(rep));
    streams.push(StreamUse {
        master,
        label: eval_label(rep),
        owner: "eval-set",
    });
    let eval_set = EvalSet::sample(&env, cfg.eval_states, &mut eval_rng);
    let eval_cache = EvalCache::new(&env, &eval_set)?;
    Ok(RepetitionContext {
        repetition: rep,
        env,
        clustered,
        eval_set,
        eval_cache,
        streams,
    })
}

fn agent_stream_labels(algorithm: Algorithm) -> &'static [&'static str] {
    match algorithm {
        Algorithm::Dqn => &["q"],
        Algorithm::A2c | Algorithm::Ppo => &["actor", "critic"],
        Algorithm::Uniform => &[],
    }
}

/// Train one agent on one repetition for `steps` timesteps, evaluating at
/// every multiple of the cadence. Failures are recorded, not returned, so
/// partial curves survive.
pub fn run_worker(
    cfg: &ExperimentConfig,
    ctx: &RepetitionContext,
    key: RunKey,
    steps: u64,
) -> (RunRecord, Option<Agent>) {
    let start = Instant::now();
    let seed = agent_seed(cfg, key.repetition, key.seed_index);
    let master = cfg.master_seed;
    let act_label = format!("{}/{}/act", key.algorithm, key.mode);
    let eval_policy_label = format!("{}/{}/eval", key.algorithm, key.mode);
    let mut streams = ctx.streams.clone();
    streams.push(StreamUse {
        master,
        label: states_label(key.repetition),
        owner: "states",
    });
    for label in agent_stream_labels(key.algorithm) {
        streams.push(StreamUse {
            master: seed,
            label: (*label).to_owned(),
            owner: "agent-init",
        });
    }
    streams.push(StreamUse {
        master: seed,
        label: act_label.clone(),
        owner: "agent-act",
    });
    streams.push(StreamUse {
        master: seed,
        label: eval_policy_label.clone(),
        owner: "agent-eval",
    });

    let mut record = RunRecord {
        key,
        agent_seed: seed,
        records: Vec::new(),
        state_digest: String::new(),
        steps_completed: 0,
        failure: None,
        streams,
        seconds: 0.0,
    };
    let mut digest = Sha256::new();
    let outcome = (|| -> Result<Agent> {
        let task = ctx.task(key.mode)?;
        let mut agent = Agent::new(cfg.agent_config(key.algorithm, task.obs_dim(), seed))?;
        let mut states = derive_stream(master, &states_label(key.repetition));
        let mut act_rng = derive_stream(seed, &act_label);
        let mut eval_rng = derive_stream(seed, &eval_policy_label);
        for t in 1..=steps {
            let s = ctx.env.sample_state(&mut states);
            for v in &s {
                digest.update(v.to_le_bytes());
            }
            let observation = task.observe(&s)?;
            let action = agent.act(&observation, &mut act_rng, true)?;
            let reward = ctx.env.reward(&s, action)?;
            agent.observe(Transition {
                observation,
                action,
                reward,
            })?;
            agent.update(&mut act_rng)?;
            record.steps_completed = t;
            if t % cfg.eval_cadence == 0 {
                let summary = evaluate_cached(&mut &agent, task, &ctx.eval_set, &ctx.eval_cache, 1, &mut eval_rng)?;
                record.records.push(EvalRecord { step: t, summary });
            }
        }
        Ok(agent)
    })();
    record.state_digest = digest.finalize().iter().map(|b| format!("{b:02x}")).collect();
    record.seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(agent) => (record, Some(agent)),
        Err(e) => {
            record.failure = Some(RunFailure {
                step: record.steps_completed + 1,
                kind: e.kind(),
                message: e.to_string(),
            });
            (record, None)
        }
    }
}

/// All worker keys of an experiment in their canonical order.
pub fn run_keys(cfg: &ExperimentConfig) -> Vec<RunKey> {
    let mut algorithms = cfg.algorithms.clone();
    algorithms.sort();
    let mut keys = Vec::new();
    for repetition in 0..cfg.repetitions {
        for &algorithm in &algorithms {
            for mode in modes(cfg) {
                for seed_index in 0..cfg.agent_seeds {
                    keys.push(RunKey {
                        repetition,
                        algorithm,
                        mode,
                        seed_index,
                    });
                }
            }
        }
    }
    keys
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let shared = if cfg.clustering.enabled && !cfg.clustering.refit_per_repetition {
        let env = Arc::new(build_environment(cfg, 0)?);
        Some(fit_clustering(cfg, 0, env)?.model().clone())
    } else {
        None
    };
    let mut contexts = Vec::with_capacity(cfg.repetitions);
    let mut repetitions = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let t0 = Instant::now();
        let ctx = prepare_repetition(cfg, rep, shared.as_ref())?;
        repetitions.push(RepetitionInfo {
            repetition: rep,
            env_seed: ctx.env.config().seed,
            eval_excluded: ctx.eval_cache.excluded(),
            cluster_inertia: ctx.clustered.as_ref().map(|c| c.model().inertia()),
            cluster_iterations: ctx.clustered.as_ref().map(|c| c.model().iterations()),
            setup_seconds: t0.elapsed().as_secs_f64(),
        });
        contexts.push(ctx);
    }
    let runs: Vec<RunRecord> = run_keys(cfg)
        .into_par_iter()
        .map(|key| run_worker(cfg, &contexts[key.repetition], key, cfg.budget).0)
        .collect();
    Ok(ExperimentResult {
        config: cfg.clone(),
        repetitions,
        runs,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Outputs of the reward-structure analyses on repetition 0's environment.
#[derive(Debug, Clone)]
pub struct DiagnosticsResult {
    pub env_seed: u64,
    pub table: Matrix,
    pub correlations: CorrelationReport,
}

pub fn run_diagnostics(cfg: &ExperimentConfig) -> Result<DiagnosticsResult> {
    let env = build_environment(cfg, 0)?;
    let d = &cfg.diagnostics;
    let mut table_rng: RngStream = derive_stream(cfg.master_seed, "diagnostics/table");
    let table = adjacent_state_reward_table(&env, d.table_states, d.table_actions, d.sigma, &mut table_rng)?;
    let mut corr_rng = derive_stream(cfg.master_seed, "diagnostics/correlation");
    let correlations = cluster_reward_correlation(&env, d.correlation_samples, d.correlation_k, d.norm, &mut corr_rng)?;
    Ok(DiagnosticsResult {
        env_seed: env.config().seed,
        table,
        correlations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.env.state_dim = 6;
        cfg.env.action_dim = 6;
        cfg.env.n_actions = 5;
        cfg.env.latent_dim = 3;
        cfg.env.reward_arch = vec![4, 3];
        cfg.budget = 300;
        cfg.eval_cadence = 100;
        cfg.eval_states = 32;
        cfg.agent_seeds = 2;
        cfg.repetitions = 2;
        cfg.algorithms = vec![Algorithm::Ppo, Algorithm::Dqn];
        cfg.pi_architecture = vec![8];
        cfg.dqn.learning_starts = 50;
        cfg.ppo.n_steps = 64;
        cfg.ppo.batch_size = 16;
        cfg.clustering.k = 4;
        cfg.clustering.n_fit_samples = 200;
        cfg.diagnostics.table_actions = 5;
        cfg
    }

    #[test]
    fn keys_are_sorted_and_complete() {
        let cfg = smoke();
        let keys = run_keys(&cfg);
        assert_eq!(keys.len(), 2 * 2 * 2 * 2);
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(keys[0].algorithm, Algorithm::Dqn);
    }

    #[test]
    fn workers_share_state_stream_within_repetition() {
        let cfg = smoke();
        let result = run_experiment(&cfg).unwrap();
        assert_eq!(result.failures().count(), 0);
        for rep in 0..2 {
            let digests: BTreeSet<&str> = result
                .runs
                .iter()
                .filter(|r| r.key.repetition == rep)
                .map(|r| r.state_digest.as_str())
                .collect();
            assert_eq!(digests.len(), 1);
        }
        let d0 = &result.runs[0].state_digest;
        let other = result.runs.iter().find(|r| r.key.repetition == 1).unwrap();
        assert_ne!(d0, &other.state_digest);
        for run in &result.runs {
            let steps: Vec<u64> = run.records.iter().map(|r| r.step).collect();
            assert_eq!(steps, vec![100, 200, 300]);
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [Mode::Full, Mode::Clustered] {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
    }
}
