//! Experiment configuration files.
//!
//! Grammar (one item per line):
//!
//! ```text
//! file    := line*
//! line    := blank | comment | section | entry
//! comment := '#' any*
//! section := '[' name ']'            name ∈ {run, env, agents, clustering, evaluation, diagnostics}
//! entry   := key '=' value           key unique within its section
//! value   := integer | real | bool | word | list
//! list    := item (',' item)*        e.g. `reward_arch = 10,10,10`
//! ```
//!
//! Every key is optional; missing keys keep the defaults of
//! [`ExperimentConfig::default`]. Unknown sections or keys are errors that name
//! the offending key. [`ExperimentConfig::to_text`] renders the canonical
//! form, which is also what the config hash is computed over.

use std::fmt::Display;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::agents::{A2cParams, AgentConfig, Algorithm, DqnParams, PpoParams};
use crate::cluster::{KMeansParams, Representation};
use crate::diagnostics::DistanceNorm;
use crate::env::EnvConfig;
use crate::error::{Error, Result};

pub const CONFIG_SCHEMA: &str = "latent-bandit-config 1";

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSettings {
    pub state_dim: usize,
    pub action_dim: usize,
    pub n_actions: usize,
    pub latent_dim: usize,
    pub reward_arch: Vec<usize>,
    pub gaussian_output: bool,
}

impl EnvSettings {
    pub fn to_config(&self, seed: u64) -> EnvConfig {
        EnvConfig {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            n_actions: self.n_actions,
            latent_dim: self.latent_dim,
            reward_arch: self.reward_arch.clone(),
            seed,
            gaussian_output: self.gaussian_output,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringSettings {
    pub enabled: bool,
    pub k: usize,
    pub n_fit_samples: usize,
    pub mode: Representation,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub refit_per_repetition: bool,
}

impl ClusteringSettings {
    pub fn kmeans_params(&self) -> KMeansParams {
        KMeansParams {
            k: self.k,
            max_iter: self.max_iter,
            tol: self.tol,
            restarts: self.restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticSettings {
    pub table_states: usize,
    pub table_actions: usize,
    pub sigma: f64,
    pub correlation_samples: usize,
    pub correlation_k: usize,
    pub norm: DistanceNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub master_seed: u64,
    pub budget: u64,
    pub agent_seeds: usize,
    pub repetitions: usize,
    pub output_dir: String,
    pub env: EnvSettings,
    pub algorithms: Vec<Algorithm>,
    pub pi_architecture: Vec<usize>,
    pub dqn: DqnParams,
    pub a2c: A2cParams,
    pub ppo: PpoParams,
    pub clustering: ClusteringSettings,
    pub eval_cadence: u64,
    pub eval_states: usize,
    pub diagnostics: DiagnosticSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            master_seed: 0,
            budget: 100_000,
            agent_seeds: 3,
            repetitions: 3,
            output_dir: "results".into(),
            env: EnvSettings {
                state_dim: 100,
                action_dim: 100,
                n_actions: 100,
                latent_dim: 10,
                reward_arch: vec![10, 10, 10],
                gaussian_output: false,
            },
            algorithms: vec![Algorithm::A2c, Algorithm::Dqn, Algorithm::Ppo],
            pi_architecture: vec![128, 128, 128],
            dqn: DqnParams::default(),
            a2c: A2cParams::default(),
            ppo: PpoParams::default(),
            clustering: ClusteringSettings {
                enabled: true,
                k: 100,
                n_fit_samples: 100_000,
                mode: Representation::Centroid,
                max_iter: 100,
                tol: 1e-6,
                restarts: 1,
                refit_per_repetition: true,
            },
            eval_cadence: 1_000,
            eval_states: 512,
            diagnostics: DiagnosticSettings {
                table_states: 5,
                table_actions: 10,
                sigma: 0.01,
                correlation_samples: 100_000,
                correlation_k: 100,
                norm: DistanceNorm::L2,
            },
        }
    }
}

fn key_err(key: &str, message: impl Into<String>) -> Error {
    Error::ConfigKey {
        key: key.to_owned(),
        message: message.into(),
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| key_err(key, format!("cannot parse `{raw}`")))
}

fn parse_real(key: &str, raw: &str) -> Result<f64> {
    let v: f64 = parse_value(key, raw)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(key_err(key, "value must be finite"))
    }
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|item| parse_value(key, item.trim())).collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section: Option<String> = None;
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(line_no, "unterminated section header"))?
                    .trim();
                if !matches!(
                    name,
                    "run" | "env" | "agents" | "clustering" | "evaluation" | "diagnostics"
                ) {
                    return Err(key_err(name, format!("unknown section on line {line_no}")));
                }
                section = Some(name.to_owned());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            let section_name = section
                .as_deref()
                .ok_or_else(|| key_err(key, format!("entry outside any section on line {line_no}")))?;
            let full = format!("{section_name}.{key}");
            if seen.contains(&full) {
                return Err(key_err(&full, "duplicate key"));
            }
            cfg.set(&full, value)?;
            seen.push(full);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "run.name" => {
                if v.is_empty() || v.contains(char::is_whitespace) {
                    return Err(key_err(k, "name must be a single non-empty word"));
                }
                self.name = v.to_owned();
            }
            "run.master_seed" => self.master_seed = parse_value(k, v)?,
            "run.budget" => self.budget = parse_value(k, v)?,
            "run.agent_seeds" => self.agent_seeds = parse_value(k, v)?,
            "run.repetitions" => self.repetitions = parse_value(k, v)?,
            "run.output_dir" => self.output_dir = v.to_owned(),

            "env.state_dim" => self.env.state_dim = parse_value(k, v)?,
            "env.action_dim" => self.env.action_dim = parse_value(k, v)?,
            "env.n_actions" => self.env.n_actions = parse_value(k, v)?,
            "env.latent_dim" => self.env.latent_dim = parse_value(k, v)?,
            "env.reward_arch" => self.env.reward_arch = parse_list(k, v)?,
            "env.gaussian_output" => self.env.gaussian_output = parse_value(k, v)?,

            "agents.algorithms" => self.algorithms = parse_list(k, v)?,
            "agents.pi_architecture" => self.pi_architecture = parse_list(k, v)?,
            "agents.dqn.learning_rate" => self.dqn.learning_rate = parse_real(k, v)?,
            "agents.dqn.buffer_capacity" => self.dqn.buffer_capacity = parse_value(k, v)?,
            "agents.dqn.batch_size" => self.dqn.batch_size = parse_value(k, v)?,
            "agents.dqn.learning_starts" => self.dqn.learning_starts = parse_value(k, v)?,
            "agents.dqn.train_freq" => self.dqn.train_freq = parse_value(k, v)?,
            "agents.dqn.exploration_initial" => self.dqn.exploration_initial = parse_real(k, v)?,
            "agents.dqn.exploration_final" => self.dqn.exploration_final = parse_real(k, v)?,
            "agents.dqn.exploration_fraction" => self.dqn.exploration_fraction = parse_real(k, v)?,
            "agents.dqn.max_grad_norm" => self.dqn.max_grad_norm = parse_real(k, v)?,
            "agents.a2c.learning_rate" => self.a2c.learning_rate = parse_real(k, v)?,
            "agents.a2c.n_steps" => self.a2c.n_steps = parse_value(k, v)?,
            "agents.a2c.vf_coef" => self.a2c.vf_coef = parse_real(k, v)?,
            "agents.a2c.ent_coef" => self.a2c.ent_coef = parse_real(k, v)?,
            "agents.a2c.max_grad_norm" => self.a2c.max_grad_norm = parse_real(k, v)?,
            "agents.ppo.learning_rate" => self.ppo.learning_rate = parse_real(k, v)?,
            "agents.ppo.n_steps" => self.ppo.n_steps = parse_value(k, v)?,
            "agents.ppo.batch_size" => self.ppo.batch_size = parse_value(k, v)?,
            "agents.ppo.n_epochs" => self.ppo.n_epochs = parse_value(k, v)?,
            "agents.ppo.clip_range" => self.ppo.clip_range = parse_real(k, v)?,
            "agents.ppo.vf_coef" => self.ppo.vf_coef = parse_real(k, v)?,
            "agents.ppo.ent_coef" => self.ppo.ent_coef = parse_real(k, v)?,
            "agents.ppo.max_grad_norm" => self.ppo.max_grad_norm = parse_real(k, v)?,
            "agents.ppo.normalize_advantage" => self.ppo.normalize_advantage = parse_value(k, v)?,

            "clustering.enabled" => self.clustering.enabled = parse_value(k, v)?,
            "clustering.k" => self.clustering.k = parse_value(k, v)?,
            "clustering.n_fit_samples" => self.clustering.n_fit_samples = parse_value(k, v)?,
            "clustering.mode" => self.clustering.mode = parse_value(k, v)?,
            "clustering.max_iter" => self.clustering.max_iter = parse_value(k, v)?,
            "clustering.tol" => self.clustering.tol = parse_real(k, v)?,
            "clustering.restarts" => self.clustering.restarts = parse_value(k, v)?,
            "clustering.refit_per_repetition" => {
                self.clustering.refit_per_repetition = parse_value(k, v)?
            }

            "evaluation.cadence" => self.eval_cadence = parse_value(k, v)?,
            "evaluation.eval_states" => self.eval_states = parse_value(k, v)?,

            "diagnostics.table_states" => self.diagnostics.table_states = parse_value(k, v)?,
            "diagnostics.table_actions" => self.diagnostics.table_actions = parse_value(k, v)?,
            "diagnostics.sigma" => self.diagnostics.sigma = parse_real(k, v)?,
            "diagnostics.correlation_samples" => {
                self.diagnostics.correlation_samples = parse_value(k, v)?
            }
            "diagnostics.correlation_k" => self.diagnostics.correlation_k = parse_value(k, v)?,
            "diagnostics.norm" => self.diagnostics.norm = parse_value(k, v)?,
            _ => return Err(key_err(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(key_err("run.budget", "must be positive"));
        }
        if self.agent_seeds == 0 {
            return Err(key_err("run.agent_seeds", "must be at least 1"));
        }
        if self.repetitions == 0 {
            return Err(key_err("run.repetitions", "must be at least 1"));
        }
        if self.eval_cadence == 0 {
            return Err(key_err("evaluation.cadence", "must be positive"));
        }
        if self.eval_states == 0 {
            return Err(key_err("evaluation.eval_states", "must be positive"));
        }
        if self.algorithms.is_empty() {
            return Err(key_err("agents.algorithms", "at least one algorithm required"));
        }
        let mut algos = self.algorithms.clone();
        algos.sort();
        algos.dedup();
        if algos.len() != self.algorithms.len() {
            return Err(key_err("agents.algorithms", "duplicate algorithm"));
        }
        self.env
            .to_config(0)
            .validate()
            .map_err(|e| key_err("env", e.to_string()))?;
        for algorithm in &self.algorithms {
            self.agent_config(*algorithm, self.env.state_dim, 0)
                .validate()
                .map_err(|e| key_err("agents", e.to_string()))?;
        }
        let c = &self.clustering;
        if c.enabled {
            if c.k == 0 {
                return Err(key_err("clustering.k", "must be positive"));
            }
            if c.n_fit_samples < c.k {
                return Err(key_err("clustering.n_fit_samples", "must be at least k"));
            }
            if c.max_iter == 0 || c.restarts == 0 {
                return Err(key_err("clustering.max_iter", "max_iter and restarts must be positive"));
            }
            if c.tol < 0.0 {
                return Err(key_err("clustering.tol", "must be non-negative"));
            }
        }
        let d = &self.diagnostics;
        if d.table_actions > self.env.n_actions {
            return Err(key_err("diagnostics.table_actions", "exceeds n_actions"));
        }
        if d.sigma < 0.0 {
            return Err(key_err("diagnostics.sigma", "must be non-negative"));
        }
        if d.correlation_k == 0 || d.correlation_samples < d.correlation_k {
            return Err(key_err("diagnostics.correlation_k", "need 0 < k <= correlation_samples"));
        }
        Ok(())
    }

    pub fn agent_config(&self, algorithm: Algorithm, obs_dim: usize, seed: u64) -> AgentConfig {
        let mut dqn = self.dqn.clone();
        dqn.total_timesteps = self.budget;
        AgentConfig {
            algorithm,
            hidden: self.pi_architecture.clone(),
            obs_dim,
            n_actions: self.env.n_actions,
            seed,
            dqn,
            a2c: self.a2c.clone(),
            ppo: self.ppo.clone(),
        }
    }

    /// Evaluation points: every `eval_cadence` steps up to the budget.
    pub fn eval_steps(&self) -> Vec<u64> {
        (1..=self.budget / self.eval_cadence)
            .map(|i| i * self.eval_cadence)
            .collect()
    }

    /// Canonical rendering; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let f = |v: f64| format!("{v:?}");
        let d = &self.dqn;
        let a = &self.a2c;
        let p = &self.ppo;
        let c = &self.clustering;
        let g = &self.diagnostics;
        let mut out = format!("# {CONFIG_SCHEMA}\n");
        let mut section = |name: &str, entries: Vec<(&str, String)>| {
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        };
        section(
            "run",
            vec![
                ("name", self.name.clone()),
                ("master_seed", self.master_seed.to_string()),
                ("budget", self.budget.to_string()),
                ("agent_seeds", self.agent_seeds.to_string()),
                ("repetitions", self.repetitions.to_string()),
                ("output_dir", self.output_dir.clone()),
            ],
        );
        section(
            "env",
            vec![
                ("state_dim", self.env.state_dim.to_string()),
                ("action_dim", self.env.action_dim.to_string()),
                ("n_actions", self.env.n_actions.to_string()),
                ("latent_dim", self.env.latent_dim.to_string()),
                ("reward_arch", join(&self.env.reward_arch)),
                ("gaussian_output", self.env.gaussian_output.to_string()),
            ],
        );
        section(
            "agents",
            vec![
                ("algorithms", join(&self.algorithms)),
                ("pi_architecture", join(&self.pi_architecture)),
                ("dqn.learning_rate", f(d.learning_rate)),
                ("dqn.buffer_capacity", d.buffer_capacity.to_string()),
                ("dqn.batch_size", d.batch_size.to_string()),
                ("dqn.learning_starts", d.learning_starts.to_string()),
                ("dqn.train_freq", d.train_freq.to_string()),
                ("dqn.exploration_initial", f(d.exploration_initial)),
                ("dqn.exploration_final", f(d.exploration_final)),
                ("dqn.exploration_fraction", f(d.exploration_fraction)),
                ("dqn.max_grad_norm", f(d.max_grad_norm)),
                ("a2c.learning_rate", f(a.learning_rate)),
                ("a2c.n_steps", a.n_steps.to_string()),
                ("a2c.vf_coef", f(a.vf_coef)),
                ("a2c.ent_coef", f(a.ent_coef)),
                ("a2c.max_grad_norm", f(a.max_grad_norm)),
                ("ppo.learning_rate", f(p.learning_rate)),
                ("ppo.n_steps", p.n_steps.to_string()),
                ("ppo.batch_size", p.batch_size.to_string()),
                ("ppo.n_epochs", p.n_epochs.to_string()),
                ("ppo.clip_range", f(p.clip_range)),
                ("ppo.vf_coef", f(p.vf_coef)),
                ("ppo.ent_coef", f(p.ent_coef)),
                ("ppo.max_grad_norm", f(p.max_grad_norm)),
                ("ppo.normalize_advantage", p.normalize_advantage.to_string()),
            ],
        );
        section(
            "clustering",
            vec![
                ("enabled", c.enabled.to_string()),
                ("k", c.k.to_string()),
                ("n_fit_samples", c.n_fit_samples.to_string()),
                ("mode", c.mode.to_string()),
                ("max_iter", c.max_iter.to_string()),
                ("tol", f(c.tol)),
                ("restarts", c.restarts.to_string()),
                ("refit_per_repetition", c.refit_per_repetition.to_string()),
            ],
        );
        section(
            "evaluation",
            vec![
                ("cadence", self.eval_cadence.to_string()),
                ("eval_states", self.eval_states.to_string()),
            ],
        );
        section(
            "diagnostics",
            vec![
                ("table_states", g.table_states.to_string()),
                ("table_actions", g.table_actions.to_string()),
                ("sigma", f(g.sigma)),
                ("correlation_samples", g.correlation_samples.to_string()),
                ("correlation_k", g.correlation_k.to_string()),
                ("norm", g.norm.to_string()),
            ],
        );
        out
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
