//! Command-line front end.
//!
//! Success prints one JSON object on stdout and exits 0. Failure prints one
//! JSON object on stderr of the form
//! `{"schema":"latent-bandit-error 1","error":<kind>,"key":<key or null>,"message":<text>}`
//! and exits nonzero: 2 for usage errors, 3 when training runs aborted, 1
//! otherwise.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use latent_bandit::agents::Algorithm;
use latent_bandit::cluster::ClusteredEnvironment;
use latent_bandit::config::ExperimentConfig;
use latent_bandit::dump::{read_agent, read_environment, write_agent, write_environment};
use latent_bandit::env::BanditTask;
use latent_bandit::eval::{evaluate_policy, EvalSet};
use latent_bandit::experiment::{
    build_environment, fit_clustering, prepare_repetition, run_diagnostics, run_experiment, run_worker, Mode, RunKey,
};
use latent_bandit::report::{emit_diagnostics, emit_results, replot};
use latent_bandit::rng::derive_stream;
use latent_bandit::Error;

const ERROR_SCHEMA: &str = "latent-bandit-error 1";

#[derive(Debug, Parser)]
#[command(name = "latent-bandit", version, about = "Synthetic contextual bandit experiments")]
struct Cli {
    /// Override the master seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every configured agent and write results.
    Run {
        config: PathBuf,
        /// Output directory; defaults to `<output_dir>/<name>` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reward-structure analyses only.
    Diagnose {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export or import environment dumps.
    #[command(subcommand)]
    Env(EnvCommand),
    /// Train and save, or load and evaluate, an agent checkpoint.
    #[command(subcommand)]
    Agent(AgentCommand),
    /// Regenerate aggregates and charts from raw.csv in a result directory.
    Replot { result_dir: PathBuf },
}

#[derive(Debug, Subcommand)]
enum EnvCommand {
    Export {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        repetition: usize,
    },
    Import { file: PathBuf },
}

#[derive(Debug, Subcommand)]
enum AgentCommand {
    Save {
        config: PathBuf,
        #[arg(long)]
        algorithm: Algorithm,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "full")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        repetition: usize,
        #[arg(long, default_value_t = 0)]
        seed_index: usize,
        /// Training steps; defaults to the config budget.
        #[arg(long)]
        steps: Option<u64>,
    },
    Load {
        file: PathBuf,
        /// Environment dump to evaluate the agent on.
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long, default_value = "full")]
        mode: Mode,
        #[arg(long, default_value_t = 512)]
        eval_states: usize,
    },
}

struct Failure {
    code: u8,
    kind: &'static str,
    key: Option<String>,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let key = match &e {
            Error::ConfigKey { key, .. } => Some(key.clone()),
            _ => None,
        };
        Failure {
            code: 1,
            kind: e.kind(),
            key,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 1,
        kind: "io",
        key: None,
        message: format!("{}: {e}", path.display()),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::parse(&read(path)?)?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn paths(files: &[PathBuf]) -> Value {
    files.iter().map(|p| p.display().to_string()).collect()
}

fn execute(cli: Cli) -> Result<Value, Failure> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load_config(&config, cli.seed)?;
            let dir = out.unwrap_or_else(|| Path::new(&cfg.output_dir).join(&cfg.name));
            let result = run_experiment(&cfg)?;
            let files = emit_results(&result, &dir)?;
            let failures = result.failures().count();
            if failures > 0 {
                return Err(Failure {
                    code: 3,
                    kind: "aborted",
                    key: None,
                    message: format!(
                        "{failures} of {} runs aborted; partial results in {}",
                        result.runs.len(),
                        dir.display()
                    ),
                });
            }
            Ok(json!({
                "command": "run",
                "config_hash": cfg.hash(),
                "master_seed": cfg.master_seed,
                "runs": result.runs.len(),
                "seconds": result.total_seconds,
                "files": paths(&files),
            }))
        }
        Command::Diagnose { config, out } => {
            let cfg = load_config(&config, cli.seed)?;
            let dir = out.unwrap_or_else(|| Path::new(&cfg.output_dir).join(format!("{}-diagnostics", cfg.name)));
            let diag = run_diagnostics(&cfg)?;
            let files = emit_diagnostics(&diag, &dir)?;
            let defined = diag.correlations.defined().count();
            Ok(json!({
                "command": "diagnose",
                "env_seed": diag.env_seed,
                "clusters": diag.correlations.clusters.len(),
                "defined": defined,
                "mean_rho": diag.correlations.mean_defined(),
                "files": paths(&files),
            }))
        }
        Command::Env(EnvCommand::Export { config, out, repetition }) => {
            let cfg = load_config(&config, cli.seed)?;
            let env = Arc::new(build_environment(&cfg, repetition)?);
            let clustered = if cfg.clustering.enabled {
                Some(fit_clustering(&cfg, repetition, env.clone())?)
            } else {
                None
            };
            let text = write_environment(&env, clustered.as_ref().map(|c| (c.model(), c.mode())));
            fs::write(&out, text).map_err(|e| io_failure(&out, e))?;
            Ok(json!({
                "command": "env export",
                "env_seed": env.config().seed,
                "clustered": clustered.is_some(),
                "file": out.display().to_string(),
            }))
        }
        Command::Env(EnvCommand::Import { file }) => {
            let bundle = read_environment(&read(&file)?)?;
            let c = bundle.env.config();
            Ok(json!({
                "command": "env import",
                "state_dim": c.state_dim,
                "action_dim": c.action_dim,
                "n_actions": c.n_actions,
                "latent_dim": c.latent_dim,
                "reward_arch": c.reward_arch,
                "seed": c.seed,
                "clusters": bundle.clusters.as_ref().map(|(m, _)| m.k()),
                "representation": bundle.clusters.as_ref().map(|(_, r)| r.to_string()),
            }))
        }
        Command::Agent(AgentCommand::Save {
            config,
            algorithm,
            out,
            mode,
            repetition,
            seed_index,
            steps,
        }) => {
            let cfg = load_config(&config, cli.seed)?;
            if repetition >= cfg.repetitions || seed_index >= cfg.agent_seeds {
                return Err(Error::IndexOutOfRange {
                    index: repetition.max(seed_index),
                    limit: cfg.repetitions.min(cfg.agent_seeds),
                }
                .into());
            }
            let ctx = prepare_repetition(&cfg, repetition, None)?;
            let key = RunKey {
                repetition,
                algorithm,
                mode,
                seed_index,
            };
            let steps = steps.unwrap_or(cfg.budget);
            let (record, agent) = run_worker(&cfg, &ctx, key, steps);
            let agent = match (agent, record.failure) {
                (Some(agent), None) => agent,
                (_, failure) => {
                    let f = failure.expect("worker without agent records a failure");
                    return Err(Failure {
                        code: 3,
                        kind: f.kind,
                        key: None,
                        message: f.message,
                    });
                }
            };
            fs::write(&out, write_agent(&agent)).map_err(|e| io_failure(&out, e))?;
            Ok(json!({
                "command": "agent save",
                "algorithm": algorithm.to_string(),
                "mode": mode.to_string(),
                "steps": agent.steps(),
                "updates": agent.updates(),
                "final_mean_R": record.records.last().map(|r| r.summary.mean),
                "file": out.display().to_string(),
            }))
        }
        Command::Agent(AgentCommand::Load {
            file,
            env,
            mode,
            eval_states,
        }) => {
            let agent = read_agent(&read(&file)?)?;
            let mut summary = json!({
                "command": "agent load",
                "algorithm": agent.algorithm().to_string(),
                "obs_dim": agent.config().obs_dim,
                "n_actions": agent.config().n_actions,
                "steps": agent.steps(),
                "updates": agent.updates(),
            });
            if let Some(env_path) = env {
                let bundle = read_environment(&read(&env_path)?)?;
                let base = Arc::new(bundle.env);
                let clustered;
                let task: &dyn BanditTask = match mode {
                    Mode::Full => base.as_ref(),
                    Mode::Clustered => {
                        let (model, repr) = bundle.clusters.ok_or_else(|| {
                            Error::InvalidConfig("environment dump has no cluster model".into())
                        })?;
                        clustered = ClusteredEnvironment::new(base.clone(), model, repr)?;
                        &clustered
                    }
                };
                let mut rng = derive_stream(cli.seed.unwrap_or(0), "cli/eval");
                let set = EvalSet::sample(&base, eval_states.max(1), &mut rng);
                let mut policy = &agent;
                let eval = evaluate_policy(&mut policy, task, &set, 1, &mut rng)?;
                summary["eval"] = json!({
                    "mean_R": eval.mean,
                    "min_R": eval.min,
                    "max_R": eval.max,
                    "n_excluded_states": eval.n_excluded,
                });
            }
            Ok(summary)
        }
        Command::Replot { result_dir } => {
            let files = replot(&result_dir)?;
            Ok(json!({ "command": "replot", "files": paths(&files) }))
        }
    }
}

fn report_failure(f: &Failure) -> ExitCode {
    let line = json!({
        "schema": ERROR_SCHEMA,
        "error": f.kind,
        "key": f.key,
        "message": f.message,
    });
    eprintln!("{line}");
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return report_failure(&Failure {
                code: 2,
                kind: "usage",
                key: None,
                message: e.kind().to_string(),
            });
        }
    };
    match execute(cli) {
        Ok(mut summary) => {
            summary["status"] = json!("ok");
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => report_failure(&f),
    }
}
