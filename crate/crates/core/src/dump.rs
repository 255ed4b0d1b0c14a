//! Plain-text dumps of environments, cluster models and agent checkpoints.
//!
//! Files are line oriented. The first line is `<magic> <version>`; blank
//! lines and lines starting with `#` are ignored. Numbers are written with
//! Rust's shortest round-trip float formatting, so write → read → write is
//! bit exact.
//!
//! ```text
//! latent-bandit-env 1
//! config state_dim=4 action_dim=3 n_actions=6 latent_dim=2 reward_arch=3,2 seed=9 gaussian_output=false
//! matrix actions 6 3
//! <6 lines of 3 numbers>
//! mlp state_extractor 2
//! layer 4 3 gaussian
//! <3 weight rows of 4 numbers>
//! <1 bias row of 3 numbers>
//! layer 3 2 linear
//! ...
//! mlp action_extractor 2
//! ...
//! clusters mode=centroid iterations=12 inertia=3.5 n_samples=200   (optional)
//! matrix centroids 5 4
//! ...
//! end
//! ```
//!
//! Agent checkpoints use magic `latent-bandit-agent` and contain an `agent`
//! line, one `params` line per algorithm, each network as an `mlp` block and
//! each optimizer as an `adam` line followed by two `moments` blocks.

use std::str::FromStr;

use crate::agents::{A2cParams, Agent, AgentConfig, Algorithm, DqnParams, PpoParams};
use crate::cluster::{ClusterModel, Representation};
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{AdamConfig, AdamState, GradientSet, Layer, LayerGradient, Mlp};

pub const ENV_MAGIC: &str = "latent-bandit-env";
pub const AGENT_MAGIC: &str = "latent-bandit-agent";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on any single dimension read from a file.
const MAX_DIM: usize = 1 << 20;

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")
}

fn join_usizes(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

struct Writer {
    out: String,
}

impl Writer {
    fn new(magic: &str) -> Self {
        Writer {
            out: format!("{magic} {FORMAT_VERSION}\n"),
        }
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.out.push_str(text.as_ref());
        self.out.push('\n');
    }

    fn matrix(&mut self, name: &str, m: &Matrix) {
        self.line(format!("matrix {name} {} {}", m.rows(), m.cols()));
        for row in m.iter_rows() {
            self.line(join_floats(row));
        }
    }

    fn mlp(&mut self, name: &str, net: &Mlp) {
        self.line(format!("mlp {name} {}", net.layers().len()));
        for layer in net.layers() {
            self.line(format!("layer {} {} {}", layer.in_dim(), layer.out_dim(), layer.activation()));
            for row in layer.weights().chunks(layer.in_dim()) {
                self.line(join_floats(row));
            }
            self.line(join_floats(layer.bias()));
        }
    }

    fn moments(&mut self, name: &str, grads: &GradientSet, net: &Mlp) {
        self.line(format!("moments {name} {}", grads.layers.len()));
        for (g, layer) in grads.layers.iter().zip(net.layers()) {
            self.line(format!("layer {} {}", layer.in_dim(), layer.out_dim()));
            for row in g.weights.chunks(layer.in_dim()) {
                self.line(join_floats(row));
            }
            self.line(join_floats(&g.bias));
        }
    }
}

/// Line cursor over a dump, skipping blanks and comments.
pub(crate) struct Reader<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Reader { lines, pos: 0 }
    }

    fn line_no(&self) -> usize {
        self.lines
            .get(self.pos)
            .or_else(|| self.lines.last())
            .map_or(0, |l| l.0)
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).map(|l| l.1)
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        let item = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::parse(self.line_no(), "unexpected end of input"))?;
        self.pos += 1;
        Ok(item)
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(line, msg)
    }

    fn header(&mut self, magic: &str) -> Result<()> {
        let (line, text) = self.next()?;
        let mut parts = text.split_whitespace();
        if parts.next() != Some(magic) {
            return Err(self.err(line, format!("expected `{magic}` header")));
        }
        match parts.next().map(str::parse::<u32>) {
            Some(Ok(FORMAT_VERSION)) if parts.next().is_none() => Ok(()),
            Some(Ok(v)) => Err(self.err(line, format!("unsupported version {v}"))),
            _ => Err(self.err(line, "malformed version")),
        }
    }

    /// Next line split into whitespace tokens, checking the leading keyword.
    fn keyword(&mut self, keyword: &str) -> Result<(usize, Vec<&'a str>)> {
        let (line, text) = self.next()?;
        let mut tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.first() != Some(&keyword) {
            return Err(self.err(line, format!("expected `{keyword}`")));
        }
        tokens.remove(0);
        Ok((line, tokens))
    }

    fn floats(&mut self, expected: usize) -> Result<Vec<f64>> {
        let (line, text) = self.next()?;
        let values = text
            .split_whitespace()
            .map(|t| parse_finite(t).ok_or_else(|| self.err(line, format!("bad number `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != expected {
            return Err(self.err(line, format!("expected {expected} numbers, found {}", values.len())));
        }
        Ok(values)
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix> {
        let (line, t) = self.keyword("matrix")?;
        if t.len() != 3 || t[0] != name {
            return Err(self.err(line, format!("expected `matrix {name} <rows> <cols>`")));
        }
        let rows = parse_dim(t[1], line)?;
        let cols = parse_dim(t[2], line)?;
        let mut m = Matrix::zeros(0, cols);
        for _ in 0..rows {
            m.push_row(&self.floats(cols)?)?;
        }
        if rows == 0 {
            m = Matrix::zeros(0, cols);
        }
        Ok(m)
    }

    fn layer_block(&mut self, with_activation: bool) -> Result<(usize, usize, Option<&'a str>, Vec<f64>, Vec<f64>)> {
        let (line, t) = self.keyword("layer")?;
        let arity = if with_activation { 3 } else { 2 };
        if t.len() != arity {
            return Err(self.err(line, "malformed layer header"));
        }
        let in_dim = parse_dim(t[0], line)?;
        let out_dim = parse_dim(t[1], line)?;
        let mut weights = Vec::new();
        for _ in 0..out_dim {
            weights.extend(self.floats(in_dim)?);
        }
        let bias = self.floats(out_dim)?;
        Ok((in_dim, out_dim, t.get(2).copied(), weights, bias))
    }

    fn mlp(&mut self, name: &str) -> Result<Mlp> {
        let (line, t) = self.keyword("mlp")?;
        if t.len() != 2 || t[0] != name {
            return Err(self.err(line, format!("expected `mlp {name} <layers>`")));
        }
        let n = parse_dim(t[1], line)?;
        let mut layers = Vec::new();
        for _ in 0..n {
            let line = self.line_no();
            let (in_dim, out_dim, act, weights, bias) = self.layer_block(true)?;
            let activation = act
                .expect("arity checked")
                .parse()
                .map_err(|e: String| self.err(line, e))?;
            layers.push(Layer::new(in_dim, out_dim, weights, bias, activation)?);
        }
        Mlp::from_layers(layers)
    }

    fn moments(&mut self, name: &str, net: &Mlp) -> Result<GradientSet> {
        let (line, t) = self.keyword("moments")?;
        if t.len() != 2 || t[0] != name {
            return Err(self.err(line, format!("expected `moments {name} <layers>`")));
        }
        let n = parse_dim(t[1], line)?;
        if n != net.layers().len() {
            return Err(self.err(line, "moment layer count does not match network"));
        }
        let mut layers = Vec::new();
        for layer in net.layers() {
            let line = self.line_no();
            let (in_dim, out_dim, _, weights, bias) = self.layer_block(false)?;
            if (in_dim, out_dim) != (layer.in_dim(), layer.out_dim()) {
                return Err(self.err(line, "moment shape does not match network"));
            }
            layers.push(LayerGradient { weights, bias });
        }
        Ok(GradientSet { layers })
    }

    fn end(&mut self) -> Result<()> {
        let (line, text) = self.next()?;
        if text != "end" {
            return Err(self.err(line, "expected `end`"));
        }
        if let Some(&(line, _)) = self.lines.get(self.pos) {
            return Err(self.err(line, "trailing content after `end`"));
        }
        Ok(())
    }
}

fn parse_finite(token: &str) -> Option<f64> {
    token.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_dim(token: &str, line: usize) -> Result<usize> {
    match token.parse::<usize>() {
        Ok(v) if v <= MAX_DIM => Ok(v),
        Ok(v) => Err(Error::parse(line, format!("dimension {v} exceeds limit {MAX_DIM}"))),
        Err(_) => Err(Error::parse(line, format!("bad dimension `{token}`"))),
    }
}

/// `key=value` tokens of one line; every key must be consumed exactly once.
pub(crate) struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
    used: Vec<bool>,
}

impl<'a> Fields<'a> {
    pub(crate) fn parse(line: usize, tokens: &[&'a str]) -> Result<Self> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(line, format!("expected key=value, got `{tok}`")))?;
            if pairs.iter().any(|(seen, _)| *seen == k) {
                return Err(Error::parse(line, format!("duplicate key `{k}`")));
            }
            pairs.push((k, v));
        }
        let used = vec![false; pairs.len()];
        Ok(Fields { line, pairs, used })
    }

    pub(crate) fn get<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let idx = self
            .pairs
            .iter()
            .position(|(k, _)| *k == key)
            .ok_or_else(|| Error::parse(self.line, format!("missing key `{key}`")))?;
        self.used[idx] = true;
        let raw = self.pairs[idx].1;
        raw.parse()
            .map_err(|_| Error::parse(self.line, format!("bad value `{raw}` for `{key}`")))
    }

    fn get_f64(&mut self, key: &str) -> Result<f64> {
        let v: f64 = self.get(key)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::parse(self.line, format!("non-finite value for `{key}`")))
        }
    }

    fn get_list(&mut self, key: &str) -> Result<Vec<usize>> {
        let raw: String = self.get(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|t| parse_dim(t, self.line))
            .collect()
    }

    pub(crate) fn finish(self) -> Result<()> {
        match self.pairs.iter().zip(&self.used).find(|(_, u)| !**u) {
            Some(((k, _), _)) => Err(Error::parse(self.line, format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

/// An environment, optionally with the cluster model used to abstract it.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvBundle {
    pub env: Environment,
    pub clusters: Option<(ClusterModel, Representation)>,
}

pub fn write_environment(env: &Environment, clusters: Option<(&ClusterModel, Representation)>) -> String {
    let mut w = Writer::new(ENV_MAGIC);
    let c = env.config();
    w.line(format!(
        "config state_dim={} action_dim={} n_actions={} latent_dim={} reward_arch={} seed={} gaussian_output={}",
        c.state_dim,
        c.action_dim,
        c.n_actions,
        c.latent_dim,
        join_usizes(&c.reward_arch),
        c.seed,
        c.gaussian_output
    ));
    w.matrix("actions", env.actions());
    w.mlp("state_extractor", env.state_extractor());
    w.mlp("action_extractor", env.action_extractor());
    if let Some((model, mode)) = clusters {
        w.line(format!(
            "clusters mode={mode} iterations={} inertia={} n_samples={}",
            model.iterations(),
            fmt_f64(model.inertia()),
            model.n_samples()
        ));
        w.matrix("centroids", model.centroids());
    }
    w.line("end");
    w.out
}

pub fn read_environment(text: &str) -> Result<EnvBundle> {
    let mut r = Reader::new(text);
    r.header(ENV_MAGIC)?;
    let (line, tokens) = r.keyword("config")?;
    let mut f = Fields::parse(line, &tokens)?;
    let config = EnvConfig {
        state_dim: f.get("state_dim")?,
        action_dim: f.get("action_dim")?,
        n_actions: f.get("n_actions")?,
        latent_dim: f.get("latent_dim")?,
        reward_arch: f.get_list("reward_arch")?,
        seed: f.get("seed")?,
        gaussian_output: f.get("gaussian_output")?,
    };
    f.finish()?;
    config.validate()?;
    let actions = r.matrix("actions")?;
    let fs = r.mlp("state_extractor")?;
    let fa = r.mlp("action_extractor")?;
    let env = Environment::from_parts(config, actions, fs, fa)?;
    let clusters = if r.peek().is_some_and(|l| l.starts_with("clusters")) {
        let (line, tokens) = r.keyword("clusters")?;
        let mut f = Fields::parse(line, &tokens)?;
        let mode: Representation = f.get("mode")?;
        let iterations: usize = f.get("iterations")?;
        let inertia = f.get_f64("inertia")?;
        let n_samples: usize = f.get("n_samples")?;
        f.finish()?;
        let centroids = r.matrix("centroids")?;
        if centroids.cols() != env.state_dim() {
            return Err(Error::parse(line, "centroid width does not match state_dim"));
        }
        Some((
            ClusterModel::from_centroids(centroids, iterations, inertia, n_samples)?,
            mode,
        ))
    } else {
        None
    };
    r.end()?;
    Ok(EnvBundle { env, clusters })
}

pub fn write_agent(agent: &Agent) -> String {
    let mut w = Writer::new(AGENT_MAGIC);
    let c = agent.config();
    w.line(format!(
        "agent algorithm={} hidden={} obs_dim={} n_actions={} seed={} steps={} updates={}",
        c.algorithm,
        join_usizes(&c.hidden),
        c.obs_dim,
        c.n_actions,
        c.seed,
        agent.steps(),
        agent.updates()
    ));
    let d = &c.dqn;
    w.line(format!(
        "params dqn learning_rate={} buffer_capacity={} batch_size={} learning_starts={} train_freq={} \
         exploration_initial={} exploration_final={} exploration_fraction={} total_timesteps={} max_grad_norm={}",
        fmt_f64(d.learning_rate),
        d.buffer_capacity,
        d.batch_size,
        d.learning_starts,
        d.train_freq,
        fmt_f64(d.exploration_initial),
        fmt_f64(d.exploration_final),
        fmt_f64(d.exploration_fraction),
        d.total_timesteps,
        fmt_f64(d.max_grad_norm)
    ));
    let a = &c.a2c;
    w.line(format!(
        "params a2c learning_rate={} n_steps={} vf_coef={} ent_coef={} max_grad_norm={}",
        fmt_f64(a.learning_rate),
        a.n_steps,
        fmt_f64(a.vf_coef),
        fmt_f64(a.ent_coef),
        fmt_f64(a.max_grad_norm)
    ));
    let p = &c.ppo;
    w.line(format!(
        "params ppo learning_rate={} n_steps={} batch_size={} n_epochs={} clip_range={} vf_coef={} \
         ent_coef={} max_grad_norm={} normalize_advantage={}",
        fmt_f64(p.learning_rate),
        p.n_steps,
        p.batch_size,
        p.n_epochs,
        fmt_f64(p.clip_range),
        fmt_f64(p.vf_coef),
        fmt_f64(p.ent_coef),
        fmt_f64(p.max_grad_norm),
        p.normalize_advantage
    ));
    for ((name, net), opt) in agent.networks().into_iter().zip(agent.optimizers()) {
        w.mlp(name, net);
        let oc = opt.config;
        w.line(format!(
            "adam {name} learning_rate={} beta1={} beta2={} epsilon={} step={}",
            fmt_f64(oc.learning_rate),
            fmt_f64(oc.beta1),
            fmt_f64(oc.beta2),
            fmt_f64(oc.epsilon),
            opt.step
        ));
        w.moments("first", &opt.first_moment, net);
        w.moments("second", &opt.second_moment, net);
    }
    w.line("end");
    w.out
}

fn params_line<'a>(r: &mut Reader<'a>, name: &str) -> Result<Fields<'a>> {
    let (line, tokens) = r.keyword("params")?;
    if tokens.first() != Some(&name) {
        return Err(Error::parse(line, format!("expected `params {name}`")));
    }
    Fields::parse(line, &tokens[1..])
}

pub fn read_agent(text: &str) -> Result<Agent> {
    let mut r = Reader::new(text);
    r.header(AGENT_MAGIC)?;
    let (line, tokens) = r.keyword("agent")?;
    let mut f = Fields::parse(line, &tokens)?;
    let algorithm: Algorithm = f.get("algorithm")?;
    let hidden = f.get_list("hidden")?;
    let obs_dim = parse_dim(&f.get::<String>("obs_dim")?, line)?;
    let n_actions = parse_dim(&f.get::<String>("n_actions")?, line)?;
    let seed: u64 = f.get("seed")?;
    let steps: u64 = f.get("steps")?;
    let updates: u64 = f.get("updates")?;
    f.finish()?;

    let mut f = params_line(&mut r, "dqn")?;
    let dqn = DqnParams {
        learning_rate: f.get_f64("learning_rate")?,
        buffer_capacity: parse_dim(&f.get::<String>("buffer_capacity")?, line)?,
        batch_size: parse_dim(&f.get::<String>("batch_size")?, line)?,
        learning_starts: f.get("learning_starts")?,
        train_freq: f.get("train_freq")?,
        exploration_initial: f.get_f64("exploration_initial")?,
        exploration_final: f.get_f64("exploration_final")?,
        exploration_fraction: f.get_f64("exploration_fraction")?,
        total_timesteps: f.get("total_timesteps")?,
        max_grad_norm: f.get_f64("max_grad_norm")?,
    };
    f.finish()?;
    let mut f = params_line(&mut r, "a2c")?;
    let a2c = A2cParams {
        learning_rate: f.get_f64("learning_rate")?,
        n_steps: parse_dim(&f.get::<String>("n_steps")?, line)?,
        vf_coef: f.get_f64("vf_coef")?,
        ent_coef: f.get_f64("ent_coef")?,
        max_grad_norm: f.get_f64("max_grad_norm")?,
    };
    f.finish()?;
    let mut f = params_line(&mut r, "ppo")?;
    let ppo = PpoParams {
        learning_rate: f.get_f64("learning_rate")?,
        n_steps: parse_dim(&f.get::<String>("n_steps")?, line)?,
        batch_size: parse_dim(&f.get::<String>("batch_size")?, line)?,
        n_epochs: parse_dim(&f.get::<String>("n_epochs")?, line)?,
        clip_range: f.get_f64("clip_range")?,
        vf_coef: f.get_f64("vf_coef")?,
        ent_coef: f.get_f64("ent_coef")?,
        max_grad_norm: f.get_f64("max_grad_norm")?,
        normalize_advantage: f.get("normalize_advantage")?,
    };
    f.finish()?;

    let config = AgentConfig {
        algorithm,
        hidden,
        obs_dim,
        n_actions,
        seed,
        dqn,
        a2c,
        ppo,
    };
    config.validate()?;
    let names: &[&str] = match algorithm {
        Algorithm::Uniform => &[],
        Algorithm::Dqn => &["q"],
        Algorithm::A2c | Algorithm::Ppo => &["actor", "critic"],
    };
    let mut networks = Vec::new();
    let mut optimizers = Vec::new();
    for name in names {
        let net = r.mlp(name)?;
        let (line, tokens) = r.keyword("adam")?;
        if tokens.first() != Some(name) {
            return Err(Error::parse(line, format!("expected `adam {name}`")));
        }
        let mut f = Fields::parse(line, &tokens[1..])?;
        let adam_config = AdamConfig {
            learning_rate: f.get_f64("learning_rate")?,
            beta1: f.get_f64("beta1")?,
            beta2: f.get_f64("beta2")?,
            epsilon: f.get_f64("epsilon")?,
        };
        let step: u64 = f.get("step")?;
        f.finish()?;
        let first_moment = r.moments("first", &net)?;
        let second_moment = r.moments("second", &net)?;
        optimizers.push(AdamState {
            config: adam_config,
            first_moment,
            second_moment,
            step,
        });
        networks.push(net);
    }
    r.end()?;
    Agent::restore(config, networks, optimizers, steps, updates)
}
