//! Synthetic personalization environments.
//!
//! States live on `[-1, 1]^d_S` and are drawn uniformly. A fixed set of
//! actions is drawn uniformly from `[-1, 1]^d_A`. Two randomly initialized
//! extractor networks map states and actions into a shared latent space and
//! the reward is the cosine similarity of the two latent vectors.

use crate::error::{check_dim, Error, Result};
use crate::matrix::{dot, Matrix};
use crate::nn::{Activation, Mlp, WeightInit};
use crate::rng::{derive_stream, RngStream};

/// Latent vectors with an L2 norm below this are rejected by the reward.
pub const MIN_FEATURE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub n_actions: usize,
    pub latent_dim: usize,
    /// Widths of every extractor layer; the last one must equal `latent_dim`.
    pub reward_arch: Vec<usize>,
    pub seed: u64,
    /// Apply the gaussian activation on the final extractor layer as well.
    pub gaussian_output: bool,
}

impl EnvConfig {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        n_actions: usize,
        latent_dim: usize,
        reward_arch: Vec<usize>,
        seed: u64,
    ) -> Self {
        EnvConfig {
            state_dim,
            action_dim,
            n_actions,
            latent_dim,
            reward_arch,
            seed,
            gaussian_output: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("state_dim", self.state_dim),
            ("action_dim", self.action_dim),
            ("n_actions", self.n_actions),
            ("latent_dim", self.latent_dim),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        match self.reward_arch.last() {
            None => return Err(Error::InvalidConfig("reward_arch is empty".into())),
            Some(&last) if last != self.latent_dim => {
                return Err(Error::InvalidConfig(format!(
                    "last reward_arch width {last} must equal latent_dim {}",
                    self.latent_dim
                )))
            }
            _ => {}
        }
        if self.reward_arch.contains(&0) {
            return Err(Error::InvalidConfig("reward_arch widths must be positive".into()));
        }
        Ok(())
    }

    fn extractor_activations(&self) -> Vec<Activation> {
        let mut acts = vec![Activation::Gaussian; self.reward_arch.len()];
        if !self.gaussian_output {
            *acts.last_mut().expect("validated non-empty") = Activation::Linear;
        }
        acts
    }
}

/// A latent feature vector produced by an extractor (after `tanh`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Cosine similarity of two vectors, guarded against near-zero norms.
///
/// Computed as `<x, y> / sqrt(|x|^2 |y|^2)` which returns exactly `1` for
/// identical and `-1` for negated inputs.
pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim("cosine similarity", x.len(), y.len())?;
    let xx = dot(x, x);
    let yy = dot(y, y);
    for sq in [xx, yy] {
        if !sq.is_finite() {
            return Err(Error::NonFinite("latent feature"));
        }
        if sq.sqrt() < MIN_FEATURE_NORM {
            return Err(Error::DegenerateFeature { norm: sq.sqrt() });
        }
    }
    let cos = dot(x, y) / (xx * yy).sqrt();
    Ok(cos.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    config: EnvConfig,
    actions: Matrix,
    state_extractor: Mlp,
    action_extractor: Mlp,
    action_features: Vec<LatentVector>,
}

impl Environment {
    /// Build an environment from its config. Actions, state extractor and
    /// action extractor use streams derived from `cfg.seed` with labels
    /// `"actions"`, `"fs"` and `"fa"`.
    pub fn build(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let mut action_rng = derive_stream(cfg.seed, "actions");
        let mut actions = Matrix::zeros(cfg.n_actions, cfg.action_dim);
        for j in 0..cfg.n_actions {
            for v in actions.row_mut(j) {
                *v = action_rng.uniform_in(-1.0, 1.0);
            }
        }
        let acts = cfg.extractor_activations();
        let mut state_sizes = vec![cfg.state_dim];
        state_sizes.extend_from_slice(&cfg.reward_arch);
        let mut action_sizes = vec![cfg.action_dim];
        action_sizes.extend_from_slice(&cfg.reward_arch);
        let state_extractor = Mlp::init(
            &state_sizes,
            &acts,
            WeightInit::StandardNormal,
            &mut derive_stream(cfg.seed, "fs"),
        )?;
        let action_extractor = Mlp::init(
            &action_sizes,
            &acts,
            WeightInit::StandardNormal,
            &mut derive_stream(cfg.seed, "fa"),
        )?;
        Environment::from_parts(cfg, actions, state_extractor, action_extractor)
    }

    /// Assemble an environment from explicit components (imports and test
    /// fixtures). The action-feature cache is filled here.
    pub fn from_parts(
        config: EnvConfig,
        actions: Matrix,
        state_extractor: Mlp,
        action_extractor: Mlp,
    ) -> Result<Self> {
        if config.state_dim == 0 || config.action_dim == 0 || config.n_actions == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        check_dim("action count", config.n_actions, actions.rows())?;
        check_dim("action dim", config.action_dim, actions.cols())?;
        check_dim("state extractor input", config.state_dim, state_extractor.input_dim())?;
        check_dim("action extractor input", config.action_dim, action_extractor.input_dim())?;
        check_dim("state extractor output", config.latent_dim, state_extractor.output_dim())?;
        check_dim("action extractor output", config.latent_dim, action_extractor.output_dim())?;
        if actions.as_slice().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("action entries must lie in [-1, 1]".into()));
        }
        let action_features = actions
            .iter_rows()
            .map(|a| latent(&action_extractor, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Environment {
            config,
            actions,
            state_extractor,
            action_extractor,
            action_features,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.config.n_actions
    }

    pub fn actions(&self) -> &Matrix {
        &self.actions
    }

    pub fn state_extractor(&self) -> &Mlp {
        &self.state_extractor
    }

    pub fn action_extractor(&self) -> &Mlp {
        &self.action_extractor
    }

    /// Uniform draw from `[-1, 1]^d_S`.
    pub fn sample_state(&self, rng: &mut RngStream) -> Vec<f64> {
        (0..self.config.state_dim)
            .map(|_| rng.uniform_in(-1.0, 1.0))
            .collect()
    }

    pub fn extract_state_features(&self, s: &[f64]) -> Result<LatentVector> {
        check_dim("state", self.config.state_dim, s.len())?;
        latent(&self.state_extractor, s)
    }

    pub fn extract_action_features(&self, j: usize) -> Result<&LatentVector> {
        self.action_features.get(j).ok_or(Error::IndexOutOfRange {
            index: j,
            limit: self.config.n_actions,
        })
    }

    /// All cached action features, one row per action.
    pub fn action_feature_matrix(&self) -> Matrix {
        let rows: Vec<Vec<f64>> = self.action_features.iter().map(|f| f.0.clone()).collect();
        Matrix::from_rows(&rows).expect("uniform latent width")
    }

    pub fn reward(&self, s: &[f64], j: usize) -> Result<f64> {
        let state = self.extract_state_features(s)?;
        let action = self.extract_action_features(j)?;
        cosine_similarity(&state.0, &action.0)
    }

    pub fn reward_vector(&self, s: &[f64]) -> Result<Vec<f64>> {
        let state = self.extract_state_features(s)?;
        self.action_features
            .iter()
            .map(|a| cosine_similarity(&state.0, &a.0))
            .collect()
    }
}

/// What an agent sees of the environment. Rewards always come from
/// [`BanditTask::base`] evaluated on the true state.
pub trait BanditTask: Send + Sync {
    fn base(&self) -> &Environment;

    fn obs_dim(&self) -> usize;

    fn observe(&self, state: &[f64]) -> Result<Vec<f64>>;

    fn n_actions(&self) -> usize {
        self.base().n_actions()
    }

    fn reward(&self, state: &[f64], action: usize) -> Result<f64> {
        self.base().reward(state, action)
    }
}

impl BanditTask for Environment {
    fn base(&self) -> &Environment {
        self
    }

    fn obs_dim(&self) -> usize {
        self.config.state_dim
    }

    fn observe(&self, state: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.config.state_dim, state.len())?;
        Ok(state.to_vec())
    }
}

fn latent(net: &Mlp, x: &[f64]) -> Result<LatentVector> {
    let out = net.predict(x)?;
    Ok(LatentVector(out.into_iter().map(f64::tanh).collect()))
}
