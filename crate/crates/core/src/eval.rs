//! Oracle policies and the normalized return.
//!
//! For a state `s` with reward vector `r(s, .)`, the random value is the mean
//! reward, the optimal value is the maximum, and the normalized return of an
//! action `a` is `(r(s, a) - mean) / (max - mean)`.

use crate::agents::Agent;
use crate::env::{BanditTask, Environment};
use crate::error::{Error, Result};
use crate::matrix::{argmax, Matrix};
use crate::rng::RngStream;

/// Denominators at or below this make the normalized return undefined.
pub const MIN_VALUE_GAP: f64 = 1e-12;

/// Tolerance on the optimality bound of normalized returns.
pub const OPTIMALITY_SLACK: f64 = 1e-12;

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Expected reward of the uniformly random policy at `s`.
pub fn random_value(env: &Environment, s: &[f64]) -> Result<f64> {
    Ok(mean(&env.reward_vector(s)?))
}

/// Best achievable reward at `s` and the lowest index attaining it.
pub fn optimal_value(env: &Environment, s: &[f64]) -> Result<(f64, usize)> {
    let rewards = env.reward_vector(s)?;
    let best = argmax(&rewards);
    Ok((rewards[best], best))
}

/// Normalized return of an action given the full reward vector of a state.
pub fn normalized_from_rewards(rewards: &[f64], action: usize) -> Result<f64> {
    let chosen = *rewards.get(action).ok_or(Error::IndexOutOfRange {
        index: action,
        limit: rewards.len(),
    })?;
    let baseline = mean(rewards);
    let best = rewards[argmax(rewards)];
    let gap = best - baseline;
    if !(gap > MIN_VALUE_GAP) {
        return Err(Error::DegenerateDenominator);
    }
    if chosen == best {
        return Ok(1.0);
    }
    Ok((chosen - baseline) / gap)
}

pub fn normalized_return(env: &Environment, s: &[f64], action: usize) -> Result<f64> {
    normalized_from_rewards(&env.reward_vector(s)?, action)
}

/// Anything that can pick an action from an observation for evaluation.
pub trait Policy {
    fn select(&mut self, obs: &[f64], rng: &mut RngStream) -> Result<usize>;
}

/// Agents are evaluated greedily.
impl Policy for Agent {
    fn select(&mut self, obs: &[f64], rng: &mut RngStream) -> Result<usize> {
        self.act(obs, rng, false)
    }
}

impl Policy for &Agent {
    fn select(&mut self, obs: &[f64], rng: &mut RngStream) -> Result<usize> {
        self.act(obs, rng, false)
    }
}

/// Treats the observation as a state of `env` and plays its best action.
pub struct OraclePolicy<'a> {
    pub env: &'a Environment,
}

impl Policy for OraclePolicy<'_> {
    fn select(&mut self, obs: &[f64], _rng: &mut RngStream) -> Result<usize> {
        Ok(optimal_value(self.env, obs)?.1)
    }
}

/// Frozen set of evaluation states.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub states: Matrix,
    pub seed: u64,
}

impl EvalSet {
    pub fn sample(env: &Environment, n: usize, rng: &mut RngStream) -> Self {
        let mut states = Matrix::zeros(0, env.state_dim());
        for _ in 0..n {
            states
                .push_row(&env.sample_state(rng))
                .expect("state width matches");
        }
        EvalSet {
            states,
            seed: rng.seed(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }
}

/// Aggregate normalized-return statistics at one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Number of scored (state, draw) pairs.
    pub n_scored: usize,
    /// States excluded because the normalized return is undefined there.
    pub n_excluded: usize,
}

/// Reward vectors of an eval set, computed once and reused across evaluations.
#[derive(Debug, Clone)]
pub struct EvalCache {
    rewards: Vec<Option<Vec<f64>>>,
}

impl EvalCache {
    pub fn new(env: &Environment, set: &EvalSet) -> Result<Self> {
        let rewards = set
            .states
            .iter_rows()
            .map(|s| {
                let r = env.reward_vector(s)?;
                let gap = r[argmax(&r)] - mean(&r);
                Ok((gap > MIN_VALUE_GAP).then_some(r))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalCache { rewards })
    }

    /// Number of states whose normalized return is undefined.
    pub fn excluded(&self) -> usize {
        self.rewards.iter().filter(|r| r.is_none()).count()
    }
}

/// Score a policy on every eval state (its observation through `task`, the
/// reward on the true state), `draws_per_state` times per state.
pub fn evaluate_policy(
    policy: &mut dyn Policy,
    task: &dyn BanditTask,
    set: &EvalSet,
    draws_per_state: usize,
    rng: &mut RngStream,
) -> Result<EvalSummary> {
    let cache = EvalCache::new(task.base(), set)?;
    evaluate_cached(policy, task, set, &cache, draws_per_state, rng)
}

pub fn evaluate_cached(
    policy: &mut dyn Policy,
    task: &dyn BanditTask,
    set: &EvalSet,
    cache: &EvalCache,
    draws_per_state: usize,
    rng: &mut RngStream,
) -> Result<EvalSummary> {
    let mut total = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut n_scored = 0usize;
    let mut n_excluded = 0usize;
    for (s, rewards) in set.states.iter_rows().zip(&cache.rewards) {
        let Some(rewards) = rewards else {
            n_excluded += 1;
            continue;
        };
        let obs = task.observe(s)?;
        for _ in 0..draws_per_state.max(1) {
            let action = policy.select(&obs, rng)?;
            let value = normalized_from_rewards(rewards, action)?;
            debug_assert!(value <= 1.0 + OPTIMALITY_SLACK);
            total += value;
            lo = lo.min(value);
            hi = hi.max(value);
            n_scored += 1;
        }
    }
    if n_scored == 0 {
        return Err(Error::DegenerateDenominator);
    }
    Ok(EvalSummary {
        mean: total / n_scored as f64,
        min: lo,
        max: hi,
        n_scored,
        n_excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_action_fixture() {
        let r = [0.2, 0.8];
        assert_eq!(mean(&r), 0.5);
        assert_eq!(normalized_from_rewards(&r, 1).unwrap(), 1.0);
        let worse = normalized_from_rewards(&r, 0).unwrap();
        assert!((worse - (-1.0)).abs() < 1e-15, "{worse}");
    }

    #[test]
    fn three_action_fixture() {
        let r = [-0.5, 0.1, 0.7];
        assert_eq!(argmax(&r), 2);
        assert_eq!(normalized_from_rewards(&r, 2).unwrap(), 1.0);
    }

    #[test]
    fn chosen_equal_to_mean_is_zero() {
        let r = [0.0, 0.5, 1.0];
        assert_eq!(normalized_from_rewards(&r, 1).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_gap_is_an_error() {
        assert!(matches!(
            normalized_from_rewards(&[0.3, 0.3, 0.3], 0),
            Err(Error::DegenerateDenominator)
        ));
        assert!(matches!(
            normalized_from_rewards(&[0.3], 0),
            Err(Error::DegenerateDenominator)
        ));
        assert!(normalized_from_rewards(&[0.1, 0.2], 2).is_err());
    }

    #[test]
    fn ties_resolve_low() {
        let r = [0.4, 0.4, 0.4];
        assert_eq!(argmax(&r), 0);
    }
}
