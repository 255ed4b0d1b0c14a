//! Reward-structure diagnostics: rewards of nearly identical states, and the
//! per-cluster correlation between state distances and reward distances.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::cluster::{kmeans_fit, ClusterModel, KMeansParams};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngStream;

/// Rewards on the first `n_actions_shown` actions for `n_states` states whose
/// coordinates are drawn from `N(0, sigma^2)`. One row per state.
pub fn adjacent_state_reward_table(
    env: &Environment,
    n_states: usize,
    n_actions_shown: usize,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<Matrix> {
    if n_actions_shown > env.n_actions() {
        return Err(Error::IndexOutOfRange {
            index: n_actions_shown,
            limit: env.n_actions(),
        });
    }
    let mut table = Matrix::zeros(n_states, n_actions_shown);
    for i in 0..n_states {
        let s: Vec<f64> = (0..env.state_dim()).map(|_| rng.normal(0.0, sigma)).collect();
        for j in 0..n_actions_shown {
            table.row_mut(i)[j] = env.reward(&s, j)?;
        }
    }
    Ok(table)
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "pearson",
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx / (n - 1.0) <= 1e-18 || syy / (n - 1.0) <= 1e-18 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceNorm {
    L1,
    #[default]
    L2,
    LInf,
}

impl DistanceNorm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            DistanceNorm::L1 => diffs.sum(),
            DistanceNorm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            DistanceNorm::LInf => diffs.fold(0.0, f64::max),
        }
    }
}

impl fmt::Display for DistanceNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceNorm::L1 => "l1",
            DistanceNorm::L2 => "l2",
            DistanceNorm::LInf => "linf",
        })
    }
}

impl FromStr for DistanceNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l1" => Ok(DistanceNorm::L1),
            "l2" | "euclidean" => Ok(DistanceNorm::L2),
            "linf" | "max" => Ok(DistanceNorm::LInf),
            other => Err(format!("unknown norm `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UndefinedReason {
    TooFewMembers,
    ZeroVariance,
}

impl fmt::Display for UndefinedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UndefinedReason::TooFewMembers => "too_few_members",
            UndefinedReason::ZeroVariance => "zero_variance",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCorrelation {
    pub cluster: usize,
    pub members: usize,
    pub pairs: usize,
    pub rho: Result<f64, UndefinedReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub clusters: Vec<ClusterCorrelation>,
    pub norm: DistanceNorm,
}

impl CorrelationReport {
    pub fn defined(&self) -> impl Iterator<Item = f64> + '_ {
        self.clusters.iter().filter_map(|c| c.rho.ok())
    }

    /// Mean over defined entries, `None` if every entry is undefined.
    pub fn mean_defined(&self) -> Option<f64> {
        let values: Vec<f64> = self.defined().collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Correlation of within-cluster state distances and reward-vector distances
/// for an existing clustering of `states`. Pairs are unordered, without
/// self-pairs.
pub fn cluster_correlations(
    env: &Environment,
    states: &Matrix,
    model: &ClusterModel,
    norm: DistanceNorm,
) -> Result<CorrelationReport> {
    let rewards = states
        .iter_rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|s| env.reward_vector(s))
        .collect::<Result<Vec<_>>>()?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); model.k()];
    for (i, s) in states.iter_rows().enumerate() {
        members[model.assign(s)?].push(i);
    }
    let clusters = members
        .par_iter()
        .enumerate()
        .map(|(cluster, idx)| {
            let n = idx.len();
            let pairs = n * n.saturating_sub(1) / 2;
            if n < 2 {
                return ClusterCorrelation {
                    cluster,
                    members: n,
                    pairs,
                    rho: Err(UndefinedReason::TooFewMembers),
                };
            }
            let mut state_d = Vec::with_capacity(pairs);
            let mut reward_d = Vec::with_capacity(pairs);
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[a + 1..] {
                    state_d.push(norm.distance(states.row(i), states.row(j)));
                    reward_d.push(norm.distance(&rewards[i], &rewards[j]));
                }
            }
            ClusterCorrelation {
                cluster,
                members: n,
                pairs,
                rho: pearson(&state_d, &reward_d).map_err(|_| UndefinedReason::ZeroVariance),
            }
        })
        .collect();
    Ok(CorrelationReport { clusters, norm })
}

/// Sample `n_samples` uniform states, cluster them with k-means and report
/// the per-cluster correlations.
pub fn cluster_reward_correlation(
    env: &Environment,
    n_samples: usize,
    k: usize,
    norm: DistanceNorm,
    rng: &mut RngStream,
) -> Result<CorrelationReport> {
    if n_samples < k {
        return Err(Error::InsufficientPoints {
            needed: k,
            available: n_samples,
        });
    }
    let mut states = Matrix::zeros(0, env.state_dim());
    for _ in 0..n_samples {
        states.push_row(&env.sample_state(rng))?;
    }
    let model = kmeans_fit(&states, &KMeansParams::new(k), rng)?;
    cluster_correlations(env, &states, &model, norm)
}
