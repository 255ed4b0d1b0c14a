//! Plain Lloyd k-means with Forgy initialization, and the clustered
//! environment wrapper that abstracts what agents observe.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::env::{BanditTask, Environment};
use crate::error::{check_dim, Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the largest centroid displacement falls below this.
    pub tol: f64,
    /// Independent Forgy restarts; the lowest-inertia fit wins.
    pub restarts: usize,
}

impl KMeansParams {
    pub fn new(k: usize) -> Self {
        KMeansParams {
            k,
            max_iter: 100,
            tol: 1e-6,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    centroids: Matrix,
    iterations: usize,
    inertia: f64,
    n_samples: usize,
    inertia_history: Vec<f64>,
}

impl ClusterModel {
    /// Wrap explicit centroids (imports, fixtures).
    pub fn from_centroids(
        centroids: Matrix,
        iterations: usize,
        inertia: f64,
        n_samples: usize,
    ) -> Result<Self> {
        if centroids.rows() == 0 || centroids.cols() == 0 {
            return Err(Error::InvalidConfig("cluster model needs centroids".into()));
        }
        Ok(ClusterModel {
            centroids,
            iterations,
            inertia,
            n_samples,
            inertia_history: vec![inertia],
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        self.centroids.row(i)
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Inertia after each assignment step, ending with the final fit.
    pub fn inertia_history(&self) -> &[f64] {
        &self.inertia_history
    }

    /// Nearest centroid by Euclidean distance; ties go to the lowest index.
    pub fn assign(&self, point: &[f64]) -> Result<usize> {
        check_dim("cluster assignment", self.dim(), point.len())?;
        Ok(nearest(&self.centroids, point).0)
    }
}

fn nearest(centroids: &Matrix, point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter_rows().enumerate() {
        let d = squared_distance(c, point);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign_all(centroids: &Matrix, points: &Matrix) -> Vec<(usize, f64)> {
    (0..points.rows())
        .into_par_iter()
        .map(|i| nearest(centroids, points.row(i)))
        .collect()
}

pub fn kmeans_fit(points: &Matrix, params: &KMeansParams, rng: &mut RngStream) -> Result<ClusterModel> {
    if params.k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if points.rows() < params.k {
        return Err(Error::InsufficientPoints {
            needed: params.k,
            available: points.rows(),
        });
    }
    if points.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }
    let mut best: Option<ClusterModel> = None;
    for _ in 0..params.restarts.max(1) {
        let fit = lloyd(points, params, rng)?;
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn forgy_init(points: &Matrix, k: usize, rng: &mut RngStream) -> Result<Matrix> {
    let mut order: Vec<usize> = (0..points.rows()).collect();
    let mut chosen = Matrix::zeros(0, points.cols());
    // partial Fisher-Yates: only as many swaps as needed to find k distinct rows
    for pos in 0..order.len() {
        let j = pos + rng.below(order.len() - pos);
        order.swap(pos, j);
        let candidate = points.row(order[pos]);
        if !chosen.iter_rows().any(|c| c == candidate) {
            chosen.push_row(candidate)?;
            if chosen.rows() == k {
                return Ok(chosen);
            }
        }
    }
    Err(Error::InsufficientPoints {
        needed: k,
        available: chosen.rows(),
    })
}

fn lloyd(points: &Matrix, params: &KMeansParams, rng: &mut RngStream) -> Result<ClusterModel> {
    let k = params.k;
    let dim = points.cols();
    let mut centroids = forgy_init(points, k, rng)?;
    let mut history = Vec::new();
    let mut previous: Option<Vec<usize>> = None;
    let mut iterations = 0;

    while iterations < params.max_iter {
        let assignment = assign_all(&centroids, points);
        let labels: Vec<usize> = assignment.iter().map(|a| a.0).collect();
        history.push(assignment.iter().map(|a| a.1).sum::<f64>());
        if previous.as_ref() == Some(&labels) {
            break;
        }
        iterations += 1;

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &label) in labels.iter().enumerate() {
            counts[label] += 1;
            for (s, v) in sums.row_mut(label).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut next = Matrix::zeros(k, dim);
        let mut reseeded = false;
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                for (dst, s) in next.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / n;
                }
            } else {
                // empty cluster: move to the point farthest from its centroid
                let far = (0..points.rows())
                    .filter(|i| !taken.contains(i))
                    .fold(None::<(usize, f64)>, |acc, i| match acc {
                        Some((_, d)) if d >= assignment[i].1 => acc,
                        _ => Some((i, assignment[i].1)),
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                taken.push(far);
                next.row_mut(c).copy_from_slice(points.row(far));
                reseeded = true;
            }
        }
        let displacement = (0..k)
            .map(|c| squared_distance(centroids.row(c), next.row(c)))
            .fold(0.0f64, f64::max)
            .sqrt();
        centroids = next;
        previous = Some(labels);
        if !reseeded && displacement < params.tol {
            let final_cost: f64 = assign_all(&centroids, points).iter().map(|a| a.1).sum();
            history.push(final_cost);
            break;
        }
    }
    if iterations == params.max_iter {
        let final_cost: f64 = assign_all(&centroids, points).iter().map(|a| a.1).sum();
        history.push(final_cost);
    }
    for pair in history.windows(2) {
        debug_assert!(
            pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-12,
            "Lloyd inertia increased: {} -> {}",
            pair[0],
            pair[1]
        );
    }
    let inertia = *history.last().expect("at least one assignment");
    Ok(ClusterModel {
        centroids,
        iterations,
        inertia,
        n_samples: points.rows(),
        inertia_history: history,
    })
}

/// How a clustered environment presents a state to the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Representation {
    /// The centroid of the assigned cluster (same dimension as the state).
    Centroid,
    /// Indicator vector of the assigned cluster (dimension k).
    OneHot,
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Centroid => "centroid",
            Representation::OneHot => "one-hot",
        })
    }
}

impl FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centroid" => Ok(Representation::Centroid),
            "one-hot" | "onehot" | "one_hot" => Ok(Representation::OneHot),
            other => Err(format!("unknown representation `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusteredEnvironment {
    base: Arc<Environment>,
    model: ClusterModel,
    mode: Representation,
}

impl ClusteredEnvironment {
    pub fn new(base: Arc<Environment>, model: ClusterModel, mode: Representation) -> Result<Self> {
        check_dim("cluster model", base.state_dim(), model.dim())?;
        Ok(ClusteredEnvironment { base, model, mode })
    }

    pub fn model(&self) -> &ClusterModel {
        &self.model
    }

    pub fn mode(&self) -> Representation {
        self.mode
    }

    pub fn shared_base(&self) -> &Arc<Environment> {
        &self.base
    }
}

impl BanditTask for ClusteredEnvironment {
    fn base(&self) -> &Environment {
        &self.base
    }

    fn obs_dim(&self) -> usize {
        match self.mode {
            Representation::Centroid => self.base.state_dim(),
            Representation::OneHot => self.model.k(),
        }
    }

    fn observe(&self, state: &[f64]) -> Result<Vec<f64>> {
        let c = self.model.assign(state)?;
        Ok(match self.mode {
            Representation::Centroid => self.model.centroid(c).to_vec(),
            Representation::OneHot => {
                let mut v = vec![0.0; self.model.k()];
                v[c] = 1.0;
                v
            }
        })
    }
}

/// Sample `n_fit_samples` states, fit k-means and wrap the environment.
pub fn clusterize_environment(
    env: Arc<Environment>,
    n_fit_samples: usize,
    params: &KMeansParams,
    mode: Representation,
    rng: &mut RngStream,
) -> Result<ClusteredEnvironment> {
    if n_fit_samples < params.k {
        return Err(Error::InsufficientPoints {
            needed: params.k,
            available: n_fit_samples,
        });
    }
    let mut points = Matrix::zeros(0, env.state_dim());
    for _ in 0..n_fit_samples {
        points.push_row(&env.sample_state(rng))?;
    }
    let model = kmeans_fit(&points, params, rng)?;
    ClusteredEnvironment::new(env, model, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::rng::derive_stream;

    fn pts(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn k_one_is_the_mean() {
        let p = pts(&[&[0.0, 1.0], &[2.0, 3.0], &[4.0, -1.0], &[-2.0, 1.0]]);
        let m = kmeans_fit(&p, &KMeansParams::new(1), &mut derive_stream(1, "km")).unwrap();
        assert_eq!(m.centroid(0), &[1.0, 1.0]);
        assert_eq!(m.inertia(), 1.0 + 5.0 + 13.0 + 9.0);
    }

    #[test]
    fn n_equals_k_is_perfect_fit() {
        let p = pts(&[&[0.0, 1.0], &[2.0, 3.0], &[4.0, -1.0]]);
        let m = kmeans_fit(&p, &KMeansParams::new(3), &mut derive_stream(2, "km")).unwrap();
        assert_eq!(m.inertia(), 0.0);
        let mut rows: Vec<Vec<f64>> = m.centroids().iter_rows().map(<[f64]>::to_vec).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = pts(&[&[0.0], &[1.0]]);
        let mut rng = derive_stream(0, "km");
        assert!(matches!(
            kmeans_fit(&p, &KMeansParams::new(3), &mut rng),
            Err(Error::InsufficientPoints { .. })
        ));
        let nan = pts(&[&[0.0], &[f64::NAN]]);
        assert!(matches!(
            kmeans_fit(&nan, &KMeansParams::new(1), &mut rng),
            Err(Error::NonFinite(_))
        ));
        let dup = pts(&[&[1.0], &[1.0], &[1.0]]);
        assert!(kmeans_fit(&dup, &KMeansParams::new(2), &mut rng).is_err());
    }

    #[test]
    fn assignment_tie_breaks_low() {
        let c = pts(&[&[5.0, 5.0], &[-1.0, 0.0], &[9.0, 9.0], &[7.0, 7.0], &[1.0, 0.0]]);
        let m = ClusterModel::from_centroids(c, 0, 0.0, 0).unwrap();
        assert_eq!(m.assign(&[0.0, 0.0]).unwrap(), 1);
        assert_eq!(m.assign(&[7.0, 7.0]).unwrap(), 3);
        assert!(m.assign(&[0.0]).is_err());
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // duplicated far point pulls two initial centroids apart only if reseeding works
        let p = pts(&[&[0.0], &[0.1], &[0.2], &[10.0], &[10.1], &[20.0]]);
        for seed in 0..20 {
            let m = kmeans_fit(&p, &KMeansParams::new(3), &mut derive_stream(seed, "km")).unwrap();
            let mut cs: Vec<f64> = m.centroids().as_slice().to_vec();
            cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cs.dedup();
            assert_eq!(cs.len(), 3, "seed {seed}: {cs:?}");
        }
    }

    #[test]
    fn history_is_monotone_and_fixed_point() {
        let mut rng = derive_stream(4, "pts");
        let mut p = Matrix::zeros(0, 3);
        for _ in 0..500 {
            let row: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            p.push_row(&row).unwrap();
        }
        let params = KMeansParams {
            tol: 0.0,
            max_iter: 1000,
            ..KMeansParams::new(7)
        };
        let m = kmeans_fit(&p, &params, &mut rng).unwrap();
        for w in m.inertia_history().windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        // recentering the final assignment reproduces the centroids
        let labels: Vec<usize> = p.iter_rows().map(|r| m.assign(r).unwrap()).collect();
        for c in 0..7 {
            let members: Vec<&[f64]> = p
                .iter_rows()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(r, _)| r)
                .collect();
            for d in 0..3 {
                let mean = members.iter().map(|r| r[d]).sum::<f64>() / members.len() as f64;
                assert!((mean - m.centroid(c)[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clustered_environment_contracts() {
        let env = Arc::new(Environment::build(EnvConfig::new(4, 3, 6, 2, vec![3, 2], 9)).unwrap());
        let mut rng = derive_stream(9, "cluster");
        let clustered =
            clusterize_environment(env.clone(), 200, &KMeansParams::new(5), Representation::Centroid, &mut rng)
                .unwrap();
        assert_eq!(clustered.obs_dim(), 4);
        let mut states = derive_stream(9, "probe");
        let mut seen = Vec::new();
        for _ in 0..300 {
            let s = env.sample_state(&mut states);
            let obs = clustered.observe(&s).unwrap();
            let c = clustered.model().assign(&s).unwrap();
            assert_eq!(obs, clustered.model().centroid(c));
            for j in 0..6 {
                assert_eq!(clustered.reward(&s, j).unwrap(), env.reward(&s, j).unwrap());
            }
            if !seen.contains(&obs) {
                seen.push(obs);
            }
        }
        assert!(seen.len() <= 5);

        let onehot = ClusteredEnvironment::new(env.clone(), clustered.model().clone(), Representation::OneHot)
            .unwrap();
        assert_eq!(onehot.obs_dim(), 5);
        let s = env.sample_state(&mut states);
        let obs = onehot.observe(&s).unwrap();
        assert_eq!(obs.iter().sum::<f64>(), 1.0);
        assert_eq!(obs[onehot.model().assign(&s).unwrap()], 1.0);
    }
}
