//! K-means over an arbitrary [`Metric`], silhouette scoring and grid search.
//!
//! Assignment always uses the configured metric while centroids are updated
//! as the arithmetic mean of their members, so for DTW, correlation and the
//! divergences the mean acts as a surrogate centroid. An update that would
//! raise a cluster's summed distance is skipped, which keeps the objective
//! non-increasing (up to rounding) for every metric.

mod grid;
mod kmeans;
mod silhouette;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Metric, MetricError, MetricId, MetricOptions};

pub use grid::{
    grid_search, scenario_report_csv, GridOutcome, GridSpec, ScenarioFit, ScenarioReport,
};
pub use kmeans::kmeans_fit;
pub use silhouette::{silhouette, silhouette_samples};

/// Smoothing in the inverse-distance membership weights.
pub const MEMBERSHIP_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("{n} points cannot form {k} clusters")]
    TooFewPoints { n: usize, k: usize },
    #[error("invalid k-means configuration: {0}")]
    InvalidConfig(String),
    #[error("input vectors have inconsistent lengths")]
    InconsistentLengths,
    #[error("vector length {got} does not match centroid length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("labels length {labels} does not match {points} points")]
    LabelCount { labels: usize, points: usize },
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("empty scenario grid")]
    EmptyGrid,
    #[error("model has no centroids")]
    NoCentroids,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyClusterPolicy {
    /// Move the point farthest from its centroid (taken from a cluster with
    /// more than one member) into the empty cluster.
    #[default]
    ReseedFarthest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub metric: MetricId,
    #[serde(default)]
    pub metric_options: MetricOptions,
    pub n_restarts: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    #[serde(default)]
    pub empty_cluster_policy: EmptyClusterPolicy,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 2,
            metric: MetricId::L2,
            metric_options: MetricOptions::default(),
            n_restarts: 10,
            max_iters: 300,
            rel_tol: 1e-4,
            seed: 0,
            empty_cluster_policy: EmptyClusterPolicy::ReseedFarthest,
        }
    }
}

impl KMeansConfig {
    pub fn new(k: usize, metric: MetricId) -> Self {
        KMeansConfig {
            k,
            metric,
            ..Default::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn metric(&self) -> Metric {
        Metric::with_options(self.metric, self.metric_options)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let problem = if self.k < 1 {
            "k must be >= 1"
        } else if self.n_restarts < 1 {
            "n_restarts must be >= 1"
        } else if self.max_iters < 1 {
            "max_iters must be >= 1"
        } else if !(self.rel_tol > 0.0) {
            "rel_tol must be > 0"
        } else {
            return Ok(());
        };
        Err(ClusterError::InvalidConfig(problem.into()))
    }
}

/// Result of one k-means fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// Ordered by total mass, heaviest first.
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Sum over points of the distance to their centroid.
    pub inertia: f64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Objective after each assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Index and distance of the nearest centroid; ties go to the lower index.
pub fn nearest_centroid(
    centroids: &[Vec<f64>],
    x: &[f64],
    metric: &Metric,
) -> Result<(usize, f64), ClusterError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in centroids.iter().enumerate() {
        if c.len() != x.len() {
            return Err(ClusterError::LengthMismatch {
                expected: c.len(),
                got: x.len(),
            });
        }
        let d = metric.distance(x, c)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.ok_or(ClusterError::NoCentroids)
}

pub fn assign(
    model: &ClusterModel,
    x: &[f64],
    metric: &Metric,
) -> Result<(usize, f64), ClusterError> {
    nearest_centroid(&model.centroids, x, metric)
}

/// Normalized inverse-distance weights. Points sitting exactly on one or more
/// centers split the mass evenly between those centers.
pub fn membership_from_distances(distances: &[f64]) -> Vec<f64> {
    let zeros = distances.iter().filter(|&&d| d == 0.0).count();
    if zeros > 0 {
        let share = 1.0 / zeros as f64;
        return distances
            .iter()
            .map(|&d| if d == 0.0 { share } else { 0.0 })
            .collect();
    }
    let inv: Vec<f64> = distances
        .iter()
        .map(|d| 1.0 / (d + MEMBERSHIP_EPSILON))
        .collect();
    let total: f64 = inv.iter().sum();
    inv.iter().map(|w| w / total).collect()
}

/// Probability of `x` belonging to each of `centroids`.
pub fn membership_probabilities(
    centroids: &[Vec<f64>],
    x: &[f64],
    metric: &Metric,
) -> Result<Vec<f64>, ClusterError> {
    if centroids.is_empty() {
        return Err(ClusterError::NoCentroids);
    }
    let distances = centroids
        .iter()
        .map(|c| {
            if c.len() != x.len() {
                return Err(ClusterError::LengthMismatch {
                    expected: c.len(),
                    got: x.len(),
                });
            }
            Ok(metric.distance(x, c)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(membership_from_distances(&distances))
}

pub(crate) fn check_data(data: &[Vec<f64>]) -> Result<usize, ClusterError> {
    let dim = data.first().map(Vec::len).unwrap_or(0);
    if data.iter().any(|x| x.len() != dim) {
        return Err(ClusterError::InconsistentLengths);
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusterError::Metric(MetricError::NonFinite));
    }
    Ok(dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(centroids: Vec<Vec<f64>>) -> ClusterModel {
        ClusterModel {
            labels: vec![],
            inertia: 0.0,
            iterations_run: 0,
            converged: true,
            inertia_history: vec![],
            centroids,
        }
    }

    #[test]
    fn assign_exact_match() {
        let m = model(vec![vec![0.0, 0.0], vec![5.0, 5.0], vec![9.0, 1.0]]);
        assert_eq!(
            assign(&m, &[5.0, 5.0], &Metric::new(MetricId::L2)).unwrap(),
            (1, 0.0)
        );
    }

    #[test]
    fn assign_tie_goes_to_lowest_index() {
        let m = model(vec![vec![0.0], vec![100.0], vec![10.0]]);
        let (mode, d) = assign(&m, &[5.0], &Metric::new(MetricId::L1)).unwrap();
        assert_eq!((mode, d), (0, 5.0));
    }

    #[test]
    fn assign_shifted_midpoint() {
        let m = model(vec![vec![0.0, 0.0], vec![10.0, 10.0]]);
        let (mode, _) = assign(&m, &[5.01, 5.0], &Metric::new(MetricId::L2)).unwrap();
        assert_eq!(mode, 1);
        assert!(matches!(
            assign(&m, &[1.0], &Metric::new(MetricId::L2)),
            Err(ClusterError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn membership_examples() {
        let cs = vec![vec![0.0], vec![4.0], vec![9.0]];
        let p = membership_probabilities(&cs, &[9.0], &Metric::new(MetricId::L2)).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 1.0]);
        let p = membership_probabilities(&cs[..2], &[2.0], &Metric::new(MetricId::L2)).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = membership_from_distances(&[1.0, 3.0]);
        assert!((p[0] - 0.75).abs() < 1e-9 && (p[1] - 0.25).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn membership_is_ordered_inversely_to_distance(d in proptest::collection::vec(0.001f64..1e4, 1..12)) {
            let p = membership_from_distances(&d);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for i in 0..d.len() {
                for j in 0..d.len() {
                    if d[i] < d[j] {
                        prop_assert!(p[i] >= p[j]);
                    }
                }
            }
        }
    }
}
