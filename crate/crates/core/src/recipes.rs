//! Good-sleep activity recipes: sub-clusters of a mode's daily level totals
//! whose days mostly ended in good sleep.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{grid_search, ClusterError, GridSpec, KMeansConfig};
use crate::metrics::MetricId;
use crate::types::{LevelSummary, SleepQuality, SleepRecord, GOOD_SLEEP_EFFICIENCY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecipeError {
    #[error("need at least 2 days in a mode, got {0}")]
    TooFewDays(usize),
    #[error("{summaries} summaries but {tags} sleep tags")]
    LengthMismatch { summaries: usize, tags: usize },
    #[error("invalid recipe configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecipeConfig {
    pub good_efficiency_threshold: f64,
    pub good_ratio_threshold: f64,
    pub min_cluster_days: usize,
    pub subcluster_k_range: Vec<usize>,
    pub seed: u64,
}

impl Default for RecipeConfig {
    fn default() -> Self {
        RecipeConfig {
            good_efficiency_threshold: GOOD_SLEEP_EFFICIENCY,
            good_ratio_threshold: 2.0,
            min_cluster_days: 3,
            subcluster_k_range: (2..=5).collect(),
            seed: 0,
        }
    }
}

impl RecipeConfig {
    pub fn validate(&self) -> Result<(), RecipeError> {
        let problem =
            if !(self.good_efficiency_threshold > 0.0 && self.good_efficiency_threshold < 1.0) {
                "good_efficiency_threshold must be in (0, 1)"
            } else if !(self.good_ratio_threshold > 0.0) {
                "good_ratio_threshold must be > 0"
            } else if self.min_cluster_days < 1 {
                "min_cluster_days must be >= 1"
            } else {
                return Ok(());
            };
        Err(RecipeError::InvalidConfig(problem.into()))
    }
}

pub fn tag_sleep_quality(rec: &SleepRecord, cfg: &RecipeConfig) -> SleepQuality {
    SleepQuality::from_efficiency(rec.efficiency, cfg.good_efficiency_threshold)
}

/// Whether a sub-cluster is good enough to become a recipe. A cluster with no
/// poor nights passes as long as it has a good one.
pub fn good_cluster_test(good_count: usize, poor_count: usize, cfg: &RecipeConfig) -> bool {
    if good_count + poor_count < cfg.min_cluster_days {
        return false;
    }
    if poor_count == 0 {
        good_count >= 1
    } else {
        good_count as f64 / poor_count as f64 >= cfg.good_ratio_threshold
    }
}

/// A daily `[light, moderate, vigorous]` minute target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub center: [f64; 3],
    #[serde(rename = "good")]
    pub good_count: usize,
    #[serde(rename = "poor")]
    pub poor_count: usize,
    #[serde(rename = "days")]
    pub member_days: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubCluster {
    pub recipe: Recipe,
    pub passed: bool,
}

/// Every sub-cluster of one mode, including those that failed the test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeExtraction {
    pub k: usize,
    /// `None` when the single-cluster fallback was used.
    pub silhouette: Option<f64>,
    pub subclusters: Vec<SubCluster>,
}

impl RecipeExtraction {
    pub fn recipes(&self) -> Vec<Recipe> {
        self.subclusters
            .iter()
            .filter(|s| s.passed)
            .map(|s| s.recipe.clone())
            .collect()
    }
}

/// Sub-cluster one mode's daily level totals (L2 k-means, `k` by silhouette)
/// and test each sub-cluster's good/poor balance.
///
/// `k` ranges over the configured values that leave at least one cluster with
/// two days. When none does, or the best silhouette is not positive, all days
/// form a single cluster.
pub fn extract_recipes(
    mode_days: &[LevelSummary],
    sleep_tags: &[SleepQuality],
    cfg: &RecipeConfig,
) -> Result<RecipeExtraction, RecipeError> {
    cfg.validate()?;
    if mode_days.len() != sleep_tags.len() {
        return Err(RecipeError::LengthMismatch {
            summaries: mode_days.len(),
            tags: sleep_tags.len(),
        });
    }
    let n = mode_days.len();
    if n < 2 {
        return Err(RecipeError::TooFewDays(n));
    }
    let data: Vec<Vec<f64>> = mode_days.iter().map(|s| s.minutes.to_vec()).collect();
    let ks: Vec<usize> = cfg
        .subcluster_k_range
        .iter()
        .copied()
        .filter(|&k| k >= 2 && k < n)
        .collect();

    let mut labels = vec![0usize; n];
    let mut k = 1;
    let mut silhouette = None;
    if !ks.is_empty() {
        let template = KMeansConfig::new(2, MetricId::L2).with_seed(cfg.seed);
        let best = grid_search(&data, &GridSpec::new(ks, [MetricId::L2]), &template)?.best;
        if best.silhouette > 0.0 {
            labels = best.model.labels;
            k = best.k;
            silhouette = Some(best.silhouette);
        }
    }

    let subclusters = (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let mut center = [0.0; 3];
            for &i in &members {
                for (s, v) in center.iter_mut().zip(&mode_days[i].minutes) {
                    *s += v;
                }
            }
            center.iter_mut().for_each(|s| *s /= members.len() as f64);
            let good_count = members
                .iter()
                .filter(|&&i| sleep_tags[i] == SleepQuality::Good)
                .count();
            let poor_count = members.len() - good_count;
            let mut member_days: Vec<u32> =
                members.iter().map(|&i| mode_days[i].day_index).collect();
            member_days.sort_unstable();
            SubCluster {
                passed: good_cluster_test(good_count, poor_count, cfg),
                recipe: Recipe {
                    center,
                    good_count,
                    poor_count,
                    member_days,
                },
            }
        })
        .collect();
    Ok(RecipeExtraction {
        k,
        silhouette,
        subclusters,
    })
}

/// A subject's recipes, keyed by behavior mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecipeBook {
    pub subject_id: String,
    pub modes: BTreeMap<usize, Vec<Recipe>>,
}

impl RecipeBook {
    pub fn recipes_for(&self, mode: usize) -> &[Recipe] {
        self.modes.get(&mode).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn recipe_count(&self) -> usize {
        self.modes.values().map(Vec::len).sum()
    }
}
