use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kmeans_fit, silhouette, ClusterError, ClusterModel, KMeansConfig};
use crate::metrics::MetricId;

/// Scenarios to try: every `k` crossed with every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub k_range: Vec<usize>,
    pub metrics: Vec<MetricId>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::new(2..=6, [MetricId::L2, MetricId::JS])
    }
}

impl GridSpec {
    pub fn new(
        k_range: impl IntoIterator<Item = usize>,
        metrics: impl IntoIterator<Item = MetricId>,
    ) -> Self {
        GridSpec {
            k_range: k_range.into_iter().collect(),
            metrics: metrics.into_iter().collect(),
        }
    }

    /// `(k, metric)` pairs, deduplicated, ordered by k then metric.
    pub fn scenarios(&self) -> Vec<(usize, MetricId)> {
        let mut ks = self.k_range.clone();
        ks.sort_unstable();
        ks.dedup();
        let mut ms = self.metrics.clone();
        ms.sort_unstable();
        ms.dedup();
        ks.iter()
            .flat_map(|&k| ms.iter().map(move |&m| (k, m)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub k: usize,
    pub metric: MetricId,
    pub silhouette: Option<f64>,
    pub inertia: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFit {
    pub k: usize,
    pub metric: MetricId,
    pub silhouette: f64,
    pub model: ClusterModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub best: ScenarioFit,
    /// One row per scenario, in `(k, metric)` order.
    pub report: Vec<ScenarioReport>,
}

/// Fit every scenario and keep the one with the highest silhouette.
///
/// Ties go to the smaller `k`, then to the earlier metric. Scenarios that fail
/// (for example a divergence on negative features) are reported and skipped;
/// if none succeeds the first failure is returned.
pub fn grid_search(
    data: &[Vec<f64>],
    grid: &GridSpec,
    template: &KMeansConfig,
) -> Result<GridOutcome, ClusterError> {
    let scenarios = grid.scenarios();
    if scenarios.is_empty() {
        return Err(ClusterError::EmptyGrid);
    }
    let fits: Vec<(Result<ScenarioFit, ClusterError>, f64)> = scenarios
        .par_iter()
        .map(|&(k, metric)| {
            let start = Instant::now();
            let cfg = KMeansConfig {
                k,
                metric,
                ..template.clone()
            };
            let fit = kmeans_fit(data, &cfg).and_then(|model| {
                let s = silhouette(data, &model.labels, &cfg.metric())?;
                Ok(ScenarioFit {
                    k,
                    metric,
                    silhouette: s,
                    model,
                })
            });
            (fit, start.elapsed().as_secs_f64())
        })
        .collect();

    let mut report = Vec::with_capacity(fits.len());
    let mut best: Option<ScenarioFit> = None;
    let mut first_error: Option<ClusterError> = None;
    for ((k, metric), (fit, seconds)) in scenarios.into_iter().zip(fits) {
        match fit {
            Ok(f) => {
                report.push(ScenarioReport {
                    k,
                    metric,
                    silhouette: Some(f.silhouette),
                    inertia: Some(f.model.inertia),
                    seconds,
                    error: None,
                });
                if best.as_ref().is_none_or(|b| f.silhouette > b.silhouette) {
                    best = Some(f);
                }
            }
            Err(e) => {
                report.push(ScenarioReport {
                    k,
                    metric,
                    silhouette: None,
                    inertia: None,
                    seconds,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    match best {
        Some(best) => Ok(GridOutcome { best, report }),
        None => Err(first_error.expect("non-empty grid")),
    }
}

/// Report rows as `k,metric,silhouette,inertia,seconds`; failed scenarios
/// leave the numeric cells empty.
pub fn scenario_report_csv(report: &[ScenarioReport]) -> String {
    let mut out = String::from("k,metric,silhouette,inertia,seconds\n");
    for r in report {
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.k,
            r.metric,
            num(r.silhouette),
            num(r.inertia),
            r.seconds
        );
    }
    out
}
