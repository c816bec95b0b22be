use std::path::{Path, PathBuf};

use paris::ingest::CutPoints;
use paris::metrics::MetricId;
use paris::modes::Domain;
use paris::pipeline::{EvalConfig, PipelineConfig};
use paris::recommend::{default_rules, ConstraintRule};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Settings file for `fit` and `evaluate`. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub pipeline: PipelineConfig,
    pub evaluate: EvalSettings,
    pub rules_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub t_m_grid: Vec<u32>,
    pub n_neighbors: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let d = EvalConfig::default();
        EvalSettings {
            t_m_grid: d.t_m_grid,
            n_neighbors: d.n_neighbors,
        }
    }
}

/// Flags that override file values.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigFlags {
    /// JSON settings file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Smallest number of behavior modes tried
    #[arg(long)]
    pub k_min: Option<usize>,
    /// Largest number of behavior modes tried
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Comma-separated distance metrics: l1, l2, dtw, corr, kl, js
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<MetricId>>,
    /// Cluster raw minutes (time) or spectral features (frequency)
    #[arg(long, value_parser = parse_domain)]
    pub domain: Option<Domain>,
    /// k-means restarts per scenario
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Sakoe-Chiba radius for dtw
    #[arg(long)]
    pub dtw_band: Option<usize>,
    /// Light, moderate and vigorous lower bounds in counts/minute, e.g. 100,1535,3962
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub cut_points: Option<Vec<f64>>,
    /// Days a sub-cluster needs to yield a recipe
    #[arg(long)]
    pub min_cluster_days: Option<usize>,
    /// Sleep efficiency above which a night is good
    #[arg(long)]
    pub good_efficiency: Option<f64>,
    /// Day of week of day_index 0 (0 = Monday)
    #[arg(long)]
    pub first_day_of_week: Option<u8>,
    /// Complete days a subject needs to be fitted
    #[arg(long)]
    pub required_days: Option<usize>,
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    match s {
        "time" => Ok(Domain::Time),
        "frequency" => Ok(Domain::Frequency),
        _ => Err(format!("unknown domain {s:?}; expected time or frequency")),
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Input(format!("invalid {what} {}: {e}", path.display())))
}

impl ConfigFlags {
    /// File values, then flags, then `seed` if given.
    pub fn resolve(&self, seed: Option<u64>) -> Result<CliConfig, CliError> {
        let mut cfg: CliConfig = match &self.config {
            Some(p) => read_json(p, "config")?,
            None => CliConfig::default(),
        };
        let p = &mut cfg.pipeline;
        if self.k_min.is_some() || self.k_max.is_some() {
            let lo = self
                .k_min
                .unwrap_or_else(|| p.modes.grid.k_range.iter().copied().min().unwrap_or(2));
            let hi = self
                .k_max
                .unwrap_or_else(|| p.modes.grid.k_range.iter().copied().max().unwrap_or(6));
            if lo > hi {
                return Err(CliError::Input(format!("k_min {lo} > k_max {hi}")));
            }
            p.modes.grid.k_range = (lo..=hi).collect();
        }
        if let Some(m) = &self.metrics {
            p.modes.grid.metrics = m.clone();
        }
        if let Some(d) = self.domain {
            p.modes.domain = d;
        }
        if let Some(r) = self.restarts {
            p.modes.kmeans.n_restarts = r;
        }
        if let Some(b) = self.dtw_band {
            p.modes.kmeans.metric_options.dtw_band = Some(b);
        }
        if let Some(c) = &self.cut_points {
            let [l, m, v] = c[..] else {
                return Err(CliError::Input("--cut-points takes three values".into()));
            };
            p.cut_points = CutPoints::new(l, m, v).map_err(|e| CliError::Input(e.to_string()))?;
        }
        if let Some(n) = self.min_cluster_days {
            p.recipes.min_cluster_days = n;
        }
        if let Some(e) = self.good_efficiency {
            p.recipes.good_efficiency_threshold = e;
        }
        if let Some(d) = self.first_day_of_week {
            p.first_day_of_week = d;
        }
        if let Some(d) = self.required_days {
            p.required_days = d;
        }
        if let Some(s) = seed {
            p.seed = s;
        }
        p.cut_points
            .validate()
            .map_err(|e| CliError::Input(e.to_string()))?;
        p.recipes
            .validate()
            .map_err(|e| CliError::Input(e.to_string()))?;
        Ok(cfg)
    }
}

/// Rules from `--rules`, else from the config file, else the defaults.
pub fn load_rules(
    flag: Option<&Path>,
    cfg: Option<&CliConfig>,
) -> Result<Vec<ConstraintRule>, CliError> {
    let path = flag.or_else(|| cfg.and_then(|c| c.rules_path.as_deref()));
    let Some(path) = path else {
        return Ok(default_rules());
    };
    let rules: Vec<ConstraintRule> = read_json(path, "rules file")?;
    for r in &rules {
        r.validate().map_err(|e| CliError::Input(e.to_string()))?;
    }
    Ok(rules)
}
