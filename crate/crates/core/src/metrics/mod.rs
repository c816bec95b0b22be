//! Distances between daily series.
//!
//! Six metrics are available to the clustering code. `L1`, `L2` and
//! correlation distance compare raw vectors element by element, `DTW` aligns
//! them, and the two divergences compare the series after turning each into a
//! probability distribution with [`normalize_to_distribution`].

mod divergence;
mod dtw;
mod fft;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use divergence::{dist_divergence, js_divergence, kl_divergence, normalize_to_distribution};
pub use dtw::dist_dtw;
pub use fft::{fft_features, inverse_spectrum, spectrum, Complex};

/// Additive smoothing applied before KL/JS so zero counts stay finite.
pub const DEFAULT_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("negative value {0} cannot be normalized into a distribution")]
    NegativeInput(f64),
    #[error("not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("DTW band radius {radius} is smaller than the length difference {diff}")]
    BandInfeasible { radius: usize, diff: usize },
    #[error("metric {0} is not valid here")]
    WrongMetric(MetricId),
    #[error("component count {requested} outside 1..={max}")]
    BadComponentCount { requested: usize, max: usize },
}

/// The six distance metrics, in tie-breaking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "dtw")]
    Dtw,
    #[serde(rename = "corr")]
    CorrelationDistance,
    #[serde(rename = "kl")]
    SymmetrizedKL,
    #[serde(rename = "js")]
    JS,
}

impl MetricId {
    pub const ALL: [MetricId; 6] = [
        MetricId::L1,
        MetricId::L2,
        MetricId::Dtw,
        MetricId::CorrelationDistance,
        MetricId::SymmetrizedKL,
        MetricId::JS,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::L1 => "l1",
            MetricId::L2 => "l2",
            MetricId::Dtw => "dtw",
            MetricId::CorrelationDistance => "corr",
            MetricId::SymmetrizedKL => "kl",
            MetricId::JS => "js",
        }
    }

    pub fn is_divergence(self) -> bool {
        matches!(self, MetricId::SymmetrizedKL | MetricId::JS)
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                format!("unknown metric {s:?} (expected one of l1, l2, dtw, corr, kl, js)")
            })
    }
}

/// Which Jensen-Shannon formula to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsForm {
    /// `½KL(p‖m) + ½KL(q‖m)`.
    #[default]
    Standard,
    /// `½KL(p‖m) + ½KL(m‖q)`, not symmetric.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Sakoe-Chiba radius; `None` is unconstrained DTW.
    #[serde(default)]
    pub dtw_band: Option<usize>,
    #[serde(default)]
    pub js_form: JsForm,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
}

fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            dtw_band: None,
            js_form: JsForm::Standard,
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

/// A metric together with its options; the thing clustering actually calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub id: MetricId,
    #[serde(default)]
    pub options: MetricOptions,
}

impl Metric {
    pub fn new(id: MetricId) -> Self {
        Metric {
            id,
            options: MetricOptions::default(),
        }
    }

    pub fn with_options(id: MetricId, options: MetricOptions) -> Self {
        Metric { id, options }
    }

    /// Distance between two raw (unnormalized) series.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
        match self.id {
            MetricId::L1 | MetricId::L2 | MetricId::CorrelationDistance => {
                dist_elementwise(self.id, x, y)
            }
            MetricId::Dtw => dist_dtw(x, y, self.options.dtw_band),
            MetricId::SymmetrizedKL | MetricId::JS => {
                check_pair(x, y)?;
                let p = normalize_to_distribution(x, self.options.smoothing)?;
                let q = normalize_to_distribution(y, self.options.smoothing)?;
                match (self.id, self.options.js_form) {
                    (MetricId::JS, JsForm::Literal) => Ok(divergence::js_literal(&p, &q)),
                    _ => dist_divergence(self.id, &p, &q),
                }
            }
        }
    }
}

impl From<MetricId> for Metric {
    fn from(id: MetricId) -> Self {
        Metric::new(id)
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

/// L1, L2 or correlation distance (`1 - r`, Pearson `r`).
///
/// Correlation distance is 0 when both series are constant and 1 when only
/// one of them is.
pub fn dist_elementwise(metric: MetricId, x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    match metric {
        MetricId::L1 => Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum()),
        MetricId::L2 => Ok(x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()),
        MetricId::CorrelationDistance => Ok(correlation_distance(x, y)),
        other => Err(MetricError::WrongMetric(other)),
    }
}

fn correlation_distance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    match (sxx == 0.0, syy == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => {
            let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
            1.0 - r
        }
    }
}
