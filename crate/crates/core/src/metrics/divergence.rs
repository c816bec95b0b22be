use super::{check_pair, MetricError, MetricId};

/// `(x + epsilon) / Σ(x + epsilon)`. An all-zero input with `epsilon = 0`
/// becomes the uniform distribution.
pub fn normalize_to_distribution(x: &[f64], epsilon: f64) -> Result<Vec<f64>, MetricError> {
    if x.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    if let Some(&neg) = x.iter().find(|&&v| v < 0.0) {
        return Err(MetricError::NegativeInput(neg));
    }
    let total: f64 = x.iter().map(|v| v + epsilon).sum();
    if total <= 0.0 {
        return Ok(vec![1.0 / x.len() as f64; x.len()]);
    }
    Ok(x.iter().map(|v| (v + epsilon) / total).collect())
}

/// `Σ pᵢ ln(pᵢ / qᵢ)`, natural log, no validation. Terms with `pᵢ = 0` are 0.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| if a == 0.0 { 0.0 } else { a * (a / b).ln() })
        .sum()
}

fn midpoint(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// `½KL(p‖m) + ½KL(q‖m)` with `m = ½(p + q)`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let m = midpoint(p, q);
    // clamp the rounding error that can leave identical inputs at -1e-17
    (0.5 * kl_divergence(p, &m) + 0.5 * kl_divergence(q, &m)).max(0.0)
}

pub(super) fn js_literal(p: &[f64], q: &[f64]) -> f64 {
    let m = midpoint(p, q);
    (0.5 * kl_divergence(p, &m) + 0.5 * kl_divergence(&m, q)).max(0.0)
}

fn check_distribution(p: &[f64]) -> Result<(), MetricError> {
    if let Some(&v) = p.iter().find(|&&v| v <= 0.0) {
        return Err(MetricError::NotADistribution(format!("component {v} <= 0")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(MetricError::NotADistribution(format!("sums to {s}")));
    }
    Ok(())
}

/// Symmetrized KL (`½[KL(p‖q) + KL(q‖p)]`) or Jensen-Shannon between two
/// strictly positive distributions.
pub fn dist_divergence(metric: MetricId, p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    check_pair(p, q)?;
    check_distribution(p)?;
    check_distribution(q)?;
    match metric {
        MetricId::SymmetrizedKL => Ok((0.5 * (kl_divergence(p, q) + kl_divergence(q, p))).max(0.0)),
        MetricId::JS => Ok(js_divergence(p, q)),
        other => Err(MetricError::WrongMetric(other)),
    }
}
