use super::{check_data, ClusterError};
use crate::metrics::{JsForm, Metric, MetricId};

/// Per-point silhouette `(b - a) / max(a, b)`.
///
/// `a` is the mean distance to the other members of the point's cluster and
/// `b` the smallest mean distance to the members of another cluster. Points
/// alone in their cluster score 0, as do points with `a = b = 0`.
pub fn silhouette_samples(
    data: &[Vec<f64>],
    labels: &[usize],
    metric: &Metric,
) -> Result<Vec<f64>, ClusterError> {
    let n = data.len();
    if labels.len() != n {
        return Err(ClusterError::LabelCount {
            labels: labels.len(),
            points: n,
        });
    }
    check_data(data)?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }

    let symmetric = !(metric.id == MetricId::JS && metric.options.js_form == JsForm::Literal);
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || (symmetric && j < i) {
                continue;
            }
            let d = metric.distance(&data[i], &data[j])?;
            dist[i][j] = d;
            if symmetric {
                dist[j][i] = d;
            }
        }
    }

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let own = labels[i];
        if sizes[own] == 1 {
            out.push(0.0);
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist[i][j];
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        out.push(if denom > 0.0 { (b - a) / denom } else { 0.0 });
    }
    Ok(out)
}

/// Mean silhouette over all points, in `[-1, 1]`.
pub fn silhouette(
    data: &[Vec<f64>],
    labels: &[usize],
    metric: &Metric,
) -> Result<f64, ClusterError> {
    let s = silhouette_samples(data, labels, metric)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_identical_points_score_one() {
        let data = vec![vec![0.0], vec![0.0], vec![5.0], vec![5.0]];
        let s = silhouette(&data, &[0, 0, 1, 1], &Metric::new(MetricId::L2)).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn four_points_on_a_line() {
        // brute force by hand: a = 1 for every point,
        // b = 10.5, 9.5, 9.5, 10.5
        let data = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let expected = ((10.5 - 1.0) / 10.5 + (9.5 - 1.0) / 9.5) / 2.0;
        let s = silhouette(&data, &[0, 0, 1, 1], &Metric::new(MetricId::L1)).unwrap();
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.899_749_373_433_583_9).abs() < 1e-12);
    }

    #[test]
    fn singleton_scores_zero() {
        let data = vec![vec![0.0], vec![1.0], vec![10.0]];
        let s = silhouette_samples(&data, &[0, 0, 1], &Metric::new(MetricId::L1)).unwrap();
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn one_cluster_is_an_error() {
        let data = vec![vec![0.0], vec![1.0]];
        assert_eq!(
            silhouette(&data, &[0, 0], &Metric::new(MetricId::L1)),
            Err(ClusterError::SingleCluster)
        );
        // gaps in label numbering still count clusters by membership
        assert_eq!(
            silhouette(&data, &[2, 2], &Metric::new(MetricId::L1)),
            Err(ClusterError::SingleCluster)
        );
    }
}
