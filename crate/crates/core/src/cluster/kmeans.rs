use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_data, ClusterError, ClusterModel, EmptyClusterPolicy, KMeansConfig};
use crate::metrics::Metric;

struct Run {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
}

impl Run {
    fn inertia(&self) -> f64 {
        *self.history.last().expect("history starts non-empty")
    }
}

/// Fit k-means, keeping the best of `cfg.n_restarts` k-means++ restarts.
///
/// Restart `r` draws from a ChaCha8 stream `r` seeded with `cfg.seed`, so the
/// result is the same however the restarts are scheduled.
pub fn kmeans_fit(data: &[Vec<f64>], cfg: &KMeansConfig) -> Result<ClusterModel, ClusterError> {
    cfg.validate()?;
    let n = data.len();
    if n < cfg.k {
        return Err(ClusterError::TooFewPoints { n, k: cfg.k });
    }
    check_data(data)?;
    let metric = cfg.metric();

    let runs = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            lloyd(data, cfg, &metric, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut best = None::<Run>;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.inertia() < b.inertia()) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(canonicalize(best))
}

fn kmeans_plus_plus(
    data: &[Vec<f64>],
    k: usize,
    metric: &Metric,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>, ClusterError> {
    let n = data.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = data
        .iter()
        .map(|x| metric.distance(x, &data[chosen[0]]))
        .collect::<Result<_, _>>()?;
    while chosen.len() < k {
        let weights: Vec<f64> = nearest.iter().map(|d| d * d).collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against landing on a zero-weight tail through rounding
            if weights[pick] == 0.0 {
                pick = weights
                    .iter()
                    .rposition(|w| *w > 0.0)
                    .expect("positive total");
            }
            pick
        } else {
            // every point coincides with a chosen center; take an unused index
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        for (i, x) in data.iter().enumerate() {
            let d = metric.distance(x, &data[next])?;
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }
    Ok(chosen.into_iter().map(|i| data[i].clone()).collect())
}

fn assign_all(
    data: &[Vec<f64>],
    centroids: &[Vec<f64>],
    metric: &Metric,
) -> Result<(Vec<usize>, Vec<f64>), ClusterError> {
    let mut labels = Vec::with_capacity(data.len());
    let mut dists = Vec::with_capacity(data.len());
    for x in data {
        let (l, d) = super::nearest_centroid(centroids, x, metric)?;
        labels.push(l);
        dists.push(d);
    }
    Ok((labels, dists))
}

fn reseed_empty(
    data: &[Vec<f64>],
    labels: &mut [usize],
    dists: &mut [f64],
    centroids: &mut [Vec<f64>],
    metric: &Metric,
) -> Result<(), ClusterError> {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return Ok(());
        };
        let mut donor: Option<usize> = None;
        for i in 0..data.len() {
            if sizes[labels[i]] > 1 && donor.is_none_or(|j| dists[i] > dists[j]) {
                donor = Some(i);
            }
        }
        let i = donor.expect("n >= k guarantees a cluster with two members");
        labels[i] = empty;
        centroids[empty] = data[i].clone();
        dists[i] = metric.distance(&data[i], &centroids[empty])?;
    }
}

fn mean_of(data: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let dim = data[members[0]].len();
    let mut out = vec![0.0; dim];
    for &i in members {
        for (o, v) in out.iter_mut().zip(&data[i]) {
            *o += v;
        }
    }
    let n = members.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

fn lloyd(
    data: &[Vec<f64>],
    cfg: &KMeansConfig,
    metric: &Metric,
    rng: &mut ChaCha8Rng,
) -> Result<Run, ClusterError> {
    let k = cfg.k;
    let mut centroids = kmeans_plus_plus(data, k, metric, rng)?;
    let (mut labels, mut dists) = assign_all(data, &centroids, metric)?;
    match cfg.empty_cluster_policy {
        EmptyClusterPolicy::ReseedFarthest => {
            reseed_empty(data, &mut labels, &mut dists, &mut centroids, metric)?
        }
    }
    let mut history = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        iterations += 1;
        let (mut shift, mut scale) = (0.0, 0.0);
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..data.len()).filter(|&i| labels[i] == c).collect();
            let mean = mean_of(data, &members);
            let old_cost: f64 = members.iter().map(|&i| dists[i]).sum();
            let new_cost = members
                .iter()
                .map(|&i| metric.distance(&data[i], &mean))
                .sum::<Result<f64, _>>()?;
            if new_cost <= old_cost {
                shift += centroid
                    .iter()
                    .zip(&mean)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                scale += centroid.iter().map(|a| a * a).sum::<f64>();
                *centroid = mean;
            }
        }
        let (new_labels, new_dists) = assign_all(data, &centroids, metric)?;
        let changed = new_labels != labels;
        labels = new_labels;
        dists = new_dists;
        reseed_empty(data, &mut labels, &mut dists, &mut centroids, metric)?;
        history.push(dists.iter().sum());

        let relative_shift = if scale > 0.0 {
            (shift / scale).sqrt()
        } else {
            shift.sqrt()
        };
        if !changed || relative_shift < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(Run {
        centroids,
        labels,
        history,
        iterations,
        converged,
    })
}

/// Renumber clusters by descending centroid mass (ties: lowest first member).
fn canonicalize(run: Run) -> ClusterModel {
    let k = run.centroids.len();
    let first_member: Vec<usize> = (0..k)
        .map(|c| {
            run.labels
                .iter()
                .position(|&l| l == c)
                .unwrap_or(usize::MAX)
        })
        .collect();
    let mass: Vec<f64> = run.centroids.iter().map(|c| c.iter().sum()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        mass[b]
            .total_cmp(&mass[a])
            .then(first_member[a].cmp(&first_member[b]))
    });
    let mut rank = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let inertia = *run.history.last().expect("non-empty");
    ClusterModel {
        centroids: order.iter().map(|&c| run.centroids[c].clone()).collect(),
        labels: run.labels.iter().map(|&l| rank[l]).collect(),
        inertia,
        iterations_run: run.iterations,
        converged: run.converged,
        inertia_history: run.history,
    }
}
