use super::MetricError;

/// Dynamic time warping distance with ground cost `|a - b|`.
///
/// Warping paths start at `(0, 0)`, end at `(n-1, m-1)` and advance by
/// `(1,0)`, `(0,1)` or `(1,1)`. With `band = Some(r)` cells with `|i - j| > r`
/// are excluded (Sakoe-Chiba).
pub fn dist_dtw(x: &[f64], y: &[f64], band: Option<usize>) -> Result<f64, MetricError> {
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return Err(MetricError::EmptyInput);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let radius = match band {
        Some(r) => {
            let diff = n.abs_diff(m);
            if r < diff {
                return Err(MetricError::BandInfeasible { radius: r, diff });
            }
            r
        }
        None => n.max(m),
    };

    // two rolling rows over j; prev holds row i-1
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(m - 1);
        cur.fill(f64::INFINITY);
        for j in lo..=hi {
            let cost = (x[i] - y[j]).abs();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 {
                    prev[j - 1]
                } else {
                    f64::INFINITY
                };
                up.min(left).min(diag)
            };
            cur[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}
