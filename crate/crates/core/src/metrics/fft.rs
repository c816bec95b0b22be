use rustfft::FftPlanner;

pub use rustfft::num_complex::Complex;

use super::MetricError;

/// Forward discrete Fourier transform, `c_k = Σ_t x_t e^{-2πi kt/N}` (unscaled).
pub fn spectrum(x: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    if !buf.is_empty() {
        FftPlanner::new()
            .plan_fft_forward(buf.len())
            .process(&mut buf);
    }
    buf
}

/// Inverse of [`spectrum`]; returns the real part, scaled by `1/N`.
pub fn inverse_spectrum(coefficients: &[Complex<f64>]) -> Vec<f64> {
    let mut buf = coefficients.to_vec();
    if buf.is_empty() {
        return Vec::new();
    }
    FftPlanner::new()
        .plan_fft_inverse(buf.len())
        .process(&mut buf);
    let n = buf.len() as f64;
    buf.iter().map(|c| c.re / n).collect()
}

/// The first `n_components` Fourier coefficients (DC included) laid out as
/// `[Re c₀, Im c₀, Re c₁, Im c₁, …]`.
pub fn fft_features(x: &[f64], n_components: usize) -> Result<Vec<f64>, MetricError> {
    if x.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let max = x.len() / 2;
    if n_components == 0 || n_components > max {
        return Err(MetricError::BadComponentCount {
            requested: n_components,
            max,
        });
    }
    Ok(spectrum(x)
        .into_iter()
        .take(n_components)
        .flat_map(|c| [c.re, c.im])
        .collect())
}
