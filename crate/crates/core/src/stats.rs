//! Ensemble statistics and convergence-order fits.

use serde::{Deserialize, Serialize};

/// Least-squares fit of `log2(err) = slope * log2(dt) + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Fits the log2 convergence slope; points with non-positive error are skipped.
/// Returns `None` with fewer than two usable points.
pub fn fit_log2_slope(dts: &[f64], errs: &[f64]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = dts
        .iter()
        .zip(errs)
        .filter(|(d, e)| **d > 0.0 && **e > 0.0 && e.is_finite())
        .map(|(d, e)| (d.log2(), e.log2()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(SlopeFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        n_points: pts.len(),
    })
}

/// Mean absolute value, root mean square and max absolute value, summed in order.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let m = values.len() as f64;
    let mean_abs = values.iter().map(|v| v.abs()).sum::<f64>() / m;
    let rms = (values.iter().map(|v| v * v).sum::<f64>() / m).sqrt();
    let max = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (mean_abs, rms, max)
}
