//! Gaussian kernel density estimation (Silverman's rule of thumb) and
//! box-plot five-point summaries with 1.5 IQR whiskers.

use serde::{Deserialize, Serialize};

use super::descriptive::quantile_sorted;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    /// All-equal samples: no density curve, `location` marks the
    /// vertical-line position.
    pub degenerate: bool,
    pub location: f64,
}

/// Gaussian KDE on a uniform grid spanning the data plus three
/// bandwidths. Bandwidth by Silverman's rule of thumb:
/// h = 0.9 min(sigma, IQR/1.34) n^{-1/5}, falling back to sigma when the
/// IQR is zero.
pub fn gaussian_kde(samples: &[f64], grid_points: usize) -> Result<KdeCurve> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("KDE over an empty sample".into()));
    }
    if grid_points < 2 {
        return Err(Error::Usage("KDE grid needs at least 2 points".into()));
    }
    let n = samples.len() as f64;
    let mean: f64 = samples.iter().sum::<f64>() / n;
    let sigma = (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (n - 1.0).max(1.0))
    .sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    let h = 0.9 * spread * n.powf(-0.2);
    if h == 0.0 {
        return Ok(KdeCurve {
            grid: vec![],
            density: vec![],
            bandwidth: 0.0,
            degenerate: true,
            location: sorted[0],
        });
    }
    let lo = sorted[0] - 3.0 * h;
    let hi = sorted[sorted.len() - 1] + 3.0 * h;
    let step = (hi - lo) / (grid_points - 1) as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut grid = Vec::with_capacity(grid_points);
    let mut density = Vec::with_capacity(grid_points);
    for i in 0..grid_points {
        let x = lo + step * i as f64;
        let d: f64 = samples
            .iter()
            .map(|&s| {
                let z = (x - s) / h;
                (-0.5 * z * z).exp()
            })
            .sum::<f64>()
            * norm;
        grid.push(x);
        density.push(d);
    }
    Ok(KdeCurve {
        grid,
        density,
        bandwidth: h,
        degenerate: false,
        location: mean,
    })
}

/// Trapezoid integral of a KDE curve (diagnostic: should be close to 1).
pub fn trapezoid_integral(curve: &KdeCurve) -> f64 {
    if curve.grid.len() < 2 {
        return 0.0;
    }
    curve
        .grid
        .windows(2)
        .zip(curve.density.windows(2))
        .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
        .sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxSummary {
    pub whisker_lo: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_hi: f64,
    pub outliers: u64,
}

/// Five-point box summary: quartiles by linear interpolation, whiskers at
/// the most extreme data points within 1.5 IQR of the quartiles.
pub fn box_summary(samples: &[f64]) -> Result<BoxSummary> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("box summary over an empty sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.50);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_lo = sorted.iter().cloned().find(|&v| v >= lo_fence).unwrap_or(q1);
    let whisker_hi = sorted.iter().rev().cloned().find(|&v| v <= hi_fence).unwrap_or(q3);
    let outliers = sorted.iter().filter(|&&v| v < lo_fence || v > hi_fence).count() as u64;
    Ok(BoxSummary {
        whisker_lo,
        q1,
        median,
        q3,
        whisker_hi,
        outliers,
    })
}
