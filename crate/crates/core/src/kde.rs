//! Gaussian kernel density estimation with the Silverman bandwidth.
//!
//! The bandwidth is `1.06 * min(sd, IQR/1.34) * n^(-1/5)`; the IQR uses the
//! same type-7 quantile convention as the PoF summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pof::quantile_type7;

/// A density curve evaluated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

/// Silverman rule-of-thumb bandwidth.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 samples for a bandwidth".into(),
        ));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = quantile_type7(&sorted, 0.75) - quantile_type7(&sorted, 0.25);
    let spread = sd.min(iqr / 1.34);
    let h = 1.06 * spread * (n as f64).powf(-0.2);
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(Error::InvalidArgument(
            "degenerate sample: bandwidth is zero".into(),
        ))
    }
}

/// Gaussian-kernel density of `samples` evaluated at each grid point.
pub fn kde_density(samples: &[f64], grid: &[f64]) -> Result<KdeCurve> {
    let h = silverman_bandwidth(samples)?;
    let n = samples.len() as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&x| {
            let mut acc = 0.0;
            for &s in samples {
                let u = (x - s) / h;
                acc += (-0.5 * u * u).exp();
            }
            acc * norm
        })
        .collect();
    Ok(KdeCurve {
        grid: grid.to_vec(),
        density,
        bandwidth: h,
    })
}

/// Evenly spaced grid spanning the sample range extended by `pad_bandwidths`
/// bandwidths on each side.
pub fn kde_grid(samples: &[f64], points: usize, pad_bandwidths: f64) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidArgument("need at least 2 grid points".into()));
    }
    let h = silverman_bandwidth(samples)?;
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - pad_bandwidths * h;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + pad_bandwidths * h;
    Ok((0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect())
}
