//! Convergence-rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `log(e_i/e_{i+1}) / log(h_i/h_{i+1})` per interval.
    pub intervals: Vec<f64>,
    /// Least-squares slope of `log e` against `log h`.
    pub slope: f64,
}

pub fn fit_rate(errors: &[f64], hs: &[f64]) -> Result<RateFit> {
    if errors.len() != hs.len() {
        return Err(Error::Argument("errors and mesh sizes differ in length".into()));
    }
    if hs.len() < 2 {
        return Err(Error::Argument("at least two levels are needed".into()));
    }
    if errors.iter().chain(hs).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Argument("errors and mesh sizes must be positive".into()));
    }
    if hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Argument("mesh sizes must decrease strictly".into()));
    }
    let intervals = errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect();
    let x: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(RateFit {
        intervals,
        slope: sxy / sxx,
    })
}
