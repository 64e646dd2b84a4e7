//! Least-squares power-law fits `value ~ C alpha^slope`.

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub name: String,
    pub slope: f64,
    /// `ln C`
    pub intercept: f64,
    /// `ln value - (intercept + slope ln alpha)` per point.
    pub residuals: Vec<f64>,
    pub alphas: Vec<f64>,
    pub values: Vec<f64>,
}

impl SlopeFit {
    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Fit over the points with positive finite values; `None` with fewer than three.
pub fn fit_loglog(name: &str, alphas: &[f64], values: &[f64]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = alphas
        .iter()
        .zip(values)
        .filter(|(a, v)| **a > 0.0 && **v > 0.0 && v.is_finite())
        .map(|(a, v)| (*a, *v))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = xs.iter().zip(&ys).map(|(x, y)| y - intercept - slope * x).collect();
    Some(SlopeFit {
        name: name.to_string(),
        slope,
        intercept,
        residuals,
        alphas: pts.iter().map(|p| p.0).collect(),
        values: pts.iter().map(|p| p.1).collect(),
    })
}
