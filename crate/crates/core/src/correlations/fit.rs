//! Least-squares decay fits on log scale.

use serde::Serialize;

use crate::error::{Error, Result};

/// Values with absolute value at or below this count as exact zeros.
pub const ZERO_TOL: f64 = 1e-14;
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayModel {
    /// `A x^-delta`
    Polynomial,
    /// `A e^(-sigma x)`
    Exponential,
}

/// Fitted decay law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub model: DecayModel,
    pub exponent: f64,
    pub amplitude: f64,
    /// Residual sum of squares of `ln |y|`.
    pub rss: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub points_used: usize,
    pub zeros_dropped: usize,
    /// All data were exact zeros; amplitude is 0 and the exponent is meaningless.
    pub degenerate: bool,
}

impl RateFit {
    pub fn predict(&self, x: f64) -> f64 {
        match self.model {
            DecayModel::Polynomial => self.amplitude * x.powf(-self.exponent),
            DecayModel::Exponential => self.amplitude * (-self.exponent * x).exp(),
        }
    }
}

/// Result of comparing both decay models on the same data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSelection {
    pub best: RateFit,
    pub alternative: RateFit,
    /// Residuals agree within 1e-9; both fits are equally good.
    pub tie: bool,
}

/// Ordinary least squares `y = intercept + slope x`; returns
/// `(slope, intercept, rss)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::InsufficientData { needed: 2, got: n.min(ys.len()) });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DomainError("regressor has zero variance".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok((slope, intercept, rss))
}

/// Fits `|y| ~ A x^-delta` or `|y| ~ A e^(-sigma x)`. Exact zeros are
/// dropped and counted; if every value is zero the fit is degenerate.
pub fn fit_decay(model: DecayModel, xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::DomainError("x and y lengths differ".into()));
    }
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(_, y)| y.abs() > ZERO_TOL).map(|(&x, &y)| (x, y)).collect();
    let zeros_dropped = xs.len() - kept.len();
    if kept.is_empty() && !xs.is_empty() {
        return Ok(RateFit {
            model,
            exponent: 0.0,
            amplitude: 0.0,
            rss: 0.0,
            x_min,
            x_max,
            points_used: 0,
            zeros_dropped,
            degenerate: true,
        });
    }
    let lx: Vec<f64> = kept
        .iter()
        .map(|&(x, _)| match model {
            DecayModel::Polynomial => x.ln(),
            DecayModel::Exponential => x,
        })
        .collect();
    let ly: Vec<f64> = kept.iter().map(|&(_, y)| y.abs().ln()).collect();
    let (slope, intercept, rss) = linear_fit(&lx, &ly)?;
    Ok(RateFit {
        model,
        exponent: -slope,
        amplitude: intercept.exp(),
        rss,
        x_min,
        x_max,
        points_used: kept.len(),
        zeros_dropped,
        degenerate: false,
    })
}

/// Fits both models and keeps the smaller residual.
pub fn select_model(xs: &[f64], ys: &[f64]) -> Result<ModelSelection> {
    let poly = fit_decay(DecayModel::Polynomial, xs, ys)?;
    let expo = fit_decay(DecayModel::Exponential, xs, ys)?;
    let tie = (poly.rss - expo.rss).abs() <= TIE_TOL;
    let (best, alternative) = if expo.rss <= poly.rss { (expo, poly) } else { (poly, expo) };
    Ok(ModelSelection { best, alternative, tie })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential_rate() {
        let xs: Vec<f64> = (1..=12).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|&n| 0.4f64.powf(n - 1.0) / 18.0).collect();
        let sel = select_model(&xs, &ys).unwrap();
        assert_eq!(sel.best.model, DecayModel::Exponential);
        assert!((sel.best.exponent - 2.5f64.ln()).abs() < 1e-12);
        assert!((sel.best.amplitude - 2.5 / 18.0).abs() < 1e-12);
        assert!(!sel.tie);
    }

    #[test]
    fn recovers_power_law() {
        let xs: Vec<f64> = (1..=20).map(|k| f64::from(k) * 3.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&n| 2.0 * n.powf(-1.5)).collect();
        let sel = select_model(&xs, &ys).unwrap();
        assert_eq!(sel.best.model, DecayModel::Polynomial);
        assert!((sel.best.exponent - 1.5).abs() < 1e-12);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let fit = fit_decay(DecayModel::Exponential, &[1.0, 2.0, 3.0], &[0.0, 0.0, 1e-17]).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.amplitude, 0.0);
        assert_eq!(fit.zeros_dropped, 3);
    }

    #[test]
    fn zeros_are_dropped_and_counted() {
        let fit = fit_decay(DecayModel::Exponential, &[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 0.25, 0.125]).unwrap();
        assert_eq!((fit.points_used, fit.zeros_dropped), (3, 1));
        assert!(fit_decay(DecayModel::Exponential, &[1.0, 2.0], &[1.0, 0.0]).is_err());
    }
}
