//! Goodness-of-fit scores for node regression.

use crate::error::{Error, Result};

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::shape("metric", (y.len(), 1), (y_hat.len(), 1)));
    }
    if y.len() < 2 {
        return Err(Error::UndefinedMetric("need at least two observations"));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coefficient of determination `1 - Σ(y - ŷ)² / Σ(y - ȳ)²`.
pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    let y_bar = mean(y);
    let sst: f64 = y.iter().map(|v| (v - y_bar).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedMetric("r2 of constant labels"));
    }
    Ok(1.0 - sse(y, y_hat) / sst)
}

pub fn sse(y: &[f64], y_hat: &[f64]) -> f64 {
    y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Poisson deviance `2 Σ [y log(y/μ) - (y - μ)]` with `0 log 0 = 0`.
pub fn poisson_deviance(y: &[f64], mu: &[f64]) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(Error::shape("poisson_deviance", (y.len(), 1), (mu.len(), 1)));
    }
    let mut d = 0.0;
    for (&yi, &mi) in y.iter().zip(mu) {
        if !(yi >= 0.0 && yi.fract() == 0.0) {
            return Err(Error::Domain(format!("count label must be a nonnegative integer, got {yi}")));
        }
        if !(mi > 0.0 && mi.is_finite()) {
            return Err(Error::Domain(format!("predicted rate must be positive, got {mi}")));
        }
        let log_term = if yi == 0.0 { 0.0 } else { yi * (yi / mi).ln() };
        d += log_term - (yi - mi);
    }
    Ok(2.0 * d)
}

/// `1 - D(y, ŷ) / D(y, ȳ)` for count labels and positive predicted rates.
pub fn r2_deviance(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    let y_bar = mean(y);
    if y_bar == 0.0 {
        return Err(Error::UndefinedMetric("r2_deviance of all-zero counts"));
    }
    let null = poisson_deviance(y, &vec![y_bar; y.len()])?;
    if null == 0.0 {
        return Err(Error::UndefinedMetric("r2_deviance of constant counts"));
    }
    Ok(1.0 - poisson_deviance(y, y_hat)? / null)
}
