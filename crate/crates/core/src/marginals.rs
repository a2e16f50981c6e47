//! Per-node marginal families: densities, distribution functions, quantiles and
//! the midpoint transform used to smooth discrete distribution functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Smallest variance a Normal marginal may take.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    Poisson,
}

impl Family {
    pub fn is_discrete(self) -> bool {
        matches!(self, Family::Poisson)
    }
}

/// Parameters of one node's marginal distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Marginal {
    Normal { mean: f64, variance: f64 },
    Poisson { rate: f64 },
}

impl Marginal {
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !mean.is_finite() || !variance.is_finite() {
            return Err(Error::Domain(format!(
                "normal marginal needs finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        Ok(Marginal::Normal { mean, variance })
    }

    pub fn poisson(rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Domain(format!("poisson rate must be positive, got {rate}")));
        }
        Ok(Marginal::Poisson { rate })
    }

    pub fn family(&self) -> Family {
        match self {
            Marginal::Normal { .. } => Family::Normal,
            Marginal::Poisson { .. } => Family::Poisson,
        }
    }

    pub fn log_density(&self, y: f64) -> Result<f64> {
        match *self {
            Marginal::Normal { mean, variance } => Ok(-0.5
                * (2.0 * std::f64::consts::PI * variance).ln()
                - (y - mean).powi(2) / (2.0 * variance)),
            Marginal::Poisson { rate } => Ok(poisson_ln_pmf(rate, count(y)?)),
        }
    }

    /// `F(y) = P(Y <= y)`.
    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, variance } => normal::cdf((y - mean) / variance.sqrt()),
            Marginal::Poisson { rate } => {
                if y < 0.0 {
                    0.0
                } else {
                    poisson_cdf(rate, y.floor() as u64)
                }
            }
        }
    }

    /// Generalized inverse `inf { y : F(y) >= u }` for `u` in `(0, 1)`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile needs u in (0, 1), got {u}")));
        }
        match *self {
            Marginal::Normal { mean, variance } => {
                Ok(mean + variance.sqrt() * normal::quantile_unchecked(u))
            }
            Marginal::Poisson { rate } => poisson_quantile(rate, u).map(|k| k as f64),
        }
    }

    /// `(F(y⁻) + F(y)) / 2` for discrete families, `F(y)` otherwise.
    pub fn midpoint_transform(&self, y: f64) -> Result<f64> {
        match *self {
            Marginal::Normal { .. } => Ok(self.cdf(y)),
            Marginal::Poisson { rate } => Ok(poisson_midpoint(rate, count(y)?)),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Normal { mean, .. } => mean,
            Marginal::Poisson { rate } => rate,
        }
    }
}

/// Per-node marginals of one family.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalModel {
    family: Family,
    nodes: Vec<Marginal>,
}

impl MarginalModel {
    pub fn normal(means: &[f64], variances: &[f64]) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::shape("marginals", (means.len(), 1), (variances.len(), 1)));
        }
        let nodes = means
            .iter()
            .zip(variances)
            .map(|(&m, &v)| Marginal::normal(m, v))
            .collect::<Result<_>>()?;
        Ok(Self {
            family: Family::Normal,
            nodes,
        })
    }

    pub fn poisson(rates: &[f64]) -> Result<Self> {
        let nodes = rates.iter().map(|&r| Marginal::poisson(r)).collect::<Result<_>>()?;
        Ok(Self {
            family: Family::Poisson,
            nodes,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &Marginal {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[Marginal] {
        &self.nodes
    }
}

fn count(y: f64) -> Result<u64> {
    if y >= 0.0 && y.fract() == 0.0 && y < 2f64.powi(53) {
        Ok(y as u64)
    } else {
        Err(Error::Domain(format!("poisson outcome must be a nonnegative integer, got {y}")))
    }
}

pub fn poisson_ln_pmf(rate: f64, k: u64) -> f64 {
    let k = k as f64;
    k * rate.ln() - rate - libm::lgamma(k + 1.0)
}

pub fn poisson_pmf(rate: f64, k: u64) -> f64 {
    poisson_ln_pmf(rate, k).exp()
}

/// `P(Y <= k)` by direct summation of the mass function.
pub fn poisson_cdf(rate: f64, k: u64) -> f64 {
    let s: f64 = (0..=k).map(|j| poisson_pmf(rate, j)).sum();
    s.min(1.0)
}

pub fn poisson_midpoint(rate: f64, k: u64) -> f64 {
    let lower = if k == 0 { 0.0 } else { poisson_cdf(rate, k - 1) };
    0.5 * (lower + poisson_cdf(rate, k))
}

/// `∂F(k; λ)/∂λ = -PMF(k; λ)`.
pub fn cdf_grad_lambda(rate: f64, k: u64) -> f64 {
    -poisson_pmf(rate, k)
}

/// Upper bound of the forward scan in [`poisson_quantile`].
pub fn poisson_scan_cap(rate: f64) -> u64 {
    (rate + 40.0 * rate.sqrt() + 100.0).floor() as u64
}

/// Smallest `k` with `F(k) >= u`, found by a forward scan.
pub fn poisson_quantile(rate: f64, u: f64) -> Result<u64> {
    let cap = poisson_scan_cap(rate);
    let mut acc = 0.0;
    for k in 0..=cap {
        acc += poisson_pmf(rate, k);
        if acc >= u {
            return Ok(k);
        }
    }
    Err(Error::Numerical(format!(
        "poisson quantile scan exceeded {cap} for rate {rate}, u {u}"
    )))
}

/// Table of `F(0), F(1), ...` up to the scan cap, for repeated quantile lookups at one rate.
#[derive(Clone, Debug)]
pub struct PoissonTable {
    rate: f64,
    cdf: Vec<f64>,
}

impl PoissonTable {
    pub fn new(rate: f64) -> Self {
        let cap = poisson_scan_cap(rate);
        let mut acc = 0.0;
        let mut cdf = Vec::new();
        for k in 0..=cap {
            acc += poisson_pmf(rate, k);
            cdf.push(acc);
            if acc >= 1.0 {
                break;
            }
        }
        Self { rate, cdf }
    }

    /// Same result as [`poisson_quantile`], by binary search.
    pub fn quantile(&self, u: f64) -> Result<u64> {
        let k = self.cdf.partition_point(|&f| f < u);
        if k < self.cdf.len() {
            Ok(k as u64)
        } else {
            poisson_quantile(self.rate, u)
        }
    }
}
