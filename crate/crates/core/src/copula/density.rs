use std::f64::consts::PI;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::marginals::{Family, VARIANCE_FLOOR};
use crate::matrix::DenseMatrix;
use crate::normal::U_CLIP;

/// Gaussian copula log-density `-½ log det R - ½ zᵀ(R⁻¹ - I)z` at `z = Φ⁻¹(u)`.
pub fn copula_log_density<'t>(z: Var<'t>, r: Var<'t>) -> Result<Var<'t>> {
    let (m, c) = z.shape();
    if c != 1 || r.shape() != (m, m) {
        return Err(Error::shape("copula_log_density", z.shape(), r.shape()));
    }
    let logdet = r.logdet_spd()?;
    let quad = z.t().matmul(&r.inverse_spd()?.matmul(&z)?)?;
    let norm = z.t().matmul(&z)?;
    Ok(logdet.add(&quad.sub(&norm)?)?.scale(-0.5))
}

/// `diag(Σ)⁻¹ᐟ² Σ diag(Σ)⁻¹ᐟ²`, differentiable in `Σ`.
pub fn correlation<'t>(sigma: Var<'t>) -> Result<Var<'t>> {
    let s = sigma.diag()?.sqrt().recip();
    sigma.mul(&s.matmul(&s.t())?)
}

/// Plain-value counterpart of [`correlation`]. Diagonal entries are set to exactly 1.
pub fn correlation_matrix(sigma: &DenseMatrix) -> DenseMatrix {
    let s: Vec<f64> = sigma.diag().iter().map(|v| 1.0 / v.sqrt()).collect();
    let n = sigma.rows();
    DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            sigma[(i, j)] * s[i] * s[j]
        }
    })
}

pub struct NllParts<'t> {
    pub loss: Var<'t>,
    /// `Σ₀₀`, the observed block of `Σ = K⁻¹`.
    pub observed_covariance: Var<'t>,
}

/// Negative log-likelihood of the observed labels: the negative copula
/// log-density of their probability-integral transforms plus the negative
/// marginal log-densities.
///
/// `location` is the base network output over all nodes: the mean for Normal
/// marginals, the log-rate for Poisson ones. Normal variances are the diagonal of
/// `Σ = K⁻¹`; discrete labels go through the midpoint transform.
pub fn nll_loss<'t>(
    location: Var<'t>,
    precision: Var<'t>,
    family: Family,
    obs_idx: &[usize],
    y_obs: &[f64],
) -> Result<NllParts<'t>> {
    if obs_idx.is_empty() {
        return Err(Error::Config("nll_loss needs at least one observed node".into()));
    }
    if obs_idx.len() != y_obs.len() {
        return Err(Error::shape("nll_loss", (obs_idx.len(), 1), (y_obs.len(), 1)));
    }
    let tape = location.tape();
    let sigma_obs = precision.inverse_spd_block(obs_idx)?;
    let r_obs = correlation(sigma_obs)?;
    let loc_obs = location.gather_rows(obs_idx)?;
    let m = obs_idx.len() as f64;

    let (u, marginal) = match family {
        Family::Normal => {
            let y = tape.constant(DenseMatrix::column(y_obs));
            let var = sigma_obs.diag()?.clamp(VARIANCE_FLOOR, f64::INFINITY);
            let std_resid = y.sub(&loc_obs)?.mul(&var.sqrt().recip())?;
            let u = std_resid.normal_cdf();
            let ln_f = var
                .ln()
                .add(&std_resid.square())?
                .sum()
                .scale(-0.5)
                .add_const(-0.5 * m * (2.0 * PI).ln());
            (u, ln_f)
        }
        Family::Poisson => {
            let counts = y_obs
                .iter()
                .map(|&y| {
                    if y >= 0.0 && y.fract() == 0.0 {
                        Ok(y as u64)
                    } else {
                        Err(Error::Domain(format!("count label must be a nonnegative integer, got {y}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let rate = loc_obs.exp();
            let u = rate.poisson_midpoint(&counts)?;
            let y = tape.constant(DenseMatrix::column(y_obs));
            let ln_fact: f64 = y_obs.iter().map(|&k| libm::lgamma(k + 1.0)).sum();
            let ln_f = y.mul(&loc_obs)?.sub(&rate)?.sum().add_const(-ln_fact);
            (u, ln_f)
        }
    };
    let z = u.clamp(U_CLIP, 1.0 - U_CLIP).normal_quantile()?;
    let copula = copula_log_density(z, r_obs)?;
    let loss = copula.add(&marginal)?.scale(-1.0);
    Ok(NllParts {
        loss,
        observed_covariance: sigma_obs,
    })
}
