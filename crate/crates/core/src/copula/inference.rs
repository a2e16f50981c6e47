use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::marginals::{Marginal, MarginalModel, PoissonTable};
use crate::matrix::{gemm, Cholesky, DenseMatrix};
use crate::normal;

/// Diagonal jitter added to the conditional covariance before factorization.
pub const COND_JITTER: f64 = 1e-10;

/// Conditional distribution of the missing nodes' latent normals given the observed ones.
#[derive(Clone, Debug, PartialEq)]
pub struct CopulaPosterior {
    pub mean: Vec<f64>,
    pub cov: DenseMatrix,
}

impl CopulaPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `N(R₁₀R₀₀⁻¹z_obs, R₁₁ - R₁₀R₀₀⁻¹R₀₁)` for a correlation matrix `R` over all nodes.
pub fn conditional_posterior(
    r: &DenseMatrix,
    z_obs: &[f64],
    obs_idx: &[usize],
    miss_idx: &[usize],
) -> Result<CopulaPosterior> {
    if !r.is_square() {
        return Err(Error::shape("conditional_posterior", r.shape(), r.shape()));
    }
    if z_obs.len() != obs_idx.len() {
        return Err(Error::shape("conditional_posterior", (z_obs.len(), 1), (obs_idx.len(), 1)));
    }
    let n = r.rows();
    let mut seen = vec![false; n];
    for &i in obs_idx.iter().chain(miss_idx) {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Config(format!(
                "observed and missing index sets must be disjoint and within 0..{n} (node {i})"
            )));
        }
    }
    let r11 = r.select(miss_idx, miss_idx);
    if obs_idx.is_empty() || miss_idx.is_empty() {
        return Ok(CopulaPosterior {
            mean: vec![0.0; miss_idx.len()],
            cov: r11,
        });
    }
    let r00 = r.select(obs_idx, obs_idx);
    let r01 = r.select(obs_idx, miss_idx);
    let ch = Cholesky::new(&r00)
        .map_err(|e| Error::Numerical(format!("observed correlation block is singular: {e}")))?;
    // A = R₀₀⁻¹ R₀₁, so R₁₀R₀₀⁻¹ = Aᵀ.
    let a = ch.solve(&r01);
    let at = a.transpose();
    let mean = at.matvec(z_obs)?;
    let cov = r11.sub(&gemm(&r01, true, &a, false))?.symmetrize();
    Ok(CopulaPosterior { mean, cov })
}

enum Sampler {
    Normal { mean: f64, sd: f64 },
    Poisson(PoissonTable),
}

impl Sampler {
    fn new(m: &Marginal) -> Self {
        match *m {
            Marginal::Normal { mean, variance } => Sampler::Normal {
                mean,
                sd: variance.sqrt(),
            },
            Marginal::Poisson { rate } => Sampler::Poisson(PoissonTable::new(rate)),
        }
    }

    fn quantile(&self, u: f64) -> Result<f64> {
        match self {
            Sampler::Normal { mean, sd } => Ok(mean + sd * normal::quantile_unchecked(u)),
            Sampler::Poisson(t) => t.quantile(u).map(|k| k as f64),
        }
    }
}

/// Monte Carlo prediction of the missing labels.
///
/// Observed labels are mapped to latent normals through their (midpoint)
/// probability-integral transforms, `samples` draws are taken from the
/// conditional latent distribution, pushed back through `Φ` and each node's
/// marginal quantile, and averaged. `marginals` and `r` cover all nodes; the
/// result follows the order of `miss_idx`. Fixed `seed` gives bit-identical output.
pub fn infer_sample(
    r: &DenseMatrix,
    marginals: &MarginalModel,
    y_obs: &[f64],
    obs_idx: &[usize],
    miss_idx: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    if marginals.len() != r.rows() {
        return Err(Error::shape("infer_sample", r.shape(), (marginals.len(), 1)));
    }
    if y_obs.len() != obs_idx.len() {
        return Err(Error::shape("infer_sample", (y_obs.len(), 1), (obs_idx.len(), 1)));
    }
    let z_obs = obs_idx
        .iter()
        .zip(y_obs)
        .map(|(&i, &y)| {
            let u = marginals.node(i).midpoint_transform(y)?;
            normal::quantile(normal::clip_unit(u))
        })
        .collect::<Result<Vec<_>>>()?;
    let post = conditional_posterior(r, &z_obs, obs_idx, miss_idx)?;
    let q = post.dim();
    if q == 0 {
        return Ok(Vec::new());
    }
    let mut cov = post.cov;
    for i in 0..q {
        cov[(i, i)] += COND_JITTER;
    }
    let factor = Cholesky::new(&cov)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eps = DenseMatrix::zeros(q, samples);
    for l in 0..samples {
        for i in 0..q {
            eps[(i, l)] = StandardNormal.sample(&mut rng);
        }
    }
    let z = gemm(factor.lower(), false, &eps, false);

    let samplers: Vec<Sampler> = miss_idx.iter().map(|&i| Sampler::new(marginals.node(i))).collect();
    let inv_l = 1.0 / samples as f64;
    samplers
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut acc = 0.0;
            for &zi in z.row(i) {
                let u = normal::clip_unit(normal::cdf(post.mean[i] + zi));
                acc += s.quantile(u)? * inv_l;
            }
            Ok(acc)
        })
        .collect()
}
