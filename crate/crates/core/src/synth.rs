//! Latent-space synthetic graphs with Gaussian node outcomes.
//!
//! Features are i.i.d. standard normal, the graph joins the `s` node pairs that
//! are closest in the latent space `Z = X W_g`, and labels are drawn from
//! `N(μ, Σ)` where the graph enters the mean (aggregated features), the
//! covariance (`τ (L + γI)⁻¹`), or both.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::{gemm, Cholesky, DenseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// `μ = D̃⁻¹ÃXw`, `Σ = σ²I`: the graph only shapes the mean.
    A,
    /// `μ = Xw`, `Σ = τ(L + γI)⁻¹`: the graph only shapes the covariance.
    B,
    /// `μ = D̃⁻¹ÃXw`, `Σ = τ(L + γI)⁻¹`.
    C,
}

impl Setting {
    pub fn aggregated_mean(self) -> bool {
        matches!(self, Setting::A | Setting::C)
    }

    pub fn graph_covariance(self) -> bool {
        matches!(self, Setting::B | Setting::C)
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Setting::A),
            "b" => Ok(Setting::B),
            "c" => Ok(Setting::C),
            other => Err(Error::Config(format!("unknown setting `{other}` (expected a, b or c)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub s: usize,
    pub d0: usize,
    /// Latent dimension; `None` means `d0`.
    pub d1: Option<usize>,
    pub setting: Setting,
    /// Noise variance for setting A.
    pub sigma2: f64,
    /// Covariance scale for settings B and C.
    pub tau: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 300,
            s: 5000,
            d0: 10,
            d1: None,
            setting: Setting::C,
            sigma2: 5.0,
            tau: 1.0,
            gamma: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn latent_dim(&self) -> usize {
        self.d1.unwrap_or(self.d0)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::Config(format!("field `{name}`: {msg}")));
        if self.n < 2 {
            return field("n", format!("need at least 2 nodes, got {}", self.n));
        }
        let max_edges = self.n * (self.n - 1) / 2;
        if self.s > max_edges {
            return field("s", format!("{} edges exceed the {max_edges} possible pairs", self.s));
        }
        if self.d0 == 0 {
            return field("d0", "must be at least 1".into());
        }
        if self.latent_dim() == 0 {
            return field("d1", "must be at least 1".into());
        }
        for (name, v) in [("sigma2", self.sigma2), ("tau", self.tau), ("gamma", self.gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return field(name, format!("must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }
}

/// One generated dataset.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<f64>,
    /// The true label mean `μ`.
    pub mean: Vec<f64>,
    pub graph_weights: DenseMatrix,
    pub label_weights: Vec<f64>,
}

fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// The `s` pairs with the smallest latent distance; ties go to the lexicographically
/// smaller pair.
pub fn nearest_pairs(latent: &DenseMatrix, s: usize) -> Vec<(usize, usize)> {
    let n = latent.rows();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = latent
                .row(i)
                .iter()
                .zip(latent.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            pairs.push((d2, i, j));
        }
    }
    let by_key = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2)))
    };
    if s < pairs.len() {
        pairs.select_nth_unstable_by(s, by_key);
        pairs.truncate(s);
    }
    pairs.sort_by(by_key);
    pairs.into_iter().map(|(_, i, j)| (i, j)).collect()
}

/// Draws `y ~ N(mean, Σ)` with `Σ = σ²I` or `Σ = τ(L + γI)⁻¹` depending on the setting.
///
/// The graph covariance is sampled through the Cholesky factor `C` of the
/// precision `(L + γI)/τ` as `mean + C⁻ᵀε`, without forming `Σ`.
pub fn sample_labels<R: Rng + ?Sized>(
    rng: &mut R,
    graph: &Graph,
    mean: &[f64],
    cfg: &SynthConfig,
) -> Result<Vec<f64>> {
    let eps: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
    if !cfg.setting.graph_covariance() {
        let sd = cfg.sigma2.sqrt();
        return Ok(mean.iter().zip(&eps).map(|(m, e)| m + sd * e).collect());
    }
    let factor = Cholesky::new(&graph_precision(graph, cfg.tau, cfg.gamma))?;
    let noise = factor.solve_upper(&eps);
    Ok(mean.iter().zip(&noise).map(|(m, e)| m + e).collect())
}

/// `(L + γI) / τ`
pub fn graph_precision(graph: &Graph, tau: f64, gamma: f64) -> DenseMatrix {
    let mut k = graph.laplacian();
    for i in 0..graph.node_count() {
        k[(i, i)] += gamma;
    }
    k.scale(1.0 / tau)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let features = normal_matrix(&mut rng, cfg.n, cfg.d0);
    let graph_weights = normal_matrix(&mut rng, cfg.d0, cfg.latent_dim());
    let label_weights: Vec<f64> = (0..cfg.d0).map(|_| rng.sample(StandardNormal)).collect();

    let latent = gemm(&features, false, &graph_weights, false);
    let graph = Graph::new(cfg.n, nearest_pairs(&latent, cfg.s))?;

    let linear = features.matvec(&label_weights)?;
    let mean = if cfg.setting.aggregated_mean() {
        graph.mean_aggregation_operator().matvec(&linear)?
    } else {
        linear
    };
    let labels = sample_labels(&mut rng, &graph, &mean, cfg)?;
    Ok(SynthData {
        graph,
        features,
        labels,
        mean,
        graph_weights,
        label_weights,
    })
}

/// Node partition for semi-supervised training.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Training and validation nodes together, sorted.
    pub fn labeled(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.train.iter().chain(&self.val).copied().collect();
        v.sort_unstable();
        v
    }
}

/// Seeded random partition into train/validation/test parts of the given proportions.
/// Part sizes are rounded; the test part takes the remainder.
pub fn split(n: usize, ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {total}")));
    }
    let n_train = (n as f64 * ratios[0]).round() as usize;
    let n_val = (n as f64 * ratios[1]).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Config(format!(
            "split of {n} nodes by {ratios:?} leaves an empty part"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = perm[..n_train].to_vec();
    let mut val = perm[n_train..n_train + n_val].to_vec();
    let mut test = perm[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, val, test })
}
