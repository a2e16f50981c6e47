#![allow(dead_code)]

pub mod fd;

use copulagraph::params::ParamSet;
use copulagraph::{DenseMatrix, Graph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `BBᵀ/n + I` for a standard normal `B`.
pub fn spd(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let b = normal_matrix(rng, n, n);
    let mut a = b.matmul(&b.transpose()).unwrap().scale(1.0 / n as f64);
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    a
}

/// Erdős–Rényi graph with edge probability `p`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges).unwrap()
}

/// Ring plus random chords, so every node has at least two neighbours.
pub fn connected_graph(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Graph {
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let key = (a.min(b), a.max(b));
        if a != b && !edges.iter().any(|&(x, y)| (x.min(y), x.max(y)) == key) {
            edges.push((a, b));
        }
    }
    Graph::new(n, edges).unwrap()
}

/// `(log |det A|, A⁻¹b)` by Gaussian elimination with partial pivoting.
pub fn lu_logdet_solve(a: &DenseMatrix, b: &[f64]) -> (f64, Vec<f64>) {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut x = b.to_vec();
    let mut logdet = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        x.swap(c, p);
        logdet += m[c][c].abs().ln();
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
            x[r] -= f * x[c];
        }
    }
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| m[c][k] * x[k]).sum();
        x[c] = (x[c] - s) / m[c][c];
    }
    (logdet, x)
}

/// Dense `log N(x; mu, cov)`.
pub fn mvn_log_density(x: &[f64], mu: &[f64], cov: &DenseMatrix) -> f64 {
    let n = x.len();
    let r: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let (logdet, w) = lu_logdet_solve(cov, &r);
    let quad: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

/// Adds uniform noise in `[-scale, scale)` to every parameter scalar.
pub fn perturbed(params: &ParamSet, r: &mut ChaCha8Rng, scale: f64) -> ParamSet {
    let mut p = params.clone();
    for (_, m) in p.iter_mut() {
        for v in m.data_mut() {
            *v += scale * r.random_range(-1.0..1.0);
        }
    }
    p
}

/// Textbook Cholesky–Banachiewicz factor, rows of `L` with `A = LLᵀ`.
pub fn reference_cholesky(a: &DenseMatrix) -> Vec<Vec<f64>> {
    let n = a.rows();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][i] = (a[(i, i)] - s).sqrt();
            } else {
                l[i][j] = (a[(i, j)] - s) / l[j][j];
            }
        }
    }
    l
}

/// `A⁻¹` column by column through [`lu_logdet_solve`].
pub fn lu_inverse(a: &DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    let mut inv = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let (_, col) = lu_logdet_solve(a, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    inv
}
