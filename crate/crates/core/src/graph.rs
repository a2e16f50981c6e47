//! Undirected simple graphs and the dense operators derived from them.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Immutable undirected graph without self-loops or duplicate edges.
///
/// Edges are stored as `(i, j)` with `i < j`, sorted lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Config(format!(
                    "edge ({a}, {b}) has an endpoint outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::Config(format!("self-loop on node {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::Config(format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(Self {
            n,
            edges: set.into_iter().collect(),
        })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            edges: Vec::new(),
        }
    }

    /// Parses the whitespace-separated `i j` edge-list format, one edge per line.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse_edge_list(n: usize, text: &str, file: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                file: file.to_string(),
                line: lineno + 1,
                msg,
            };
            let mut it = line.split_whitespace();
            let mut next = || -> Result<usize> {
                let tok = it
                    .next()
                    .ok_or_else(|| parse_err("expected two node indices `i j`".into()))?;
                tok.parse()
                    .map_err(|_| parse_err(format!("`{tok}` is not a node index")))
            };
            let (a, b) = (next()?, next()?);
            if it.next().is_some() {
                return Err(parse_err("expected exactly two node indices".into()));
            }
            if a >= n || b >= n || a == b {
                return Err(parse_err(format!(
                    "edge ({a}, {b}) invalid for a graph on {n} nodes"
                )));
            }
            edges.push((a, b));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &edges {
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::Parse {
                    file: file.to_string(),
                    line: 0,
                    msg: format!("duplicate edge ({a}, {b})"),
                });
            }
        }
        Self::new(n, edges)
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = String::with_capacity(self.edges.len() * 8);
        for (a, b) in &self.edges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn adjacency(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// `L = D - A`.
    pub fn laplacian(&self) -> DenseMatrix {
        let mut l = self.adjacency().scale(-1.0);
        for (i, d) in self.degrees().into_iter().enumerate() {
            l[(i, i)] = d as f64;
        }
        l
    }

    /// `D̃⁻¹ Ã` with `Ã = A + I`: row-stochastic mean over the closed neighborhood.
    pub fn mean_aggregation_operator(&self) -> DenseMatrix {
        let mut m = self.adjacency();
        let deg = self.degrees();
        for i in 0..self.n {
            m[(i, i)] = 1.0;
            let inv = 1.0 / (deg[i] as f64 + 1.0);
            m.row_mut(i).iter_mut().for_each(|v| *v *= inv);
        }
        m
    }

    /// `D⁻¹ᐟ² A D⁻¹ᐟ²`; isolated nodes get a zero row and column.
    pub fn sym_normalized_adjacency(&self) -> DenseMatrix {
        let scale: Vec<f64> = self
            .degrees()
            .into_iter()
            .map(|d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
            .collect();
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            let v = scale[i] * scale[j];
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// `D̃⁻¹ᐟ² Ã D̃⁻¹ᐟ²`, the renormalized propagation operator of GCN.
    pub fn gcn_operator(&self) -> DenseMatrix {
        let scale: Vec<f64> = self
            .degrees()
            .into_iter()
            .map(|d| 1.0 / (d as f64 + 1.0).sqrt())
            .collect();
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            m[(i, i)] = scale[i] * scale[i];
        }
        for &(i, j) in &self.edges {
            let v = scale[i] * scale[j];
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// `D⁻¹ A`: mean over open neighborhoods, zero row for isolated nodes.
    pub fn neighbor_mean_operator(&self) -> DenseMatrix {
        let mut m = self.adjacency();
        for (i, d) in self.degrees().into_iter().enumerate() {
            if d > 0 {
                let inv = 1.0 / d as f64;
                m.row_mut(i).iter_mut().for_each(|v| *v *= inv);
            }
        }
        m
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::Config("permutation length differs from node count".into()));
        }
        Self::new(self.n, self.edges.iter().map(|&(a, b)| (perm[a], perm[b])))
    }
}
