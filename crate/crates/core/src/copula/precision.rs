use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::nets::PairRegressor;
use crate::params::{Bound, ParamSet};

/// `α = ALPHA_BOUND · tanh(a)` keeps `I - α·D⁻¹ᐟ²AD⁻¹ᐟ²` positive definite.
pub const ALPHA_BOUND: f64 = 0.99;

/// `softplus⁻¹(1)`
const SOFTPLUS_INV_ONE: f64 = 0.541_324_854_612_918_1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionKind {
    /// `K = β (I - α D⁻¹ᐟ² A D⁻¹ᐟ²)`
    TwoParamAlphaBeta,
    /// `K = τ⁻¹ (L + γ I)`
    TwoParamTauGamma,
    /// `K = I + D̂ - Â` with edge weights from a pairwise regressor.
    RegressionBased,
}

/// Constant graph inputs for realizing `K` on a tape.
pub struct PrecisionInputs<'t> {
    pub n: usize,
    pub identity: Var<'t>,
    /// `D⁻¹ᐟ² A D⁻¹ᐟ²`, needed by [`PrecisionKind::TwoParamAlphaBeta`].
    pub sym_adjacency: Option<Var<'t>>,
    /// `D - A`, needed by [`PrecisionKind::TwoParamTauGamma`].
    pub laplacian: Option<Var<'t>>,
    /// Features of edge sources and targets (one row per edge) and a ones column,
    /// needed by [`PrecisionKind::RegressionBased`].
    pub edge_sources: Option<Var<'t>>,
    pub edge_targets: Option<Var<'t>>,
    pub edge_ones: Option<Var<'t>>,
    pub edges: Arc<Vec<(usize, usize)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionModel {
    pub kind: PrecisionKind,
    pub pair: Option<PairRegressor>,
    pub prefix: String,
}

impl PrecisionModel {
    pub fn new(kind: PrecisionKind, feature_dim: usize) -> Result<Self> {
        let prefix = "prec".to_string();
        let pair = match kind {
            PrecisionKind::RegressionBased => {
                Some(PairRegressor::new(feature_dim, format!("{prefix}.h"))?)
            }
            _ => None,
        };
        Ok(Self { kind, pair, prefix })
    }

    fn a(&self) -> String {
        format!("{}.a", self.prefix)
    }

    fn b(&self) -> String {
        format!("{}.b", self.prefix)
    }

    /// Two-parameter kinds start at `α = 0, β = 1` or `τ = 1, γ = 1`.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut ParamSet) {
        match self.kind {
            PrecisionKind::TwoParamAlphaBeta => {
                params.insert(self.a(), DenseMatrix::scalar(0.0));
                params.insert(self.b(), DenseMatrix::scalar(SOFTPLUS_INV_ONE));
            }
            PrecisionKind::TwoParamTauGamma => {
                params.insert(self.a(), DenseMatrix::scalar(SOFTPLUS_INV_ONE));
                params.insert(self.b(), DenseMatrix::scalar(SOFTPLUS_INV_ONE));
            }
            PrecisionKind::RegressionBased => {
                if let Some(pair) = &self.pair {
                    pair.init(rng, params);
                }
            }
        }
    }

    /// Realizes `K` as a differentiable `n x n` node.
    pub fn realize<'t>(&self, params: &Bound<'t>, inputs: &PrecisionInputs<'t>) -> Result<Var<'t>> {
        let missing = |what: &str| Error::Config(format!("{what} required by {:?}", self.kind));
        match self.kind {
            PrecisionKind::TwoParamAlphaBeta => {
                let s = inputs.sym_adjacency.ok_or_else(|| missing("normalized adjacency"))?;
                let alpha = params.get(&self.a())?.tanh().scale(ALPHA_BOUND);
                let beta = params.get(&self.b())?.softplus();
                inputs.identity.sub(&s.scale_by(&alpha)?)?.scale_by(&beta)
            }
            PrecisionKind::TwoParamTauGamma => {
                let l = inputs.laplacian.ok_or_else(|| missing("laplacian"))?;
                let tau = params.get(&self.a())?.softplus();
                let gamma = params.get(&self.b())?.softplus();
                l.add(&inputs.identity.scale_by(&gamma)?)?.scale_by(&tau.recip())
            }
            PrecisionKind::RegressionBased => {
                let pair = self.pair.as_ref().ok_or_else(|| missing("pair regressor"))?;
                let src = inputs.edge_sources.ok_or_else(|| missing("edge features"))?;
                let dst = inputs.edge_targets.ok_or_else(|| missing("edge features"))?;
                let ones = inputs.edge_ones.ok_or_else(|| missing("edge features"))?;
                let forward = pair.forward(params, src, dst, ones)?;
                let backward = pair.forward(params, dst, src, ones)?;
                let weights = forward.add(&backward)?.scale(0.5).softplus();
                let lap = weights.weighted_laplacian(inputs.n, Arc::clone(&inputs.edges))?;
                inputs.identity.add(&lap)
            }
        }
    }

    /// Interpretable values of the two global parameters, if this kind has them.
    pub fn global_parameters(&self, params: &ParamSet) -> Option<(f64, f64)> {
        let a = params.get(&self.a()).ok()?.item();
        let b = params.get(&self.b()).ok()?.item();
        let sp = crate::autodiff::softplus;
        match self.kind {
            PrecisionKind::TwoParamAlphaBeta => Some((ALPHA_BOUND * a.tanh(), sp(b))),
            PrecisionKind::TwoParamTauGamma => Some((sp(a), sp(b))),
            PrecisionKind::RegressionBased => None,
        }
    }
}
