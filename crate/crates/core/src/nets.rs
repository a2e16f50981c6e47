//! Base predictors for the marginal location parameters (MLP, GCN, GraphSAGE)
//! and the pairwise edge regressor used by the regression-based precision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::params::{glorot, Bound, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Linear hidden layers; only useful for testing.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub activation: Activation,
}

impl NetConfig {
    pub fn new(in_dim: usize) -> Self {
        Self {
            in_dim,
            hidden_dim: 16,
            layers: 2,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if self.in_dim == 0 {
            return Err(Error::Config("in_dim must be at least 1".into()));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let fan_in = if l == 0 { self.in_dim } else { self.hidden_dim };
                let fan_out = if l + 1 == self.layers { 1 } else { self.hidden_dim };
                (fan_in, fan_out)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Mlp,
    Gcn,
    Sage,
}

/// Dense graph operators a network may propagate with.
pub struct GraphOps<'t> {
    /// `D̃⁻¹ᐟ² Ã D̃⁻¹ᐟ²`
    pub gcn: Var<'t>,
    /// `D⁻¹ A`
    pub neighbor_mean: Var<'t>,
    /// Column of ones, one row per node.
    pub ones: Var<'t>,
}

/// A base network description; weights live in a [`ParamSet`] under `prefix`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub kind: NetKind,
    pub config: NetConfig,
    pub prefix: String,
}

impl Net {
    pub fn new(kind: NetKind, config: NetConfig, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            kind,
            config,
            prefix: prefix.into(),
        })
    }

    fn name(&self, what: &str, layer: usize) -> String {
        format!("{}.{what}{layer}", self.prefix)
    }

    /// Glorot weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut ParamSet) {
        for (l, (fan_in, fan_out)) in self.config.layer_dims().into_iter().enumerate() {
            params.insert(self.name("w", l), glorot(rng, fan_in, fan_out));
            if self.kind == NetKind::Sage {
                params.insert(self.name("wn", l), glorot(rng, fan_in, fan_out));
            }
            params.insert(self.name("b", l), DenseMatrix::zeros(1, fan_out));
        }
    }

    /// Output column, one row per node.
    pub fn forward<'t>(
        &self,
        params: &Bound<'t>,
        x: Var<'t>,
        ops: &GraphOps<'t>,
    ) -> Result<Var<'t>> {
        let (_, d) = x.shape();
        if d != self.config.in_dim {
            return Err(Error::shape("net input", (0, d), (0, self.config.in_dim)));
        }
        let mut h = x;
        for l in 0..self.config.layers {
            let w = params.get(&self.name("w", l))?;
            let b = params.get(&self.name("b", l))?;
            let lin = match self.kind {
                NetKind::Mlp => h.matmul(&w)?,
                NetKind::Gcn => ops.gcn.matmul(&h.matmul(&w)?)?,
                NetKind::Sage => {
                    let wn = params.get(&self.name("wn", l))?;
                    let agg = ops.neighbor_mean.matmul(&h)?;
                    h.matmul(&w)?.add(&agg.matmul(&wn)?)?
                }
            };
            let pre = lin.add(&ops.ones.matmul(&b)?)?;
            h = if l + 1 == self.config.layers {
                pre
            } else {
                activate(pre, self.config.activation)
            };
        }
        Ok(h)
    }
}

fn activate(v: Var<'_>, act: Activation) -> Var<'_> {
    match act {
        Activation::Relu => v.relu(),
        Activation::Identity => v,
    }
}

/// Two-layer MLP `h(x_i, x_j)` on the concatenation `[x_i | x_j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRegressor {
    pub net: Net,
}

impl PairRegressor {
    pub fn new(feature_dim: usize, prefix: impl Into<String>) -> Result<Self> {
        let config = NetConfig::new(2 * feature_dim);
        Ok(Self {
            net: Net::new(NetKind::Mlp, config, prefix)?,
        })
    }

    pub fn with_config(config: NetConfig, prefix: impl Into<String>) -> Result<Self> {
        if config.in_dim % 2 != 0 {
            return Err(Error::Config("pair regressor input must be an even concatenation".into()));
        }
        Ok(Self {
            net: Net::new(NetKind::Mlp, config, prefix)?,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut ParamSet) {
        self.net.init(rng, params);
    }

    /// Evaluates `h` on each row of `left` paired with the same row of `right`.
    pub fn forward<'t>(
        &self,
        params: &Bound<'t>,
        left: Var<'t>,
        right: Var<'t>,
        ones: Var<'t>,
    ) -> Result<Var<'t>> {
        let input = left.concat_cols(&right)?;
        // MLP layers never touch the graph operators.
        let ops = GraphOps {
            gcn: ones,
            neighbor_mean: ones,
            ones,
        };
        self.net.forward(params, input, &ops)
    }
}
