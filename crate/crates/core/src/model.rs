//! Model variants: a base network, optionally coupled through a Gaussian copula.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::copula::{correlation_matrix, infer_sample, nll_loss, PrecisionInputs, PrecisionKind, PrecisionModel};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::marginals::{Family, MarginalModel, VARIANCE_FLOOR};
use crate::matrix::{Cholesky, DenseMatrix};
use crate::nets::{GraphOps, Net, NetConfig, NetKind};
use crate::params::{Bound, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    None,
    AlphaBeta,
    TauGamma,
    Regression,
}

impl Coupling {
    pub const ALL: [Coupling; 4] = [Coupling::None, Coupling::AlphaBeta, Coupling::TauGamma, Coupling::Regression];

    pub fn precision_kind(self) -> Option<PrecisionKind> {
        match self {
            Coupling::None => None,
            Coupling::AlphaBeta => Some(PrecisionKind::TwoParamAlphaBeta),
            Coupling::TauGamma => Some(PrecisionKind::TwoParamTauGamma),
            Coupling::Regression => Some(PrecisionKind::RegressionBased),
        }
    }

    fn tag(self) -> Option<&'static str> {
        match self {
            Coupling::None => None,
            Coupling::AlphaBeta => Some("ab"),
            Coupling::TauGamma => Some("tg"),
            Coupling::Regression => Some("r"),
        }
    }
}

const BASES: [NetKind; 3] = [NetKind::Mlp, NetKind::Gcn, NetKind::Sage];

fn base_name(kind: NetKind) -> &'static str {
    match kind {
        NetKind::Mlp => "mlp",
        NetKind::Gcn => "gcn",
        NetKind::Sage => "sage",
    }
}

/// Which base network, which coupling, which marginal family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelVariant {
    pub base: NetKind,
    pub coupling: Coupling,
    pub family: Family,
}

impl ModelVariant {
    pub fn new(base: NetKind, coupling: Coupling, family: Family) -> Self {
        Self { base, coupling, family }
    }

    /// Lowercase identifier such as `gcn` or `r-c-gcn`.
    pub fn name(&self) -> String {
        let base = base_name(self.base);
        match self.coupling.tag() {
            None => base.to_string(),
            Some(tag) => format!("{tag}-c-{base}"),
        }
    }

    /// Display label such as `R-C-GCN`.
    pub fn label(&self) -> String {
        match self.coupling {
            Coupling::None => self.name().to_uppercase(),
            _ => self.name().to_uppercase().replace("AB-C", "αβ-C").replace("TG-C", "τγ-C"),
        }
    }

    pub fn valid_names() -> Vec<String> {
        let mut names = Vec::new();
        for coupling in Coupling::ALL {
            for base in BASES {
                names.push(ModelVariant::new(base, coupling, Family::Normal).name());
            }
        }
        names
    }

    pub fn parse(name: &str, family: Family) -> Result<Self> {
        let lower = name.trim().to_ascii_lowercase();
        for coupling in Coupling::ALL {
            for base in BASES {
                let v = ModelVariant::new(base, coupling, family);
                if v.name() == lower {
                    return Ok(v);
                }
            }
        }
        Err(Error::Config(format!(
            "unknown variant `{name}`; valid variants: {}",
            Self::valid_names().join(", ")
        )))
    }

    pub fn is_copula(&self) -> bool {
        self.coupling != Coupling::None
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Graph and feature matrices a model needs, precomputed once per dataset.
#[derive(Clone, Debug)]
pub struct GraphContext {
    pub graph: Graph,
    pub features: DenseMatrix,
    gcn: DenseMatrix,
    neighbor_mean: DenseMatrix,
    sym_adjacency: DenseMatrix,
    laplacian: DenseMatrix,
    edge_sources: DenseMatrix,
    edge_targets: DenseMatrix,
    edges: Arc<Vec<(usize, usize)>>,
}

impl GraphContext {
    pub fn new(graph: Graph, features: DenseMatrix) -> Result<Self> {
        if features.rows() != graph.node_count() {
            return Err(Error::Config(format!(
                "feature matrix has {} rows but the graph has {} nodes",
                features.rows(),
                graph.node_count()
            )));
        }
        let src: Vec<usize> = graph.edges().iter().map(|e| e.0).collect();
        let dst: Vec<usize> = graph.edges().iter().map(|e| e.1).collect();
        Ok(Self {
            gcn: graph.gcn_operator(),
            neighbor_mean: graph.neighbor_mean_operator(),
            sym_adjacency: graph.sym_normalized_adjacency(),
            laplacian: graph.laplacian(),
            edge_sources: features.select_rows(&src),
            edge_targets: features.select_rows(&dst),
            edges: Arc::new(graph.edges().to_vec()),
            graph,
            features,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// A variant instantiated for a feature dimension; parameters live in a [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub variant: ModelVariant,
    pub net: Net,
    pub precision: Option<PrecisionModel>,
}

impl Model {
    pub fn new(variant: ModelVariant, feature_dim: usize) -> Result<Self> {
        let net = Net::new(variant.base, NetConfig::new(feature_dim), "net")?;
        let precision = variant
            .coupling
            .precision_kind()
            .map(|kind| PrecisionModel::new(kind, feature_dim))
            .transpose()?;
        Ok(Self { variant, net, precision })
    }

    pub fn init(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        self.net.init(&mut rng, &mut params);
        if let Some(p) = &self.precision {
            p.init(&mut rng, &mut params);
        }
        params
    }

    /// Base network output over all nodes: the mean, or the log-rate for counts.
    pub fn location<'t>(&self, tape: &'t Tape, params: &Bound<'t>, ctx: &GraphContext) -> Result<Var<'t>> {
        let n = ctx.node_count();
        let ones = tape.constant(DenseMatrix::filled(n, 1, 1.0));
        let ops = match self.variant.base {
            NetKind::Mlp => GraphOps {
                gcn: ones,
                neighbor_mean: ones,
                ones,
            },
            NetKind::Gcn => GraphOps {
                gcn: tape.constant(ctx.gcn.clone()),
                neighbor_mean: ones,
                ones,
            },
            NetKind::Sage => GraphOps {
                gcn: ones,
                neighbor_mean: tape.constant(ctx.neighbor_mean.clone()),
                ones,
            },
        };
        self.net.forward(params, tape.constant(ctx.features.clone()), &ops)
    }

    /// The copula precision `K`, if the variant has one.
    pub fn precision_matrix<'t>(
        &self,
        tape: &'t Tape,
        params: &Bound<'t>,
        ctx: &GraphContext,
    ) -> Result<Option<Var<'t>>> {
        let Some(pm) = &self.precision else { return Ok(None) };
        let n = ctx.node_count();
        let mut inputs = PrecisionInputs {
            n,
            identity: tape.constant(DenseMatrix::identity(n)),
            sym_adjacency: None,
            laplacian: None,
            edge_sources: None,
            edge_targets: None,
            edge_ones: None,
            edges: Arc::clone(&ctx.edges),
        };
        match pm.kind {
            PrecisionKind::TwoParamAlphaBeta => inputs.sym_adjacency = Some(tape.constant(ctx.sym_adjacency.clone())),
            PrecisionKind::TwoParamTauGamma => inputs.laplacian = Some(tape.constant(ctx.laplacian.clone())),
            PrecisionKind::RegressionBased => {
                inputs.edge_sources = Some(tape.constant(ctx.edge_sources.clone()));
                inputs.edge_targets = Some(tape.constant(ctx.edge_targets.clone()));
                inputs.edge_ones = Some(tape.constant(DenseMatrix::filled(ctx.edges.len(), 1, 1.0)));
            }
        }
        pm.realize(params, &inputs).map(Some)
    }

    /// Training loss on the observed nodes: MSE or Poisson NLL for plain base
    /// networks, the copula negative log-likelihood otherwise.
    pub fn loss<'t>(
        &self,
        tape: &'t Tape,
        params: &Bound<'t>,
        ctx: &GraphContext,
        obs_idx: &[usize],
        y_obs: &[f64],
    ) -> Result<Var<'t>> {
        if obs_idx.len() != y_obs.len() || obs_idx.is_empty() {
            return Err(Error::shape("loss", (obs_idx.len(), 1), (y_obs.len(), 1)));
        }
        let loc = self.location(tape, params, ctx)?;
        if let Some(k) = self.precision_matrix(tape, params, ctx)? {
            return Ok(nll_loss(loc, k, self.variant.family, obs_idx, y_obs)?.loss);
        }
        let loc_obs = loc.gather_rows(obs_idx)?;
        let y = tape.constant(DenseMatrix::column(y_obs));
        match self.variant.family {
            Family::Normal => Ok(loc_obs.sub(&y)?.square().mean()),
            Family::Poisson => {
                check_counts(y_obs)?;
                let ln_fact = y_obs.iter().map(|&k| libm::lgamma(k + 1.0)).sum::<f64>() / y_obs.len() as f64;
                Ok(loc_obs.exp().sub(&y.mul(&loc_obs)?)?.mean().add_const(ln_fact))
            }
        }
    }

    /// Predictions for `target_idx`. Copula variants condition on the labels
    /// `y_obs` at `obs_idx` and average `samples` Monte Carlo draws; plain base
    /// networks return the marginal mean and ignore the observed labels.
    #[allow(clippy::too_many_arguments)]
    pub fn predict(
        &self,
        params: &ParamSet,
        ctx: &GraphContext,
        obs_idx: &[usize],
        y_obs: &[f64],
        target_idx: &[usize],
        samples: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let loc = self.location(&tape, &bound, ctx)?.value().clone().into_vec();
        let Some(k) = self.precision_matrix(&tape, &bound, ctx)? else {
            return Ok(target_idx
                .iter()
                .map(|&i| match self.variant.family {
                    Family::Normal => loc[i],
                    Family::Poisson => loc[i].exp(),
                })
                .collect());
        };
        // Only the observed and target nodes enter the conditional, so work on
        // that block of Σ with local indices.
        let nodes: Vec<usize> = obs_idx.iter().chain(target_idx).copied().collect();
        let sigma = Cholesky::new(&k.value().symmetrize())?.inverse_block(&nodes);
        let r = correlation_matrix(&sigma);
        let loc: Vec<f64> = nodes.iter().map(|&i| loc[i]).collect();
        let marginals = match self.variant.family {
            Family::Normal => {
                let var: Vec<f64> = sigma.diag().iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
                MarginalModel::normal(&loc, &var)?
            }
            Family::Poisson => {
                let rates: Vec<f64> = loc.iter().map(|v| v.exp()).collect();
                MarginalModel::poisson(&rates)?
            }
        };
        let local_obs: Vec<usize> = (0..obs_idx.len()).collect();
        let local_target: Vec<usize> = (obs_idx.len()..nodes.len()).collect();
        infer_sample(&r, &marginals, y_obs, &local_obs, &local_target, samples, seed)
    }
}

fn check_counts(y: &[f64]) -> Result<()> {
    match y.iter().find(|v| !(**v >= 0.0 && v.fract() == 0.0)) {
        Some(v) => Err(Error::Domain(format!("count label must be a nonnegative integer, got {v}"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for name in ModelVariant::valid_names() {
            let v = ModelVariant::parse(&name, Family::Normal).unwrap();
            assert_eq!(v.name(), name);
        }
        assert_eq!(
            ModelVariant::parse("R-C-GCN", Family::Poisson).unwrap(),
            ModelVariant::new(NetKind::Gcn, Coupling::Regression, Family::Poisson)
        );
        assert_eq!(ModelVariant::parse("ab-c-sage", Family::Normal).unwrap().label(), "αβ-C-SAGE");
    }

    #[test]
    fn unknown_variant_lists_choices() {
        let msg = ModelVariant::parse("gat", Family::Normal).unwrap_err().to_string();
        assert!(msg.contains("r-c-gcn") && msg.contains("mlp"));
    }

    #[test]
    fn plain_normal_loss_is_mse() {
        let g = Graph::new(3, [(0, 1)]).unwrap();
        let x = DenseMatrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64 * 0.3);
        let ctx = GraphContext::new(g, x).unwrap();
        let model = Model::new(ModelVariant::new(NetKind::Gcn, Coupling::None, Family::Normal), 2).unwrap();
        let params = model.init(1);
        let tape = Tape::new();
        let b = params.bind(&tape);
        let loss = model.loss(&tape, &b, &ctx, &[0, 2], &[1.0, -1.0]).unwrap().item();
        let pred = model.predict(&params, &ctx, &[], &[], &[0, 2], 1, 0).unwrap();
        let mse = ((pred[0] - 1.0).powi(2) + (pred[1] + 1.0).powi(2)) / 2.0;
        assert!((loss - mse).abs() < 1e-14);
    }

    #[test]
    fn context_checks_rows() {
        assert!(GraphContext::new(Graph::empty(3), DenseMatrix::zeros(2, 1)).is_err());
    }
}
