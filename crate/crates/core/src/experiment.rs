//! Repeated-trial experiments on generated data and their summaries.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::marginals::{Family, PoissonTable};
use crate::matrix::{Cholesky, DenseMatrix};
use crate::model::{Coupling, GraphContext, Model, ModelVariant};
use crate::nets::NetKind;
use crate::normal;
use crate::par::{self, Execution};
use crate::stats::{mean, paired_t_test, sem, significance_marker};
use crate::synth::{self, SynthConfig};
use crate::trainer::{derive_seed, evaluate, train, EpochRecord, TrainConfig};

/// Count labels from a Gaussian-copula-coupled Poisson field on a generated graph.
///
/// The log-rate is `base_log_rate + signal_scale · s`, where `s` is the
/// standardized aggregated-feature mean of the graph generator. Latent normals
/// have the correlation of `(L + γI)⁻¹`; each label is the Poisson quantile of
/// its latent normal's CDF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountFieldConfig {
    pub graph: SynthConfig,
    pub base_log_rate: f64,
    pub signal_scale: f64,
    pub gamma: f64,
}

impl Default for CountFieldConfig {
    fn default() -> Self {
        Self {
            graph: SynthConfig::default(),
            base_log_rate: 1.0,
            signal_scale: 0.5,
            gamma: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CountField {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<f64>,
    pub rates: Vec<f64>,
}

pub fn generate_count_field(cfg: &CountFieldConfig) -> Result<CountField> {
    if !(cfg.gamma > 0.0) {
        return Err(Error::Config(format!("field `gamma`: must be positive, got {}", cfg.gamma)));
    }
    let base = synth::generate(&cfg.graph)?;
    let m = mean(&base.mean);
    let sd = (base.mean.iter().map(|v| (v - m).powi(2)).sum::<f64>() / base.mean.len() as f64).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let rates: Vec<f64> = base
        .mean
        .iter()
        .map(|v| (cfg.base_log_rate + cfg.signal_scale * (v - m) / sd).exp())
        .collect();

    let factor = Cholesky::new(&synth::graph_precision(&base.graph, 1.0, cfg.gamma))?;
    let marginal_sd: Vec<f64> = factor.inverse().diag().iter().map(|v| v.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.graph.seed, 0xC0));
    let eps: Vec<f64> = (0..rates.len()).map(|_| rng.sample(StandardNormal)).collect();
    let latent = factor.solve_upper(&eps);
    let labels = latent
        .iter()
        .zip(&marginal_sd)
        .zip(&rates)
        .map(|((w, s), &rate)| {
            let u = normal::clip_unit(normal::cdf(w / s));
            PoissonTable::new(rate).quantile(u).map(|k| k as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CountField {
        graph: base.graph,
        features: base.features,
        labels,
        rates,
    })
}

/// Where each trial's data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Gaussian(SynthConfig),
    Counts(CountFieldConfig),
}

impl DataSource {
    pub fn family(&self) -> Family {
        match self {
            DataSource::Gaussian(_) => Family::Normal,
            DataSource::Counts(_) => Family::Poisson,
        }
    }

    fn generate(&self, seed: u64) -> Result<(Graph, DenseMatrix, Vec<f64>)> {
        match self {
            DataSource::Gaussian(cfg) => {
                let d = synth::generate(&SynthConfig { seed, ..cfg.clone() })?;
                Ok((d.graph, d.features, d.labels))
            }
            DataSource::Counts(cfg) => {
                let mut cfg = cfg.clone();
                cfg.graph.seed = seed;
                let d = generate_count_field(&cfg)?;
                Ok((d.graph, d.features, d.labels))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub variants: Vec<ModelVariant>,
    pub trials: usize,
    pub seed: u64,
    pub split: [f64; 3],
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub data_seed: u64,
    pub variant: String,
    pub test_metric: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub wall_clock_secs: f64,
    pub history: Vec<EpochRecord>,
}

/// One dataset and split per trial, shared by all variants so results pair up.
pub fn run_trial(spec: &ExperimentSpec, trial: usize) -> Result<Vec<TrialRecord>> {
    let data_seed = derive_seed(spec.seed, trial as u64);
    let (graph, features, labels) = spec.data.generate(data_seed)?;
    let split = synth::split(graph.node_count(), spec.split, derive_seed(data_seed, 1))?;
    let ctx = GraphContext::new(graph, features)?;
    let train_cfg = TrainConfig {
        seed: derive_seed(data_seed, 2),
        ..spec.train.clone()
    };
    spec.variants
        .iter()
        .map(|&variant| {
            let start = Instant::now();
            let model = Model::new(variant, ctx.feature_dim())?;
            let outcome = train(&model, &ctx, &labels, &split, &train_cfg)?;
            let eval = evaluate(&model, &ctx, &outcome.params, &labels, &split, &train_cfg)?;
            Ok(TrialRecord {
                trial,
                data_seed,
                variant: variant.name(),
                test_metric: eval.metric,
                best_epoch: outcome.best_epoch,
                epochs: outcome.history.len(),
                wall_clock_secs: start.elapsed().as_secs_f64(),
                history: outcome.history,
            })
        })
        .collect()
}

/// All trials, fanned out over the worker pool; records are ordered by trial.
pub fn run_experiment(spec: &ExperimentSpec, exec: Execution) -> Result<Vec<TrialRecord>> {
    if spec.trials == 0 || spec.variants.is_empty() {
        return Err(Error::Config("an experiment needs at least one trial and one variant".into()));
    }
    for v in &spec.variants {
        if v.family != spec.data.family() {
            return Err(Error::Config(format!("variant {} does not match the data's label family", v.name())));
        }
    }
    let per_trial = par::map(exec, spec.trials, |t| run_trial(spec, t));
    let mut out = Vec::new();
    for r in per_trial {
        out.extend(r?);
    }
    Ok(out)
}

/// Mean ± SEM of one variant in one grid cell, tested against its reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub param: f64,
    pub variant: String,
    pub trials: usize,
    pub mean: f64,
    pub sem: f64,
    pub reference: Option<String>,
    pub p_value: Option<f64>,
    pub marker: String,
}

/// Copula variants compare against their base network, graph networks against the MLP.
pub fn reference_variant(v: &ModelVariant) -> Option<ModelVariant> {
    match (v.coupling, v.base) {
        (Coupling::None, NetKind::Mlp) => None,
        (Coupling::None, _) => Some(ModelVariant::new(NetKind::Mlp, Coupling::None, v.family)),
        _ => Some(ModelVariant::new(v.base, Coupling::None, v.family)),
    }
}

fn metrics_of(records: &[TrialRecord], name: &str) -> Vec<(usize, f64)> {
    records
        .iter()
        .filter(|r| r.variant == name)
        .map(|r| (r.trial, r.test_metric))
        .collect()
}

pub fn summarize(records: &[TrialRecord], variants: &[ModelVariant], param: f64) -> Result<Vec<CellSummary>> {
    variants
        .iter()
        .map(|v| {
            let own = metrics_of(records, &v.name());
            let values: Vec<f64> = own.iter().map(|p| p.1).collect();
            let reference = reference_variant(v).filter(|r| variants.contains(r));
            let p_value = match &reference {
                Some(r) => {
                    let other = metrics_of(records, &r.name());
                    let (a, b): (Vec<f64>, Vec<f64>) = own
                        .iter()
                        .filter_map(|(t, x)| other.iter().find(|(u, _)| u == t).map(|(_, y)| (*x, *y)))
                        .unzip();
                    paired_t_test(&a, &b).ok().map(|t| t.p_value)
                }
                None => None,
            };
            Ok(CellSummary {
                param,
                variant: v.label(),
                trials: values.len(),
                mean: mean(&values),
                sem: sem(&values),
                reference: reference.map(|r| r.label()),
                marker: p_value.map(significance_marker).unwrap_or("").to_string(),
                p_value,
            })
        })
        .collect()
}

/// CSV with one row per cell; `marker` holds the asterisks of the paired t-test.
pub fn summary_csv(setting: &str, cells: &[CellSummary]) -> String {
    let mut out = String::from("setting,param,variant,trials,mean,sem,reference,p_value,marker\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{setting},{},{},{},{:.6},{:.6},{},{},{}",
            c.param,
            c.variant,
            c.trials,
            c.mean,
            c.sem,
            c.reference.as_deref().unwrap_or(""),
            c.p_value.map(|p| format!("{p:.6}")).unwrap_or_default(),
            c.marker
        );
    }
    out
}

/// `mean ± sem` with markers, one row per variant and one column per parameter.
pub fn summary_table(cells: &[CellSummary]) -> String {
    let mut params: Vec<f64> = Vec::new();
    let mut variants: Vec<String> = Vec::new();
    for c in cells {
        if !params.contains(&c.param) {
            params.push(c.param);
        }
        if !variants.contains(&c.variant) {
            variants.push(c.variant.clone());
        }
    }
    let mut out = format!("{:<12}", "");
    for p in &params {
        let _ = write!(out, "{:>22}", format!("{p}"));
    }
    out.push('\n');
    for v in &variants {
        let _ = write!(out, "{v:<12}");
        for p in &params {
            let cell = cells.iter().find(|c| &c.variant == v && c.param == *p);
            let text = cell
                .map(|c| format!("{:.3} ± {:.3}{}", c.mean, c.sem, c.marker))
                .unwrap_or_default();
            let _ = write!(out, "{text:>22}");
        }
        out.push('\n');
    }
    out
}
