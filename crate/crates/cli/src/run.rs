//! Single training runs on a dataset directory: checkpoints and result records.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use copulagraph::marginals::Family;
use copulagraph::model::{GraphContext, Model, ModelVariant};
use copulagraph::params::ParamSet;
use copulagraph::synth::{self, Split};
use copulagraph::trainer::{derive_seed, evaluate, train, EpochRecord, TrainConfig};
use copulagraph::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;

pub const CHECKPOINT: &str = "checkpoint.json";
pub const RESULT: &str = "result.json";

/// Everything needed to rerun a training run bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub variant: String,
    pub seed: u64,
    pub split: [f64; 3],
    /// `train.seed` is derived from `seed`.
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn new(dataset: PathBuf, variant: &ModelVariant, seed: u64, train: TrainConfig) -> Self {
        Self {
            dataset,
            variant: variant.name(),
            seed,
            split: [1.0 / 3.0; 3],
            train: TrainConfig {
                seed: derive_seed(seed, 2),
                ..train
            },
        }
    }

    pub fn split_for(&self, n: usize) -> Result<Split> {
        synth::split(n, self.split, derive_seed(self.seed, 1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub variant: String,
    pub family: Family,
    pub feature_dim: usize,
    pub config: RunConfig,
    pub params: ParamSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    /// `r2` for continuous labels, `r2_deviance` for counts.
    pub metric: String,
    pub test_metric: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub history: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
    pub config: RunConfig,
}

pub fn metric_name(family: Family) -> &'static str {
    match family {
        Family::Normal => "r2",
        Family::Poisson => "r2_deviance",
    }
}

pub fn train_run(data: &Dataset, config: &RunConfig) -> Result<(Checkpoint, RunResult)> {
    let start = Instant::now();
    let family = data.family();
    let variant = ModelVariant::parse(&config.variant, family)?;
    let split = config.split_for(data.graph.node_count())?;
    let ctx = GraphContext::new(data.graph.clone(), data.features.clone())?;
    let model = Model::new(variant, ctx.feature_dim())?;
    let outcome = train(&model, &ctx, &data.labels, &split, &config.train)?;
    let eval = evaluate(&model, &ctx, &outcome.params, &data.labels, &split, &config.train)?;
    let checkpoint = Checkpoint {
        variant: variant.name(),
        family,
        feature_dim: ctx.feature_dim(),
        config: config.clone(),
        params: outcome.params,
    };
    let result = RunResult {
        variant: variant.name(),
        seed: config.seed,
        metric: metric_name(family).to_string(),
        test_metric: eval.metric,
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.len(),
        history: outcome.history,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    Ok((checkpoint, result))
}

/// Test metric of a saved checkpoint, with the split and seeds of its run.
pub fn evaluate_checkpoint(data: &Dataset, checkpoint: &Checkpoint, test_samples: Option<usize>) -> Result<f64> {
    if data.family() != checkpoint.family {
        return Err(Error::Config(format!(
            "checkpoint was trained on {:?} labels but the dataset has {:?} labels",
            checkpoint.family,
            data.family()
        )));
    }
    let variant = ModelVariant::parse(&checkpoint.variant, checkpoint.family)?;
    let ctx = GraphContext::new(data.graph.clone(), data.features.clone())?;
    let model = Model::new(variant, ctx.feature_dim())?;
    model.init(0).check_compatible(&checkpoint.params)?;
    let split = checkpoint.config.split_for(data.graph.node_count())?;
    let mut train_cfg = checkpoint.config.train.clone();
    if let Some(l) = test_samples {
        train_cfg.test_samples = l;
    }
    Ok(evaluate(&model, &ctx, &checkpoint.params, &data.labels, &split, &train_cfg)?.metric)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.inner().line(),
        msg: format!("field `{}`: {}", e.path(), e.inner()),
    })
}
