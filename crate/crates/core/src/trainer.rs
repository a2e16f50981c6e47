//! Full-batch Adam training with early stopping on a validation score.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::marginals::Family;
use crate::metrics::{poisson_deviance, r2, r2_deviance, sse};
use crate::model::{GraphContext, Model};
use crate::params::ParamSet;
use crate::synth::Split;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Predicted rates below this are raised to it before computing deviances.
pub const RATE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Monte Carlo draws for validation predictions of copula variants.
    pub val_samples: usize,
    /// Monte Carlo draws for test predictions of copula variants.
    pub test_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_epochs: 1000,
            patience: 50,
            seed: 0,
            val_samples: 200,
            test_samples: 2000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "field `learning_rate`: must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("val_samples", self.val_samples),
            ("test_samples", self.test_samples),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("field `{name}`: must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Adam first and second moments plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: ParamSet,
    v: ParamSet,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = |p: &ParamSet| {
            let mut z = p.clone();
            for (_, v) in z.iter_mut() {
                v.data_mut().fill(0.0);
            }
            z
        };
        Self {
            m: zeros(params),
            v: zeros(params),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    params.check_compatible(grads)?;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?.data();
        let m = state.m.get_mut(name).expect("moments follow params").data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
        }
        let v = state.v.get_mut(name).expect("moments follow params").data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
        }
        let m = state.m.get(name)?.data();
        let v = state.v.get(name)?.data();
        for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pi -= lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// R² (continuous) or R²-deviance (counts) on the validation nodes; `None` when undefined.
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub params: ParamSet,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Independent seed streams derived from one user seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_VAL: u64 = 2;
const STREAM_TEST: u64 = 3;

fn gather(y: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| y[i]).collect()
}

/// Goodness of fit on held-out nodes plus a score that orders fits the same way
/// and stays defined when the metric is not (negative SSE or negative deviance).
fn score(family: Family, y: &[f64], y_hat: &[f64]) -> Result<(Option<f64>, f64)> {
    match family {
        Family::Normal => {
            let metric = r2(y, y_hat).ok();
            Ok((metric, -sse(y, y_hat)))
        }
        Family::Poisson => {
            let floored: Vec<f64> = y_hat.iter().map(|v| v.max(RATE_FLOOR)).collect();
            let metric = r2_deviance(y, &floored).ok();
            Ok((metric, -poisson_deviance(y, &floored)?))
        }
    }
}

fn check_labels(ctx: &GraphContext, labels: &[f64], split: &Split) -> Result<()> {
    let n = ctx.node_count();
    if labels.len() != n {
        return Err(Error::Config(format!("{} labels for {n} nodes", labels.len())));
    }
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Config("training and validation sets must be nonempty".into()));
    }
    if let Some(&i) = split.train.iter().chain(&split.val).chain(&split.test).find(|&&i| i >= n) {
        return Err(Error::Config(format!("split index {i} out of range for {n} nodes")));
    }
    Ok(())
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
///
/// Each epoch scores the current parameters on the validation nodes (copula
/// variants condition on the training labels), keeps the best parameters seen,
/// then takes one Adam step on the training loss. Stops after `patience`
/// epochs without improvement.
pub fn train(model: &Model, ctx: &GraphContext, labels: &[f64], split: &Split, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_labels(ctx, labels, split)?;
    let y_train = gather(labels, &split.train);
    let y_val = gather(labels, &split.val);
    let val_seed = derive_seed(cfg.seed, STREAM_VAL);

    let mut params = model.init(derive_seed(cfg.seed, STREAM_INIT));
    let mut adam = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let at_epoch = |e: Error| Error::Training {
            epoch,
            source: Box::new(e),
        };
        let (loss, grads) = {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let loss = model
                .loss(&tape, &bound, ctx, &split.train, &y_train)
                .map_err(at_epoch)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(at_epoch(Error::Numerical(format!("training loss is {value}"))));
            }
            let grads = bound.gradients(&tape.backward(loss).map_err(at_epoch)?);
            (value, grads)
        };
        if grads.iter().any(|(_, g)| !g.all_finite()) {
            return Err(at_epoch(Error::Numerical("non-finite gradient".into())));
        }

        let pred = model
            .predict(&params, ctx, &split.train, &y_train, &split.val, cfg.val_samples, val_seed)
            .map_err(at_epoch)?;
        let (val_metric, val_score) = score(model.variant.family, &y_val, &pred).map_err(at_epoch)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss,
            val_metric,
        });
        if val_score > best_score {
            best_score = val_score;
            best_epoch = epoch;
            best = params.clone();
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }

        adam_step(&mut params, &grads, &mut adam, cfg.learning_rate).map_err(at_epoch)?;
    }
    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// R² or R²-deviance on the test nodes.
    pub metric: f64,
    pub predictions: Vec<f64>,
}

/// Test-set score. Copula variants condition on the training and validation labels.
pub fn evaluate(
    model: &Model,
    ctx: &GraphContext,
    params: &ParamSet,
    labels: &[f64],
    split: &Split,
    cfg: &TrainConfig,
) -> Result<Evaluation> {
    check_labels(ctx, labels, split)?;
    let obs = split.labeled();
    let y_obs = gather(labels, &obs);
    let y_test = gather(labels, &split.test);
    let predictions = model.predict(
        params,
        ctx,
        &obs,
        &y_obs,
        &split.test,
        cfg.test_samples,
        derive_seed(cfg.seed, STREAM_TEST),
    )?;
    let metric = match model.variant.family {
        Family::Normal => r2(&y_test, &predictions)?,
        Family::Poisson => {
            let floored: Vec<f64> = predictions.iter().map(|v| v.max(RATE_FLOOR)).collect();
            r2_deviance(&y_test, &floored)?
        }
    };
    Ok(Evaluation { metric, predictions })
}
