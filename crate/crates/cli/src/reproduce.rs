//! Grids of repeated trials on generated data.

use std::path::Path;

use copulagraph::experiment::{run_experiment, summarize, summary_csv, summary_table, CellSummary, DataSource, ExperimentSpec, TrialRecord};
use copulagraph::marginals::Family;
use copulagraph::model::{Coupling, ModelVariant};
use copulagraph::nets::NetKind;
use copulagraph::par::Execution;
use copulagraph::synth::{Setting, SynthConfig};
use copulagraph::trainer::TrainConfig;
use copulagraph::{Error, Result};
use serde::Serialize;

use crate::run::write_json;

pub fn simulation_variants() -> Vec<ModelVariant> {
    [NetKind::Mlp, NetKind::Gcn, NetKind::Sage]
        .into_iter()
        .map(|b| ModelVariant::new(b, Coupling::None, Family::Normal))
        .collect()
}

/// MLP, then each graph network followed by its αβ and regression copula variants.
pub fn table_variants() -> Vec<ModelVariant> {
    let mut out = vec![ModelVariant::new(NetKind::Mlp, Coupling::None, Family::Normal)];
    for base in [NetKind::Gcn, NetKind::Sage] {
        for coupling in [Coupling::None, Coupling::AlphaBeta, Coupling::Regression] {
            out.push(ModelVariant::new(base, coupling, Family::Normal));
        }
    }
    out
}

/// Default parameter grid: σ² for setting A, τ otherwise.
pub fn default_grid(setting: Setting) -> Vec<f64> {
    match setting {
        Setting::A => vec![1.0, 5.0, 10.0],
        Setting::B | Setting::C => vec![0.5, 1.0, 2.0, 5.0],
    }
}

#[derive(Clone, Debug)]
pub struct GridRun {
    pub setting: Setting,
    pub grid: Vec<f64>,
    pub variants: Vec<ModelVariant>,
    pub trials: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

#[derive(Serialize)]
struct CellRecords<'a> {
    param: f64,
    spec: &'a ExperimentSpec,
    records: &'a [TrialRecord],
}

impl GridRun {
    pub fn spec(&self, param: f64) -> ExperimentSpec {
        let mut data = SynthConfig {
            setting: self.setting,
            ..Default::default()
        };
        match self.setting {
            Setting::A => data.sigma2 = param,
            Setting::B | Setting::C => data.tau = param,
        }
        ExperimentSpec {
            data: DataSource::Gaussian(data),
            variants: self.variants.clone(),
            trials: self.trials,
            seed: self.seed,
            split: [1.0 / 3.0; 3],
            train: self.train.clone(),
        }
    }

    /// Runs every cell; writes `summary.csv` and `records.json` into `out_dir`.
    pub fn execute(&self, out_dir: &Path, exec: Execution) -> Result<Vec<CellSummary>> {
        if self.grid.is_empty() {
            return Err(Error::Config("the parameter grid is empty".into()));
        }
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut cells = Vec::new();
        let mut specs = Vec::new();
        let mut all = Vec::new();
        for &param in &self.grid {
            let spec = self.spec(param);
            let records = run_experiment(&spec, exec)?;
            cells.extend(summarize(&records, &self.variants, param)?);
            specs.push(spec);
            all.push((param, records));
        }
        let dump: Vec<CellRecords> = specs
            .iter()
            .zip(&all)
            .map(|(spec, (param, records))| CellRecords {
                param: *param,
                spec,
                records,
            })
            .collect();
        write_json(&out_dir.join("records.json"), &dump)?;
        let csv = summary_csv(&format!("{:?}", self.setting).to_lowercase(), &cells);
        let path = out_dir.join("summary.csv");
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        Ok(cells)
    }
}

pub fn render(cells: &[CellSummary]) -> String {
    summary_table(cells)
}
