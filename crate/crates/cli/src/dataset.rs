//! On-disk datasets: `features.csv`, `labels.csv`, `edges.txt`, `meta.json`,
//! plus an optional `mean.csv` holding the true label mean of generated data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use copulagraph::marginals::Family;
use copulagraph::synth::SynthData;
use copulagraph::{DenseMatrix, Error, Graph, Result};
use serde::{Deserialize, Serialize};

pub const FEATURES: &str = "features.csv";
pub const LABELS: &str = "labels.csv";
pub const EDGES: &str = "edges.txt";
pub const META: &str = "meta.json";
pub const MEAN: &str = "mean.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Continuous,
    Count,
}

impl LabelKind {
    pub fn family(self) -> Family {
        match self {
            LabelKind::Continuous => Family::Normal,
            LabelKind::Count => Family::Poisson,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub n: usize,
    pub d: usize,
    /// Edge count.
    pub s: usize,
    pub label_kind: LabelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<f64>,
    pub label_kind: LabelKind,
    pub mean: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn from_synth(data: SynthData, seed: u64) -> Self {
        Self {
            graph: data.graph,
            features: data.features,
            labels: data.labels,
            label_kind: LabelKind::Continuous,
            mean: Some(data.mean),
            seed: Some(seed),
        }
    }

    pub fn meta(&self) -> Meta {
        Meta {
            n: self.graph.node_count(),
            d: self.features.cols(),
            s: self.graph.edge_count(),
            label_kind: self.label_kind,
            seed: self.seed,
        }
    }

    pub fn family(&self) -> Family {
        self.label_kind.family()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut features = String::new();
        for i in 0..self.features.rows() {
            let row: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(features, "{}", row.join(","));
        }
        write(dir, FEATURES, &features)?;
        write(dir, LABELS, &column_text(&self.labels))?;
        write(dir, EDGES, &self.graph.to_edge_list())?;
        let meta = serde_json::to_string_pretty(&self.meta())? + "\n";
        write(dir, META, &meta)?;
        if let Some(mean) = &self.mean {
            write(dir, MEAN, &column_text(mean))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META);
        let meta_text = read(&meta_path)?;
        let de = &mut serde_json::Deserializer::from_str(&meta_text);
        let meta: Meta = serde_path_to_error::deserialize(de).map_err(|e| {
            let line = e.inner().line();
            Error::Parse {
                file: meta_path.display().to_string(),
                line,
                msg: format!("field `{}`: {}", e.path(), e.inner()),
            }
        })?;

        let features_path = dir.join(FEATURES);
        let rows = read_rows(&features_path, Some(meta.d))?;
        let feature_rows = rows.len();
        let labels_path = dir.join(LABELS);
        let labels: Vec<f64> = read_rows(&labels_path, Some(1))?.into_iter().map(|r| r[0]).collect();
        if feature_rows != labels.len() {
            return Err(Error::Config(format!(
                "{} has {feature_rows} rows but {} has {} rows",
                features_path.display(),
                labels_path.display(),
                labels.len()
            )));
        }
        if feature_rows != meta.n {
            return Err(Error::Config(format!(
                "{} declares n = {} but {} has {feature_rows} rows",
                meta_path.display(),
                meta.n,
                features_path.display()
            )));
        }
        if meta.label_kind == LabelKind::Count {
            for (i, &y) in labels.iter().enumerate() {
                if y < 0.0 || y.fract() != 0.0 {
                    return Err(Error::Parse {
                        file: labels_path.display().to_string(),
                        line: i + 1,
                        msg: format!("expected a nonnegative integer count, found {y}"),
                    });
                }
            }
        }

        let edges_path = dir.join(EDGES);
        let graph = Graph::parse_edge_list(meta.n, &read(&edges_path)?, &edges_path.display().to_string())?;
        if graph.edge_count() != meta.s {
            return Err(Error::Config(format!(
                "{} declares s = {} but {} has {} edges",
                meta_path.display(),
                meta.s,
                edges_path.display(),
                graph.edge_count()
            )));
        }

        let mean_path = dir.join(MEAN);
        let mean = if mean_path.exists() {
            let mean: Vec<f64> = read_rows(&mean_path, Some(1))?.into_iter().map(|r| r[0]).collect();
            if mean.len() != meta.n {
                return Err(Error::Config(format!(
                    "{} has {} rows, expected {}",
                    mean_path.display(),
                    mean.len(),
                    meta.n
                )));
            }
            Some(mean)
        } else {
            None
        };

        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(Self {
            graph,
            features: DenseMatrix::from_vec(meta.n, meta.d, flat)?,
            labels,
            label_kind: meta.label_kind,
            mean,
            seed: meta.seed,
        })
    }
}

fn column_text(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 8);
    for v in values {
        let _ = writeln!(s, "{v}");
    }
    s
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Headerless numeric CSV. Every row must have `width` fields when given.
fn read_rows(path: &Path, width: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let text = read(path)?;
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            file: file.clone(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let err = |msg: String| Error::Parse {
            file: file.clone(),
            line,
            msg,
        };
        if let Some(w) = width {
            if record.len() != w {
                return Err(err(format!("expected {w} values, found {}", record.len())));
            }
        }
        let row = record
            .iter()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("`{tok}` is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}
