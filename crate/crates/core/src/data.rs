//! Dataset ingestion, normalization, splitting and synthetic generators.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DpklError, Result};
use crate::linalg::Matrix;
use crate::seeds::{rng_for, shuffled_indices};

const STREAM_SPLIT: u64 = 7;
const STREAM_SYNTH: u64 = 8;

/// Features plus real-valued targets. Class labels are stored as integral
/// values in `y`; see [`Dataset::class_labels`].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(DpklError::dims("dataset targets", x.rows(), y.len()));
        }
        Ok(Dataset {
            x,
            y,
            feature_names: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Targets as class indices `0..C`; `C` is one more than the largest label.
    pub fn class_labels(&self) -> Result<(Vec<usize>, usize)> {
        let mut labels = Vec::with_capacity(self.y.len());
        for (i, &v) in self.y.iter().enumerate() {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(DpklError::Schema(format!(
                    "row {}: class label {v} is not a non-negative integer",
                    i + 1
                )));
            }
            labels.push(v as usize);
        }
        let classes = labels.iter().max().map_or(0, |&c| c + 1);
        Ok((labels, classes))
    }
}

/// Column layout of a delimited input file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Header name, or a 0-based column index.
    pub target_column: String,
    pub delimiter: u8,
    pub has_header: bool,
}

impl CsvSchema {
    pub fn new(target_column: impl Into<String>) -> Self {
        CsvSchema {
            target_column: target_column.into(),
            delimiter: b',',
            has_header: true,
        }
    }
}

struct Table {
    header: Option<Vec<String>>,
    rows: Vec<Vec<f64>>,
}

fn read_table<R: Read>(reader: R, schema: &CsvSchema) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = if schema.has_header {
        Some(rdr.headers()?.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };
    let offset = usize::from(schema.has_header);
    let mut width = header.as_ref().map(Vec::len);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 1 + offset;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(DpklError::Parse {
                row: line,
                col: rec.len().min(w) + 1,
                message: format!("expected {w} fields, found {}", rec.len()),
            });
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(DpklError::Parse {
                    row: line,
                    col: j + 1,
                    message: format!("non-finite value `{cell}`"),
                }),
                Err(_) => Err(DpklError::Parse {
                    row: line,
                    col: j + 1,
                    message: format!("not a number: `{cell}`"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn target_index(table: &Table, schema: &CsvSchema, width: usize) -> Option<usize> {
    if let Some(h) = &table.header {
        if let Some(j) = h.iter().position(|c| c == &schema.target_column) {
            return Some(j);
        }
    }
    schema.target_column.parse::<usize>().ok().filter(|&j| j < width)
}

fn assemble(table: Table, target: Option<usize>, require_rows: bool) -> Result<Dataset> {
    let width = table
        .header
        .as_ref()
        .map(Vec::len)
        .or_else(|| table.rows.first().map(Vec::len))
        .unwrap_or(0);
    if require_rows && table.rows.is_empty() {
        return Err(DpklError::InsufficientData("no data rows".into()));
    }
    let feature_cols: Vec<usize> = (0..width).filter(|&j| Some(j) != target).collect();
    let n = table.rows.len();
    let x = Matrix::from_fn(n, feature_cols.len(), |i, k| table.rows[i][feature_cols[k]]);
    let y = match target {
        Some(t) => table.rows.iter().map(|r| r[t]).collect(),
        None => vec![f64::NAN; n],
    };
    let feature_names = table
        .header
        .map(|h| feature_cols.iter().map(|&j| h[j].clone()).collect());
    Ok(Dataset { x, y, feature_names })
}

/// Parses a delimited table with a target column.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let table = read_table(reader, schema)?;
    let width = table
        .header
        .as_ref()
        .map(Vec::len)
        .or_else(|| table.rows.first().map(Vec::len))
        .unwrap_or(0);
    let target = target_index(&table, schema, width)
        .ok_or_else(|| DpklError::MissingTarget(schema.target_column.clone()))?;
    assemble(table, Some(target), true)
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, schema)
}

/// Parses a query table; the target column is dropped when present and the
/// returned targets are NaN otherwise.
pub fn read_features<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let table = read_table(reader, schema)?;
    let target = table
        .header
        .as_ref()
        .and_then(|h| h.iter().position(|c| c == &schema.target_column));
    assemble(table, target, false)
}

pub fn load_features(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    read_features(std::fs::File::open(path)?, schema)
}

/// Per-column standardization captured from training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub label_mean: f64,
    pub label_std: f64,
}

fn mean_and_pop_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count().max(1) as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn clamp_std(std: f64, what: &str) -> f64 {
    if std > 0.0 && std.is_finite() {
        std
    } else {
        log::warn!("{what} is constant on the training rows; using std 1");
        1.0
    }
}

impl NormStats {
    /// Population mean/std of `train`. Labels are left as-is unless
    /// `normalize_labels`; features unless `normalize_features`.
    pub fn fit(train: &Dataset, normalize_features: bool, normalize_labels: bool) -> NormStats {
        let d = train.dim();
        let (mut feature_mean, mut feature_std) = (vec![0.0; d], vec![1.0; d]);
        if normalize_features {
            for j in 0..d {
                let (m, s) = mean_and_pop_std((0..train.n()).map(|i| train.x[(i, j)]));
                feature_mean[j] = m;
                let name = train
                    .feature_names
                    .as_ref()
                    .map_or_else(|| format!("feature {j}"), |n| format!("feature `{}`", n[j]));
                feature_std[j] = clamp_std(s, &name);
            }
        }
        let (label_mean, label_std) = if normalize_labels {
            let (m, s) = mean_and_pop_std(train.y.iter().copied());
            (m, clamp_std(s, "label"))
        } else {
            (0.0, 1.0)
        };
        NormStats {
            feature_mean,
            feature_std,
            label_mean,
            label_std,
        }
    }

    pub fn dim(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn apply_x(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(DpklError::dims("feature count", self.dim(), x.cols()));
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            (x[(i, j)] - self.feature_mean[j]) / self.feature_std[j]
        }))
    }

    pub fn apply_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.label_mean) / self.label_std).collect()
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            x: self.apply_x(&ds.x)?,
            y: self.apply_y(&ds.y),
            feature_names: ds.feature_names.clone(),
        })
    }

    pub fn invert_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v * self.label_std + self.label_mean).collect()
    }

    pub fn invert_x(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] * self.feature_std[j] + self.feature_mean[j])
    }

    /// Scales a normalized-unit variance back to original units.
    pub fn invert_variance(&self, v: f64) -> f64 {
        v * self.label_std * self.label_std
    }
}

/// Fits stats on `train` and applies them to `train` and every `other`.
pub fn normalize(
    train: &Dataset,
    others: &[&Dataset],
    normalize_features: bool,
    normalize_labels: bool,
) -> Result<(Dataset, Vec<Dataset>, NormStats)> {
    let stats = NormStats::fit(train, normalize_features, normalize_labels);
    let train_n = stats.apply(train)?;
    let others_n = others.iter().map(|d| stats.apply(d)).collect::<Result<_>>()?;
    Ok((train_n, others_n, stats))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub labeled: Dataset,
    /// Features only.
    pub unlabeled: Matrix,
    pub test: Dataset,
    /// Row indices of each part in the source dataset.
    pub indices: [Vec<usize>; 3],
}

/// Seeded shuffle, then contiguous labeled / unlabeled / test slices.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let need = spec.n_labeled + spec.n_unlabeled + spec.n_test;
    if need > ds.n() {
        return Err(DpklError::InsufficientRows {
            requested: need,
            available: ds.n(),
        });
    }
    let idx = shuffled_indices(ds.n(), &mut rng_for(spec.seed, STREAM_SPLIT));
    let a = spec.n_labeled;
    let b = a + spec.n_unlabeled;
    let lab = idx[..a].to_vec();
    let unl = idx[a..b].to_vec();
    let test = idx[b..need].to_vec();
    Ok(Splits {
        labeled: ds.select(&lab),
        unlabeled: ds.x.select_rows(&unl),
        test: ds.select(&test),
        indices: [lab, unl, test],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Sine,
    Step,
    Friedman,
}

impl std::str::FromStr for SynthKind {
    type Err = DpklError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sine" => Ok(SynthKind::Sine),
            "step" => Ok(SynthKind::Step),
            "friedman" => Ok(SynthKind::Friedman),
            other => Err(DpklError::Config(format!("unknown synthetic dataset `{other}`"))),
        }
    }
}

/// `x ~ U[0,1]^D` with a deterministic response plus Gaussian noise:
/// sine `sin(2πx₁)`, step `±1` at `x₁ = 0.5`, or the Friedman #1 function.
pub fn synth_regression(kind: SynthKind, n: usize, d: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(DpklError::Config("synthetic data needs n >= 1 and D >= 1".into()));
    }
    if kind == SynthKind::Friedman && d < 5 {
        return Err(DpklError::Config(format!("friedman data needs D >= 5, got {d}")));
    }
    if !(noise_std >= 0.0) {
        return Err(DpklError::Config(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut rng = rng_for(seed, STREAM_SYNTH);
    let x = Matrix::from_fn(n, d, |_, _| rng.gen_range(0.0..1.0));
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let y = (0..n)
        .map(|i| {
            let r = x.row(i);
            let f = match kind {
                SynthKind::Sine => (2.0 * PI * r[0]).sin(),
                SynthKind::Step => {
                    if r[0] < 0.5 {
                        -1.0
                    } else {
                        1.0
                    }
                }
                SynthKind::Friedman => {
                    10.0 * (PI * r[0] * r[1]).sin() + 20.0 * (r[2] - 0.5).powi(2) + 10.0 * r[3] + 5.0 * r[4]
                }
            };
            if noise_std > 0.0 {
                f + noise.sample(&mut rng)
            } else {
                f
            }
        })
        .collect();
    Dataset::new(x, y)
}

/// Isotropic unit-variance Gaussian blobs, `n_per_class` each, with class
/// centers pairwise `separation` apart where the dimension allows it
/// (simplex vertices when `d_in ≥ C`, a regular polygon otherwise).
pub fn synth_blobs(classes: usize, n_per_class: usize, d_in: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(DpklError::Config(format!("need at least 2 classes, got {classes}")));
    }
    if d_in == 0 {
        return Err(DpklError::Config("blobs need d_in >= 1".into()));
    }
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut v = vec![0.0; d_in];
            if d_in >= classes {
                v[c] = separation / 2f64.sqrt();
            } else if d_in >= 2 {
                let r = separation / (2.0 * (PI / classes as f64).sin());
                let t = 2.0 * PI * c as f64 / classes as f64;
                v[0] = r * t.cos();
                v[1] = r * t.sin();
            } else {
                v[0] = separation * c as f64;
            }
            v
        })
        .collect();
    let mut rng = rng_for(seed, STREAM_SYNTH);
    let unit = Normal::new(0.0, 1.0).expect("valid std");
    let n = classes * n_per_class;
    let mut data = Vec::with_capacity(n * d_in);
    let mut y = Vec::with_capacity(n);
    for k in 0..n {
        let c = k % classes;
        data.extend(centers[c].iter().map(|&m| m + unit.sample(&mut rng)));
        y.push(c as f64);
    }
    Dataset::new(Matrix::from_vec(n, d_in, data)?, y)
}
