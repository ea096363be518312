//! CSV ingestion, one-hot encoding with a missing category, median
//! imputation, min-max scaling and random splits.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fileio::read_structured;
use crate::models::Task;
use crate::numcore::{Rng, Tensor};
use crate::trainer::Targets;

/// Cell values treated as missing.
pub const MISSING_TOKENS: [&str; 7] = ["", "?", "NA", "N/A", "nan", "NaN", "null"];

/// Category name given to missing categorical cells.
pub const MISSING_CATEGORY: &str = "<missing>";

/// Names the target and categorical columns of a CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// CSV path, relative to the manifest's directory.
    pub path: PathBuf,
    pub target: String,
    pub task: Task,
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Columns dropped before encoding.
    #[serde(default)]
    pub ignore: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    Numeric { column: String },
    Category { column: String, value: String },
}

/// Encoded features (unscaled) and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    pub task: Task,
    pub x: Tensor,
    pub y: Targets,
    pub feature_names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
    /// Class names in label order (classification only).
    pub classes: Vec<String>,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn numeric_features(&self) -> Vec<usize> {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| matches!(k, FeatureKind::Numeric { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn real_targets(&self) -> Result<&[f64]> {
        match &self.y {
            Targets::Real(v) => Ok(v),
            Targets::Labels(_) => Err(Error::Data("dataset has class labels, not real targets".into())),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    MISSING_TOKENS.contains(&cell.trim())
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Parses CSV text with a header row and encodes it per `manifest`.
///
/// Numeric cells that are missing take the column median; categorical
/// columns are one-hot encoded over their sorted values, plus a
/// [`MISSING_CATEGORY`] indicator when any cell is missing.
pub fn parse_csv(text: &str, manifest: &Manifest) -> Result<TabularDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_col = headers
        .iter()
        .position(|h| *h == manifest.target)
        .ok_or_else(|| Error::Data(format!("target column \"{}\" not in header", manifest.target)))?;
    for name in manifest.categorical.iter().chain(&manifest.ignore) {
        if !headers.contains(name) {
            return Err(Error::Data(format!("column \"{name}\" not in header")));
        }
    }
    let mut records: Vec<Vec<String>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("line {}: {e}", i + 2)))?;
        if rec.len() != headers.len() {
            return Err(Error::Data(format!(
                "line {}: expected {} fields, found {}",
                i + 2,
                headers.len(),
                rec.len()
            )));
        }
        records.push(rec.iter().map(|c| c.trim().to_string()).collect());
    }
    if records.is_empty() {
        return Err(Error::Data("CSV has no data rows".into()));
    }
    let n = records.len();

    let missing_target: Vec<usize> = (0..n).filter(|&i| is_missing(&records[i][target_col])).map(|i| i + 2).collect();
    if !missing_target.is_empty() {
        return Err(Error::Data(format!("missing target on lines {missing_target:?}")));
    }
    let (y, classes) = match manifest.task {
        Task::Classification => {
            let classes: Vec<String> = records
                .iter()
                .map(|r| r[target_col].clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let labels = records
                .iter()
                .map(|r| classes.binary_search(&r[target_col]).expect("present"))
                .collect();
            (Targets::Labels(labels), classes)
        }
        _ => {
            let mut v = Vec::with_capacity(n);
            for (i, r) in records.iter().enumerate() {
                v.push(parse_number(&r[target_col], i + 2, &manifest.target)?);
            }
            (Targets::Real(v), Vec::new())
        }
    };

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut kinds = Vec::new();
    for (c, header) in headers.iter().enumerate() {
        if c == target_col || manifest.ignore.contains(header) {
            continue;
        }
        if manifest.categorical.contains(header) {
            let any_missing = records.iter().any(|r| is_missing(&r[c]));
            let mut values: Vec<String> = records
                .iter()
                .filter(|r| !is_missing(&r[c]))
                .map(|r| r[c].clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if any_missing {
                values.push(MISSING_CATEGORY.to_string());
            }
            for v in &values {
                let col = records
                    .iter()
                    .map(|r| {
                        let cell = if is_missing(&r[c]) { MISSING_CATEGORY } else { r[c].as_str() };
                        f64::from(u8::from(cell == v))
                    })
                    .collect();
                columns.push(col);
                names.push(format!("{header}={v}"));
                kinds.push(FeatureKind::Category {
                    column: header.clone(),
                    value: v.clone(),
                });
            }
        } else {
            let mut col = Vec::with_capacity(n);
            let mut observed = Vec::with_capacity(n);
            for (i, r) in records.iter().enumerate() {
                if is_missing(&r[c]) {
                    col.push(f64::NAN);
                } else {
                    let v = parse_number(&r[c], i + 2, header)?;
                    observed.push(v);
                    col.push(v);
                }
            }
            let fill = median(&mut observed);
            col.iter_mut().filter(|v| v.is_nan()).for_each(|v| *v = fill);
            columns.push(col);
            names.push(header.clone());
            kinds.push(FeatureKind::Numeric { column: header.clone() });
        }
    }
    if columns.is_empty() {
        return Err(Error::Data("no feature columns".into()));
    }
    let d = columns.len();
    let mut data = vec![0.0; n * d];
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            data[i * d + j] = *v;
        }
    }
    Ok(TabularDataset {
        task: manifest.task,
        x: Tensor::matrix(n, d, data)?,
        y,
        feature_names: names,
        kinds,
        classes,
    })
}

fn parse_number(cell: &str, line: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Data(format!("line {line}, column \"{column}\": cannot parse \"{cell}\" as a number"))),
    }
}

/// Loads a manifest (JSON or TOML) and the CSV it names.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(Manifest, TabularDataset)> {
    let path = path.as_ref();
    let manifest: Manifest = read_structured(path)?;
    let csv_path = path.parent().unwrap_or(Path::new(".")).join(&manifest.path);
    let text = std::fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let ds = parse_csv(&text, &manifest).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", csv_path.display())),
        other => other,
    })?;
    Ok((manifest, ds))
}

/// Per-column min-max scaling to `[0, 1]`; constant columns map to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &Tensor) -> Result<Self> {
        let (n, d) = x.dims()?;
        if n == 0 {
            return Err(Error::Data("cannot fit a scaler on zero rows".into()));
        }
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for i in 0..n {
            for (j, &v) in x.row(i).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn fit_values(v: &[f64]) -> Result<Self> {
        Self::fit(&Tensor::matrix(v.len(), 1, v.to_vec())?)
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims()?;
        if d != self.min.len() {
            return Err(Error::shape("scale", &[n, d], &[self.min.len()]));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.scale_one(j, *v);
            }
        }
        Tensor::matrix(n, d, data)
    }

    pub fn inverse(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims()?;
        if d != self.min.len() {
            return Err(Error::shape("unscale", &[n, d], &[self.min.len()]));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.unscale_one(j, *v);
            }
        }
        Tensor::matrix(n, d, data)
    }

    pub fn scale_one(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range > 0.0 {
            (v - self.min[j]) / range
        } else {
            0.0
        }
    }

    pub fn unscale_one(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range > 0.0 {
            self.min[j] + v * range
        } else {
            self.min[j]
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffled split with `round(test_fraction·n)` test rows; both index lists sorted.
pub fn random_split(n: usize, test_fraction: f64, rng: &mut Rng) -> Result<Split> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Parameter(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let perm = rng.permutation(n);
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, test })
}

/// Scaled train and test arrays; regression targets are scaled with train min/max.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub train_x: Tensor,
    pub train_y: Targets,
    pub test_x: Tensor,
    pub test_y: Targets,
    pub x_scaler: MinMaxScaler,
    pub y_scaler: Option<MinMaxScaler>,
}

fn select_targets(y: &Targets, idx: &[usize]) -> Targets {
    match y {
        Targets::Real(v) => Targets::Real(idx.iter().map(|&i| v[i]).collect()),
        Targets::Labels(v) => Targets::Labels(idx.iter().map(|&i| v[i]).collect()),
    }
}

/// Fits scalers on the training rows and applies them to both sides.
pub fn prepare(ds: &TabularDataset, split: &Split) -> Result<Prepared> {
    if split.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let raw_train = ds.x.select_rows(&split.train)?;
    let raw_test = ds.x.select_rows(&split.test)?;
    let x_scaler = MinMaxScaler::fit(&raw_train)?;
    let (mut train_y, mut test_y) = (select_targets(&ds.y, &split.train), select_targets(&ds.y, &split.test));
    let y_scaler = match (&mut train_y, &mut test_y) {
        (Targets::Real(tr), Targets::Real(te)) => {
            let s = MinMaxScaler::fit_values(tr)?;
            tr.iter_mut().for_each(|v| *v = s.scale_one(0, *v));
            te.iter_mut().for_each(|v| *v = s.scale_one(0, *v));
            Some(s)
        }
        _ => None,
    };
    Ok(Prepared {
        train_x: x_scaler.transform(&raw_train)?,
        train_y,
        test_x: x_scaler.transform(&raw_test)?,
        test_y,
        x_scaler,
        y_scaler,
    })
}

/// Loads a manifest, splits 80/20 at random and scales.
pub fn load_and_scale(manifest_path: impl AsRef<Path>, rng: &mut Rng) -> Result<(TabularDataset, Split, Prepared)> {
    let (_, ds) = load_manifest(manifest_path)?;
    let split = random_split(ds.len(), 0.2, rng)?;
    let prepared = prepare(&ds, &split)?;
    Ok((ds, split, prepared))
}
