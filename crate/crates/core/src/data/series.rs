//! Univariate series: windowing and chronological splits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::tabular::MinMaxScaler;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// `(context, target)` pairs: `contexts` is `n×L`, `targets` is `n×H`, and
/// window `w` covers series indices `starts[w] .. starts[w] + L + H`.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub contexts: Tensor,
    pub targets: Tensor,
    pub starts: Vec<usize>,
}

impl Windows {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

fn windows_from(series: &[f64], l: usize, h: usize, starts: Vec<usize>) -> Result<Windows> {
    let n = starts.len();
    if n == 0 {
        return Err(Error::Data(format!(
            "series of length {} yields no windows for L = {l}, H = {h}",
            series.len()
        )));
    }
    let mut ctx = Vec::with_capacity(n * l);
    let mut tgt = Vec::with_capacity(n * h);
    for &s in &starts {
        ctx.extend_from_slice(&series[s..s + l]);
        tgt.extend_from_slice(&series[s + l..s + l + h]);
    }
    Ok(Windows {
        contexts: Tensor::matrix(n, l, ctx)?,
        targets: Tensor::matrix(n, h, tgt)?,
        starts,
    })
}

/// All stride-1 windows of length `L + H`.
pub fn window_series(series: &[f64], l: usize, h: usize) -> Result<Windows> {
    if l == 0 || h == 0 {
        return Err(Error::Parameter("context and horizon must be at least 1".into()));
    }
    if series.len() < l + h {
        return Err(Error::Data(format!(
            "series of length {} is shorter than L + H = {}",
            series.len(),
            l + h
        )));
    }
    windows_from(series, l, h, (0..=series.len() - l - h).collect())
}

/// Chronological split at `boundary`: training windows lie entirely before
/// it; test windows have every target at or after it (contexts may reach back).
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesSplit {
    pub boundary: usize,
    pub train: Windows,
    pub test: Windows,
    pub scaler: MinMaxScaler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSplitSummary {
    pub boundary: usize,
    pub train_windows: usize,
    pub test_windows: usize,
}

/// Scales with the training part's min/max, then windows both sides.
pub fn split_series(series: &[f64], boundary: usize, l: usize, h: usize) -> Result<SeriesSplit> {
    if boundary < l + h || boundary > series.len() {
        return Err(Error::Data(format!(
            "boundary {boundary} leaves no training window in a series of length {}",
            series.len()
        )));
    }
    let scaler = MinMaxScaler::fit_values(&series[..boundary])?;
    let scaled: Vec<f64> = series.iter().map(|&v| scaler.scale_one(0, v)).collect();
    let train = windows_from(&scaled, l, h, (0..=boundary - l - h).collect())?;
    let first_test = boundary.saturating_sub(l);
    let test_starts: Vec<usize> = (first_test..=series.len().saturating_sub(l + h))
        .filter(|&s| s + l + h <= series.len())
        .collect();
    let test = windows_from(&scaled, l, h, test_starts)?;
    Ok(SeriesSplit {
        boundary,
        train,
        test,
        scaler,
    })
}

/// Reads one numeric column (by name, or the first column) of a CSV file.
pub fn load_series_csv(path: impl AsRef<Path>, column: Option<&str>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let col = match column {
        Some(name) => headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("{}: no column \"{name}\"", path.display())))?,
        None => 0,
    };
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: line {}: {e}", path.display(), i + 2)))?;
        let cell = rec.get(col).unwrap_or("").trim();
        let v: f64 = cell.parse().map_err(|_| {
            Error::Data(format!("{}: line {}: cannot parse \"{cell}\"", path.display(), i + 2))
        })?;
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_series(&ramp(17), 12, 5).unwrap().len(), 1);
        assert_eq!(window_series(&ramp(18), 12, 5).unwrap().len(), 2);
        assert!(matches!(window_series(&ramp(16), 12, 5), Err(Error::Data(_))));
    }

    #[test]
    fn targets_follow_contexts() {
        let w = window_series(&ramp(30), 12, 5).unwrap();
        for (k, &s) in w.starts.iter().enumerate() {
            for j in 0..5 {
                assert_eq!(w.targets.get(k, j), (s + 12 + j) as f64);
            }
        }
    }

    #[test]
    fn chronological_split_on_toy() {
        // Length 30, boundary 20, L = 3, H = 2.
        let sp = split_series(&ramp(30), 20, 3, 2).unwrap();
        // Training windows end by index 19: starts 0..=15.
        assert_eq!(sp.train.starts, (0..=15).collect::<Vec<_>>());
        // Test windows' first target is at index ≥ 20: starts 17..=25.
        assert_eq!(sp.test.starts, (17..=25).collect::<Vec<_>>());
        for &s in &sp.test.starts {
            assert!(s + 3 >= 20);
        }
        // Scaling uses the training part only.
        assert_eq!(sp.scaler.max[0], 19.0);
    }
}
