//! Data ingestion and preprocessing, rolling one-step-ahead forecasting, and
//! evaluation metrics.
//!
//! The CSV schema is a header row of variable names, an optional second
//! header row of stationarity transform codes (integers 1-6), and data rows
//! of decimal literals. Missing values are rejected with their location.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Stationarity transform code:
/// 1 none, 2 first difference, 3 second difference, 4 log,
/// 5 first difference of log, 6 second difference of log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformCode(u8);

impl TransformCode {
    pub fn new(code: u8) -> Result<Self> {
        if (1..=6).contains(&code) {
            Ok(Self(code))
        } else {
            Err(Error::InvalidArgument(format!(
                "transform code must be 1..=6, got {code}"
            )))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }

    /// Number of leading observations lost to differencing.
    pub fn order(self) -> usize {
        match self.0 {
            1 | 4 => 0,
            2 | 5 => 1,
            3 | 6 => 2,
            _ => unreachable!(),
        }
    }

    fn takes_log(self) -> bool {
        matches!(self.0, 4..=6)
    }
}

/// Per-variable standardization statistics (population convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// A multivariate sequence: `len() x n_vars()` values, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    names: Vec<String>,
    values: Matrix,
    codes: Option<Vec<TransformCode>>,
    standardization: Option<Standardization>,
}

impl Series {
    pub fn new(names: Vec<String>, values: Matrix) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(Error::ShapeMismatch(format!(
                "{} names for {} columns",
                names.len(),
                values.cols()
            )));
        }
        Ok(Self {
            names,
            values,
            codes: None,
            standardization: None,
        })
    }

    /// Series with default names `y1..yN`.
    pub fn with_default_names(values: Matrix) -> Self {
        let names = (1..=values.cols()).map(|i| format!("y{i}")).collect();
        Self {
            names,
            values,
            codes: None,
            standardization: None,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Number of time points.
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn codes(&self) -> Option<&[TransformCode]> {
        self.codes.as_deref()
    }

    pub fn set_codes(&mut self, codes: Option<Vec<TransformCode>>) {
        self.codes = codes;
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rows `start..end` as a new series.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Series> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "row range {start}..{end} out of bounds for {} rows",
                self.len()
            )));
        }
        let values = Matrix::from_fn(end - start, self.n_vars(), |i, j| {
            self.values.get(start + i, j)
        });
        Ok(Series {
            names: self.names.clone(),
            values,
            codes: self.codes.clone(),
            standardization: self.standardization.clone(),
        })
    }
}

/// Applies one transform code to one column. Output is shorter than the input
/// by the differencing order of the code.
pub fn apply_transform(column: &[f64], code: TransformCode) -> Result<Vec<f64>> {
    let logged: Vec<f64> = if code.takes_log() {
        let mut out = Vec::with_capacity(column.len());
        for (row, &v) in column.iter().enumerate() {
            if v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "log transform (code {}) needs positive values, got {v} at row {row}",
                    code.code()
                )));
            }
            out.push(v.ln());
        }
        out
    } else {
        column.to_vec()
    };

    let diff = |v: &[f64]| -> Vec<f64> { v.windows(2).map(|w| w[1] - w[0]).collect() };
    let out = match code.order() {
        0 => logged,
        1 => diff(&logged),
        2 => diff(&diff(&logged)),
        _ => unreachable!(),
    };
    Ok(out)
}

/// Applies per-column codes and trims all columns to the common aligned
/// length (leading rows are dropped, keeping one global time index).
pub fn transform_series(s: &Series, codes: &[TransformCode]) -> Result<Series> {
    if codes.len() != s.n_vars() {
        return Err(Error::ShapeMismatch(format!(
            "{} transform codes for {} variables",
            codes.len(),
            s.n_vars()
        )));
    }
    let max_order = codes.iter().map(|c| c.order()).max().unwrap_or(0);
    if s.len() <= max_order {
        return Err(Error::InvalidArgument(format!(
            "series of length {} is too short for differencing order {max_order}",
            s.len()
        )));
    }
    let aligned = s.len() - max_order;
    let mut values = Matrix::zeros(aligned, s.n_vars());
    for (j, code) in codes.iter().enumerate() {
        let column = s.values.col(j);
        let transformed = apply_transform(&column, *code)
            .map_err(|e| Error::InvalidArgument(format!("variable {}: {e}", s.names[j])))?;
        let skip = transformed.len() - aligned;
        for (i, &v) in transformed[skip..].iter().enumerate() {
            values.set(i, j, v);
        }
    }
    let mut out = Series::new(s.names.clone(), values)?;
    out.codes = Some(codes.to_vec());
    Ok(out)
}

/// Standardizes every column to zero mean and unit variance, with statistics
/// estimated on `stats_rows` (population convention, divisor T).
pub fn standardize(
    s: &Series,
    stats_rows: std::ops::Range<usize>,
) -> Result<(Series, Standardization)> {
    let t = stats_rows.len();
    if t < 2 || stats_rows.end > s.len() {
        return Err(Error::InvalidArgument(format!(
            "stats range {stats_rows:?} needs at least 2 rows inside 0..{}",
            s.len()
        )));
    }
    let n = s.n_vars();
    let mut means = vec![0.0; n];
    let mut sds = vec![0.0; n];
    for j in 0..n {
        let mut sum = 0.0;
        for i in stats_rows.clone() {
            sum += s.values.get(i, j);
        }
        let mean = sum / t as f64;
        let mut ss = 0.0;
        for i in stats_rows.clone() {
            let d = s.values.get(i, j) - mean;
            ss += d * d;
        }
        let sd = (ss / t as f64).sqrt();
        if sd == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "variable {} has zero variance over the stats range",
                s.names[j]
            )));
        }
        means[j] = mean;
        sds[j] = sd;
    }
    let values = Matrix::from_fn(s.len(), n, |i, j| (s.values.get(i, j) - means[j]) / sds[j]);
    let stats = Standardization { means, sds };
    let mut out = Series::new(s.names.clone(), values)?;
    out.codes = s.codes.clone();
    out.standardization = Some(stats.clone());
    Ok((out, stats))
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

fn fmt_full(v: f64) -> String {
    // 17 significant digits: lossless round-trip for f64.
    format!("{v:.16e}")
}

/// Renders a series as CSV. When `include_codes` is set and the series
/// carries transform codes, they are written as a second header row.
pub fn series_to_csv(s: &Series, include_codes: bool) -> String {
    let mut out = String::new();
    out.push_str(&s.names.join(","));
    out.push('\n');
    if include_codes {
        if let Some(codes) = &s.codes {
            let row: Vec<String> = codes.iter().map(|c| c.code().to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    for i in 0..s.len() {
        let row: Vec<String> = s.row(i).iter().map(|&v| fmt_full(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses the series CSV schema. With `with_codes_row`, the second line must
/// hold one transform code per variable.
pub fn parse_series_csv(text: &str, with_codes_row: bool) -> Result<Series> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty input: expected a header row of names"))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if names.iter().any(|n| n.is_empty()) {
        return Err(Error::parse(1, "empty variable name in header"));
    }
    let n = names.len();

    let codes = if with_codes_row {
        let (line_no, row) = lines
            .next()
            .ok_or_else(|| Error::parse(2, "expected a transform-code row"))?;
        let fields: Vec<&str> = row.split(',').map(|s| s.trim()).collect();
        if fields.len() != n {
            return Err(Error::parse(
                line_no,
                format!("expected {n} transform codes, got {}", fields.len()),
            ));
        }
        let mut codes = Vec::with_capacity(n);
        for (j, f) in fields.iter().enumerate() {
            let raw: u8 = f.parse().map_err(|_| {
                Error::parse(
                    line_no,
                    format!("column {} ({}): invalid transform code {f:?}", j + 1, names[j]),
                )
            })?;
            codes.push(TransformCode::new(raw).map_err(|e| Error::parse(line_no, e.to_string()))?);
        }
        Some(codes)
    } else {
        None
    };

    let mut data: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        if fields.len() != n {
            return Err(Error::parse(
                line_no,
                format!("expected {n} fields, got {}", fields.len()),
            ));
        }
        for (j, f) in fields.iter().enumerate() {
            if f.is_empty() {
                return Err(Error::parse(
                    line_no,
                    format!("missing value in column {} ({})", j + 1, names[j]),
                ));
            }
            let v: f64 = f.parse().map_err(|_| {
                Error::parse(
                    line_no,
                    format!("column {} ({}): invalid number {f:?}", j + 1, names[j]),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    line_no,
                    format!("column {} ({}): non-finite value {f:?}", j + 1, names[j]),
                ));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::parse(1, "no data rows"));
    }
    let mut s = Series::new(names, Matrix::from_vec(rows, n, data))?;
    s.codes = codes;
    Ok(s)
}

pub fn save_series_csv(path: &std::path::Path, s: &Series, include_codes: bool) -> Result<()> {
    std::fs::write(path, series_to_csv(s, include_codes))?;
    Ok(())
}

pub fn load_series_csv(path: &std::path::Path, with_codes_row: bool) -> Result<Series> {
    let text = std::fs::read_to_string(path)?;
    parse_series_csv(&text, with_codes_row)
}

// ---------------------------------------------------------------------------
// Rolling forecast and metrics
// ---------------------------------------------------------------------------

/// One-step-ahead predictor over a lag window.
pub trait Forecaster {
    fn n_vars(&self) -> usize;
    fn lag_order(&self) -> usize;
    /// Predicts the next observation from the raw lag matrix (`N x P`,
    /// column `k` is the observation `k+1` steps back).
    fn predict(&self, lags: &Matrix) -> Result<Vec<f64>>;
}

/// Recursive one-step-ahead forecasting without refitting: step `t` predicts
/// row `train_len + t` from the `P` observed rows preceding it.
/// Returns predictions as an `N x test_len` matrix.
pub fn rolling_forecast(
    model: &dyn Forecaster,
    s: &Series,
    train_len: usize,
    test_len: usize,
) -> Result<Matrix> {
    let n = model.n_vars();
    let p = model.lag_order();
    if s.n_vars() != n {
        return Err(Error::ShapeMismatch(format!(
            "model expects {n} variables, series has {}",
            s.n_vars()
        )));
    }
    if train_len < p {
        return Err(Error::InvalidArgument(format!(
            "train_len {train_len} is smaller than the lag order {p}"
        )));
    }
    if test_len == 0 || train_len + test_len > s.len() {
        return Err(Error::InvalidArgument(format!(
            "train_len {train_len} + test_len {test_len} exceeds {} rows",
            s.len()
        )));
    }
    let mut preds = Matrix::zeros(n, test_len);
    let mut lags = Matrix::zeros(n, p);
    for step in 0..test_len {
        let target = train_len + step;
        for k in 0..p {
            let row = s.row(target - 1 - k);
            for i in 0..n {
                lags.set(i, k, row[i]);
            }
        }
        let y = model.predict(&lags)?;
        preds.set_col(step, &y);
    }
    Ok(preds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean over test steps of the Euclidean prediction-error norm.
    pub l2_norm: f64,
    /// Root mean squared error over all entries.
    pub rmse: f64,
    /// Mean absolute error over all entries.
    pub mae: f64,
}

pub fn evaluate(preds: &Matrix, truth: &Matrix) -> Result<Metrics> {
    if preds.shape() != truth.shape() {
        return Err(Error::ShapeMismatch(format!(
            "predictions {:?} vs truth {:?}",
            preds.shape(),
            truth.shape()
        )));
    }
    let (n, steps) = preds.shape();
    let mut l2 = 0.0;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for t in 0..steps {
        let mut step_sq = 0.0;
        for i in 0..n {
            let e = preds.get(i, t) - truth.get(i, t);
            step_sq += e * e;
            abs += e.abs();
        }
        sq += step_sq;
        l2 += step_sq.sqrt();
    }
    let entries = (n * steps) as f64;
    Ok(Metrics {
        l2_norm: l2 / steps as f64,
        rmse: (sq / entries).sqrt(),
        mae: abs / entries,
    })
}
