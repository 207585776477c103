//! CSV ingestion, feature standardization and multiplicative contamination
//! of real regression data.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::harness::synth::{bernoulli_plant, rng, ContaminationMode};
use crate::regression::RegData;

/// Factor applied to contaminated `y` values.
pub const CSV_Y_FACTOR: f64 = 1e4;
/// Factor applied to contaminated `x` values in `Xy` mode.
pub const CSV_X_FACTOR: f64 = 1e2;

/// Numeric table read from a CSV file with a header row.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
    /// Rows dropped because a field was missing or not numeric.
    pub dropped: usize,
}

/// Reads every column of a headed CSV as `f64`, dropping incomplete rows.
pub fn read_numeric_csv(path: impl AsRef<Path>) -> Result<CsvTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path.as_ref())?;
    let names: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::Data("CSV header row is missing".into()));
    }
    let width = names.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record?;
        let parsed: Option<Vec<f64>> = if record.len() == width {
            record.iter().map(|f| f.trim().parse::<f64>().ok().filter(|v| v.is_finite())).collect()
        } else {
            None
        };
        match parsed {
            Some(r) => rows.push(r),
            None => dropped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("CSV contains no complete numeric rows".into()));
    }
    let values = DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]);
    Ok(CsvTable { names, values, dropped })
}

/// Regression data loaded from CSV.
#[derive(Debug, Clone)]
pub struct CsvRegression {
    pub data: RegData,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub dropped: usize,
}

/// Splits a table into features and target. The target defaults to the last column.
pub fn table_to_regression(table: &CsvTable, target: Option<&str>) -> Result<CsvRegression> {
    let width = table.names.len();
    if width < 2 {
        return Err(Error::Data("regression CSV needs at least two columns".into()));
    }
    let t = match target {
        None => width - 1,
        Some(name) => table
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Data(format!("target column `{name}` not found")))?,
    };
    let features: Vec<usize> = (0..width).filter(|&j| j != t).collect();
    let x = table.values.select_columns(features.iter());
    let y = table.values.column(t).into_owned();
    Ok(CsvRegression {
        data: RegData::new(x, y)?,
        feature_names: features.iter().map(|&j| table.names[j].clone()).collect(),
        target_name: table.names[t].clone(),
        dropped: table.dropped,
    })
}

pub fn read_regression_csv(path: impl AsRef<Path>, target: Option<&str>) -> Result<CsvRegression> {
    table_to_regression(&read_numeric_csv(path)?, target)
}

/// Column means and standard deviations (zero deviations replaced by one).
pub fn column_standardizer(x: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let sd = DVector::from_fn(x.ncols(), |j, _| {
        let m = mean[j];
        let v = x.column(j).iter().map(|c| (c - m).powi(2)).sum::<f64>() / n;
        if v > 0.0 {
            v.sqrt()
        } else {
            1.0
        }
    });
    (mean, sd)
}

pub fn apply_standardizer(x: &DMatrix<f64>, mean: &DVector<f64>, sd: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - mean[j]) / sd[j])
}

/// Multiplies the `y` of a Bernoulli(`ratio`) subset of rows by 10⁴, and in
/// `Xy` mode their `x` by 10² as well.
pub fn contaminate_csv(
    data: &RegData,
    seed: u64,
    ratio: f64,
    mode: ContaminationMode,
) -> Result<(RegData, Vec<usize>)> {
    let mut rng = rng(seed);
    let plant = bernoulli_plant(&mut rng, data.len(), ratio);
    let mut x = data.x().clone();
    let mut y = data.y().clone();
    for &i in &plant {
        y[i] *= CSV_Y_FACTOR;
        if mode == ContaminationMode::Xy {
            x.row_mut(i).scale_mut(CSV_X_FACTOR);
        }
    }
    Ok((RegData::new(x, y)?, plant))
}
