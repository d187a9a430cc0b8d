//! Observation containers and CSV ingestion (one observation per row, with a
//! header line).

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Design matrix Φ (n × D) and targets y.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearData {
    pub features: DMatrix<f64>,
    pub targets: DVector<f64>,
}

/// Features (n × p) and labels in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticData {
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::MalformedData(format!("row {}: bad number '{s}'", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { headers, rows })
}

impl Table {
    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn matrix(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), cols.len(), |i, j| self.rows[i][cols[j]])
    }

    fn vector(&self, col: usize) -> DVector<f64> {
        DVector::from_fn(self.rows.len(), |i, _| self.rows[i][col])
    }
}

/// Feature columns are those whose header starts with `x`; the target is `y`.
pub fn read_linear_csv(path: &Path) -> Result<LinearData> {
    let t = read_table(path)?;
    let y = t
        .column("y")
        .ok_or_else(|| Error::MalformedData("missing 'y' column".into()))?;
    let xs: Vec<usize> = (0..t.headers.len())
        .filter(|&i| t.headers[i].starts_with('x'))
        .collect();
    if xs.is_empty() {
        return Err(Error::MalformedData("no feature columns (x...)".into()));
    }
    Ok(LinearData {
        features: t.matrix(&xs),
        targets: t.vector(y),
    })
}

/// Column `x` with exactly two rows: the toy observations (x₁, x₂).
pub fn read_toy_csv(path: &Path) -> Result<(f64, f64)> {
    let t = read_table(path)?;
    let x = t
        .column("x")
        .ok_or_else(|| Error::MalformedData("missing 'x' column".into()))?;
    if t.rows.len() != 2 {
        return Err(Error::MalformedData(format!(
            "toy data needs exactly 2 rows, got {}",
            t.rows.len()
        )));
    }
    Ok((t.rows[0][x], t.rows[1][x]))
}

/// Every column except `label` is a feature.
pub fn read_logistic_csv(path: &Path) -> Result<LogisticData> {
    let t = read_table(path)?;
    let label = t
        .column("label")
        .ok_or_else(|| Error::MalformedData("missing 'label' column".into()))?;
    let xs: Vec<usize> = (0..t.headers.len()).filter(|&i| i != label).collect();
    Ok(LogisticData {
        features: t.matrix(&xs),
        labels: t.vector(label),
    })
}
