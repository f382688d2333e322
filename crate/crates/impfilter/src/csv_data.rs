//! Labelled numeric CSV files.

use std::fs::File;
use std::path::Path;

use impfilter_core::datasets::Dataset;
use impfilter_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Which column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl From<usize> for LabelColumn {
    fn from(i: usize) -> Self {
        LabelColumn::Index(i)
    }
}

impl From<&str> for LabelColumn {
    fn from(s: &str) -> Self {
        LabelColumn::Name(s.to_owned())
    }
}

/// Reads a CSV whose columns are numeric features plus one integer label
/// column. Row numbers in errors count data rows from 1.
pub fn load_csv(path: &Path, label_column: &LabelColumn, has_header: bool) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let fail = |message: String| CliError::Data {
        path: path.to_path_buf(),
        message,
    };

    let label_idx = match label_column {
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => {
            if !has_header {
                return Err(fail(format!("label column `{name}` given by name but the file has no header")));
            }
            let headers = reader.headers().map_err(|e| fail(e.to_string()))?;
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| fail(format!("unknown label column `{name}`")))?
        }
    };

    let mut width = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| fail(format!("row {row}: {e}")))?;
        match width {
            None => {
                if label_idx >= record.len() {
                    return Err(fail(format!(
                        "unknown label column {label_idx} (rows have {} fields)",
                        record.len()
                    )));
                }
                if record.len() < 2 {
                    return Err(fail("need at least one feature column besides the label".into()));
                }
                width = Some(record.len());
            }
            Some(w) if w != record.len() => {
                return Err(fail(format!("row {row}: expected {w} fields, found {}", record.len())));
            }
            Some(_) => {}
        }
        for (col, field) in record.iter().enumerate() {
            if col == label_idx {
                let label: usize = field
                    .parse()
                    .map_err(|_| fail(format!("row {row}: label `{field}` is not a class index")))?;
                labels.push(label);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| fail(format!("row {row}, column {col}: `{field}` is not numeric")))?;
                if !v.is_finite() {
                    return Err(fail(format!("row {row}, column {col}: non-finite value")));
                }
                features.push(v);
            }
        }
    }

    let Some(width) = width else {
        return Err(fail("no data rows".into()));
    };
    let rows = labels.len();
    let matrix = Matrix::from_vec(rows, width - 1, features)?;
    Ok(Dataset::with_inferred_classes(matrix, labels)?)
}
