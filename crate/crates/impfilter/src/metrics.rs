//! Per-round metrics files and their across-seed summary.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use impfilter_core::simulator::{RoundMetrics, Scheme};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u64,
    pub scheme: String,
    pub rate: f64,
    pub seed: u64,
    pub train_error: f64,
    pub test_error: f64,
    pub packets: u64,
    pub energy_mean: f64,
    pub energy_max: f64,
    pub beta: f64,
}

pub fn metrics_rows(scheme: Scheme, rate: f64, seed: u64, metrics: &[RoundMetrics]) -> Vec<MetricsRow> {
    metrics
        .iter()
        .map(|m| MetricsRow {
            round: m.round,
            scheme: scheme.name().to_owned(),
            rate,
            seed,
            train_error: m.train_error,
            test_error: m.test_error,
            packets: m.packets_total,
            energy_mean: m.energy_mean,
            energy_max: m.energy_max,
            beta: m.beta,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub round: u64,
    pub scheme: String,
    pub rate: f64,
    pub metric: String,
    pub metric_mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub metric_std: f64,
    pub n: usize,
}

pub const SUMMARY_METRICS: [&str; 6] = ["train_error", "test_error", "packets", "energy_mean", "energy_max", "beta"];

fn metric_value(row: &MetricsRow, metric: &str) -> f64 {
    match metric {
        "train_error" => row.train_error,
        "test_error" => row.test_error,
        "packets" => row.packets as f64,
        "energy_mean" => row.energy_mean,
        "energy_max" => row.energy_max,
        "beta" => row.beta,
        _ => unreachable!("unknown metric {metric}"),
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and spread across seeds for every (scheme, rate, round, metric).
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, u64, u64), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        // Positive floats order like their bit patterns.
        groups
            .entry((r.scheme.clone(), r.rate.to_bits(), r.round))
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for ((scheme, rate_bits, round), group) in groups {
        for metric in SUMMARY_METRICS {
            let values: Vec<f64> = group.iter().map(|r| metric_value(r, metric)).collect();
            let (metric_mean, metric_std) = mean_std(&values);
            out.push(SummaryRow {
                round,
                scheme: scheme.clone(),
                rate: f64::from_bits(rate_bits),
                metric: metric.to_owned(),
                metric_mean,
                metric_std,
                n: values.len(),
            });
        }
    }
    out
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| CliError::Data {
                path: path.to_path_buf(),
                message: format!("row {}: {e}", i + 1),
            })
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        CliError::Data {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// `metrics_<scheme>_r<rate>_s<seed>.csv`.
pub fn metrics_file_name(scheme: Scheme, rate: f64, seed: u64) -> String {
    format!("metrics_{}_r{rate}_s{seed}.csv", scheme.name())
}
