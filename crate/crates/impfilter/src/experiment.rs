//! Grids of independent runs, their output files and sanity assertions.

use std::fs;
use std::path::Path;

use impfilter_core::datasets::Dataset;
use impfilter_core::simulator::{
    fit_scaling_law, packets_fair, rate_compliance_limit, run, RoundMetrics, Scheme, ScalingFit,
    TransmissionMode,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentSpec;
use crate::error::{CliError, Result};
use crate::metrics::{mean_std, metrics_file_name, metrics_rows, summarize, write_rows, MetricsRow};

/// What is kept of one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scheme: Scheme,
    pub rate: f64,
    pub seed: u64,
    pub metrics: Vec<RoundMetrics>,
    pub packets: u64,
    pub transmit_fractions: Vec<f64>,
    pub samples_per_node: u64,
}

/// Runs every (scheme, rate, seed) combination in parallel. Results come
/// back in scheme, rate, seed order regardless of scheduling.
pub fn execute(
    spec: &ExperimentSpec,
    data: &Dataset,
    schemes: &[Scheme],
    rates: &[f64],
    seeds: &[u64],
) -> Result<Vec<RunRecord>> {
    let mut jobs = Vec::new();
    for &scheme in schemes {
        for &rate in rates {
            for &seed in seeds {
                jobs.push((scheme, rate, seed));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(scheme, rate, seed)| {
            let config = spec.sim_config(data, scheme, rate, seed)?;
            let out = run(&config, data)?;
            Ok(RunRecord {
                scheme,
                rate,
                seed,
                packets: out.packets_total(),
                transmit_fractions: out.transmit_fractions(),
                samples_per_node: out.ledgers.first().map_or(0, |l| l.wakes),
                metrics: out.metrics,
            })
        })
        .collect()
}

/// Fairness and rate-compliance violations, one message each.
pub fn check_runs(runs: &[RunRecord], mode: TransmissionMode, fairness_tolerance: f64, rate_slack: f64) -> Vec<String> {
    let mut problems = Vec::new();
    for r in runs.iter().filter(|r| r.scheme.is_rate_matched()) {
        let limit = rate_compliance_limit(r.rate, rate_slack, mode, r.samples_per_node);
        if let Some(f) = r.transmit_fractions.iter().copied().find(|&f| f > limit) {
            problems.push(format!(
                "{} at R={} seed {}: node transmit fraction {f:.4} exceeds {limit:.4}",
                r.scheme.name(),
                r.rate,
                r.seed
            ));
        }
    }
    let mut keys: Vec<(u64, u64)> = runs.iter().map(|r| (r.rate.to_bits(), r.seed)).collect();
    keys.sort_unstable();
    keys.dedup();
    for (rate_bits, seed) in keys {
        let group: Vec<&RunRecord> = runs
            .iter()
            .filter(|r| r.scheme.is_rate_matched() && r.rate.to_bits() == rate_bits && r.seed == seed)
            .collect();
        if group.len() < 2 {
            continue;
        }
        let totals: Vec<u64> = group.iter().map(|r| r.packets).collect();
        if !packets_fair(&totals, fairness_tolerance) {
            let detail: Vec<String> = group.iter().map(|r| format!("{}={}", r.scheme.name(), r.packets)).collect();
            problems.push(format!(
                "packet totals at R={} seed {seed} differ by {}% or more: {}",
                f64::from_bits(rate_bits),
                fairness_tolerance * 100.0,
                detail.join(", ")
            ));
        }
    }
    problems
}

/// Writes one metrics file per run and `summary.csv`, serially.
pub fn write_outputs(dir: &Path, runs: &[RunRecord]) -> Result<Vec<MetricsRow>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut all = Vec::new();
    for r in runs {
        let rows = metrics_rows(r.scheme, r.rate, r.seed, &r.metrics);
        write_rows(&dir.join(metrics_file_name(r.scheme, r.rate, r.seed)), &rows)?;
        all.extend(rows);
    }
    write_rows(&dir.join("summary.csv"), &summarize(&all))?;
    Ok(all)
}

/// Final-round test error of one (scheme, rate) cell across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub scheme: String,
    pub rate: f64,
    pub test_error_mean: f64,
    pub test_error_std: f64,
    pub packets_mean: f64,
    pub n: usize,
}

pub fn sweep_table(runs: &[RunRecord], schemes: &[Scheme], rates: &[f64]) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &scheme in schemes {
        for &rate in rates {
            let group: Vec<&RunRecord> = runs.iter().filter(|r| r.scheme == scheme && r.rate == rate).collect();
            let errors: Vec<f64> = group
                .iter()
                .filter_map(|r| r.metrics.last().map(|m| m.test_error))
                .collect();
            let packets: Vec<f64> = group.iter().map(|r| r.packets as f64).collect();
            let (test_error_mean, test_error_std) = mean_std(&errors);
            cells.push(SweepCell {
                scheme: scheme.name().to_owned(),
                rate,
                test_error_mean,
                test_error_std,
                packets_mean: mean_std(&packets).0,
                n: errors.len(),
            });
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub scheme: String,
    pub alpha: f64,
    pub exponent: f64,
    pub points_used: usize,
}

/// One scaling-law fit per scheme, or `Err` with the reason it was skipped.
pub fn scaling_fits(cells: &[SweepCell], schemes: &[Scheme]) -> Vec<(Scheme, std::result::Result<ScalingFit, String>)> {
    schemes
        .iter()
        .map(|&s| {
            let points: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.scheme == s.name())
                .map(|c| (c.rate, c.test_error_mean))
                .collect();
            (s, fit_scaling_law(&points).map_err(|e| e.to_string()))
        })
        .collect()
}

pub fn format_table(cells: &[SweepCell]) -> String {
    let mut s = format!("{:<14}{:>8}{:>14}{:>12}{:>10}{:>5}\n", "scheme", "rate", "test_error", "std", "packets", "n");
    for c in cells {
        s += &format!(
            "{:<14}{:>8}{:>14.5}{:>12.5}{:>10.1}{:>5}\n",
            c.scheme, c.rate, c.test_error_mean, c.test_error_std, c.packets_mean, c.n
        );
    }
    s
}
