//! Bound reports as flat `key=value` text.

use std::collections::HashMap;
use std::fmt::Write as _;

use impfilter_core::bounds::BoundReport;

use crate::error::{CliError, Result};

pub fn format_report(r: &BoundReport) -> String {
    let mut s = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    put("eta_b", r.eta_b.to_string());
    put("eta_v", r.eta_v.to_string());
    put("coverage_fraction", r.coverage_fraction.to_string());
    put("radius_violations", r.radius_violations.to_string());
    put("delta_target", r.delta_target.to_string());
    put("samples_checked", r.samples_checked.to_string());
    put("neighbors", r.neighbors.to_string());
    put("buffer_size", r.buffer_size.to_string());
    put("dim", r.dim.to_string());
    put("neighbors_condition", r.neighbors_condition.to_string());
    put("meets_target", r.meets_target().to_string());
    s
}

pub fn parse_report(text: &str) -> Result<BoundReport> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("report line {}: expected key=value", i + 1)))?;
        map.insert(k.trim(), v.trim());
    }
    fn get<T: std::str::FromStr>(map: &HashMap<&str, &str>, key: &str) -> Result<T> {
        map.get(key)
            .ok_or_else(|| CliError::Config(format!("report lacks `{key}`")))?
            .parse()
            .map_err(|_| CliError::Config(format!("report value for `{key}` is malformed")))
    }
    Ok(BoundReport {
        eta_b: get(&map, "eta_b")?,
        eta_v: get(&map, "eta_v")?,
        coverage_fraction: get(&map, "coverage_fraction")?,
        radius_violations: get(&map, "radius_violations")?,
        delta_target: get(&map, "delta_target")?,
        samples_checked: get(&map, "samples_checked")?,
        neighbors: get(&map, "neighbors")?,
        buffer_size: get(&map, "buffer_size")?,
        dim: get(&map, "dim")?,
        neighbors_condition: get(&map, "neighbors_condition")?,
    })
}
