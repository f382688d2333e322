//! The `run`, `sweep` and `diagnose` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use impfilter_core::bounds::BoundReport;

use crate::config::{parse_assignment, ExperimentSpec};
use crate::diagnose::diagnose;
use crate::error::{CliError, Result};
use crate::experiment::{check_runs, execute, format_table, scaling_fits, sweep_table, write_outputs, FitRow, RunRecord, SweepCell};
use crate::metrics::write_rows;
use crate::report::format_report;

/// Command-line overrides, applied after the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    /// `key.path=value` assignments, in order.
    pub set: Vec<String>,
    pub rate: Option<f64>,
    pub rates: Option<Vec<f64>>,
    pub rounds: Option<u64>,
    /// Seeds `0..n`.
    pub seeds: Option<u64>,
    pub schemes: Vec<String>,
    pub transmission: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub field: Option<String>,
}

impl Overrides {
    /// Flattened into assignments; dedicated flags come last and win.
    pub fn assignments(&self) -> Result<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> = self.set.iter().map(|s| parse_assignment(s)).collect::<Result<_>>()?;
        let list = |v: &[String]| format!("[{}]", v.join(", "));
        if let Some(r) = self.rate {
            out.push(("experiment.rates".into(), format!("[{r:?}]")));
        }
        if let Some(rs) = &self.rates {
            let v: Vec<String> = rs.iter().map(|r| format!("{r:?}")).collect();
            out.push(("experiment.rates".into(), list(&v)));
        }
        if let Some(n) = self.rounds {
            out.push(("sim.rounds".into(), n.to_string()));
        }
        if let Some(n) = self.seeds {
            let v: Vec<String> = (0..n).map(|s| s.to_string()).collect();
            out.push(("experiment.seeds".into(), list(&v)));
        }
        if !self.schemes.is_empty() {
            let v: Vec<String> = self.schemes.iter().map(|s| format!("{s:?}")).collect();
            out.push(("experiment.schemes".into(), list(&v)));
        }
        if let Some(t) = &self.transmission {
            out.push(("sim.transmission".into(), format!("{t:?}")));
        }
        if let Some(d) = &self.output_dir {
            out.push(("output.dir".into(), format!("{:?}", d.display().to_string())));
        }
        if let Some(f) = &self.field {
            out.push(("diagnose.field".into(), format!("{f:?}")));
        }
        Ok(out)
    }
}

pub fn load_spec(path: &Path, overrides: &Overrides) -> Result<ExperimentSpec> {
    ExperimentSpec::load(path, &overrides.assignments()?)
}

fn assertion_result(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Assertion(problems.join("; ")))
    }
}

/// Runs the configured grid and writes metrics plus `summary.csv`. Files
/// are written even when an assertion then fails.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    let data = spec.load_dataset()?;
    let e = &spec.experiment;
    let runs = execute(spec, &data, &e.schemes, &e.rates, &e.seeds)?;
    write_outputs(&spec.output.dir, &runs)?;
    assertion_result(check_runs(&runs, spec.sim.transmission, e.fairness_tolerance, e.rate_slack))?;
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
    pub fits: Vec<FitRow>,
    /// Human-readable table plus fit lines or skip notes.
    pub text: String,
}

/// Runs all schemes at every rate with matched seeds, then fits the
/// scaling law per scheme. Writes `sweep.csv`, `scaling_fit.csv` (when a
/// fit was possible) and `sweep.txt` besides the run outputs.
pub fn cmd_sweep(spec: &ExperimentSpec) -> Result<SweepOutcome> {
    let data = spec.load_dataset()?;
    let e = &spec.experiment;
    let runs = execute(spec, &data, &e.schemes, &e.rates, &e.seeds)?;
    let dir = &spec.output.dir;
    write_outputs(dir, &runs)?;

    let cells = sweep_table(&runs, &e.schemes, &e.rates);
    write_rows(&dir.join("sweep.csv"), &cells)?;
    let mut text = format_table(&cells);
    let mut fits = Vec::new();
    for (scheme, fit) in scaling_fits(&cells, &e.schemes) {
        match fit {
            Ok(f) => {
                text += &format!(
                    "fit {}: error ~ {:.5} * R^{:.4} ({} points)\n",
                    scheme.name(),
                    f.alpha,
                    f.exponent,
                    f.points_used
                );
                fits.push(FitRow {
                    scheme: scheme.name().to_owned(),
                    alpha: f.alpha,
                    exponent: f.exponent,
                    points_used: f.points_used,
                });
            }
            Err(reason) => text += &format!("fit {} skipped: {reason}\n", scheme.name()),
        }
    }
    if !fits.is_empty() {
        write_rows(&dir.join("scaling_fit.csv"), &fits)?;
    }
    let txt = dir.join("sweep.txt");
    fs::write(&txt, &text).map_err(|err| CliError::io(&txt, err))?;
    assertion_result(check_runs(&runs, spec.sim.transmission, e.fairness_tolerance, e.rate_slack))?;
    Ok(SweepOutcome { cells, fits, text })
}

/// Computes the bound report and writes it to `output.dir/diagnose.report`.
pub fn cmd_diagnose(spec: &ExperimentSpec) -> Result<BoundReport> {
    let report = diagnose(spec)?;
    let dir = &spec.output.dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(&spec.diagnose.report);
    fs::write(&path, format_report(&report)).map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}
