//! Bound diagnostics on synthetic or model-derived score fields.

use impfilter_core::bounds::{check_bounds, BoundReport};
use impfilter_core::datasets::Dataset;
use impfilter_core::filter::ScoredEntry;
use impfilter_core::model::ModelState;
use impfilter_core::rng::stream;
use impfilter_core::simulator::{run, Scheme};
use rand::Rng;

use crate::config::{ExperimentSpec, FieldKind};
use crate::error::{CliError, Result};

/// `1 + ½·sin(2πx₀)·cos(2πx₁)`: smooth, positive and `π`-Lipschitz.
pub fn smooth_score(x: &[f64]) -> f64 {
    use std::f64::consts::TAU;
    1.0 + 0.5 * (TAU * x[0]).sin() * (TAU * x[1]).cos()
}

/// `count` uniform points on `[0,1]²` scored by `field`.
pub fn field_samples<R: Rng>(rng: &mut R, count: usize, field: impl Fn(&[f64]) -> f64) -> Vec<ScoredEntry> {
    (0..count)
        .map(|_| {
            let x = vec![rng.random::<f64>(), rng.random::<f64>()];
            let s = field(&x);
            ScoredEntry::new(x, s)
        })
        .collect()
}

/// Buffer and queries drawn independently from one synthetic field; the
/// moduli are taken over their union.
pub fn synthetic_report(
    field: FieldKind,
    buffer_size: usize,
    neighbors: usize,
    queries: usize,
    delta: f64,
    seed: u64,
) -> Result<BoundReport> {
    let score: fn(&[f64]) -> f64 = match field {
        FieldKind::Smooth => smooth_score,
        FieldKind::Constant => |_| 1.0,
        FieldKind::Model => return Err(CliError::Config("model field needs a dataset".into())),
    };
    let mut rng = stream(seed, 0xD1A6);
    let buffer = field_samples(&mut rng, buffer_size, score);
    let query_set = field_samples(&mut rng, queries, score);
    let reference: Vec<ScoredEntry> = buffer.iter().chain(&query_set).cloned().collect();
    Ok(check_bounds(&query_set, &buffer, &reference, neighbors, delta)?)
}

fn score_rows(model: &ModelState, data: &Dataset, ids: &[usize]) -> Result<Vec<ScoredEntry>> {
    ids.iter()
        .map(|&id| {
            let x = data.features().row(id).to_vec();
            let s = model.leverage_score(&x, data.labels()[id])?;
            Ok(ScoredEntry::new(x, s))
        })
        .collect()
}

/// Trains with one importance run, then checks the bound with node 0's
/// stored samples rescored by the final model against held-out queries.
pub fn model_report(spec: &ExperimentSpec, data: &Dataset) -> Result<BoundReport> {
    let rate = spec.experiment.rates[0];
    let seed = spec.experiment.seeds[0];
    let config = spec.sim_config(data, Scheme::Importance, rate, seed)?;
    let out = run(&config, data)?;
    let model = &out.model;
    let buffer: Vec<ScoredEntry> = out.nodes[0]
        .buffer()
        .iter()
        .map(|e| {
            let id = (0..data.len())
                .find(|&i| data.features().row(i) == e.sample.as_slice())
                .expect("buffer entries come from the dataset");
            Ok(ScoredEntry::new(e.sample.clone(), model.leverage_score(&e.sample, data.labels()[id])?))
        })
        .collect::<Result<_>>()?;
    let take = spec.diagnose.queries.min(out.split.test.len());
    let queries = score_rows(model, data, &out.split.test[..take])?;
    let reference: Vec<ScoredEntry> = buffer.iter().chain(&queries).cloned().collect();
    Ok(check_bounds(&queries, &buffer, &reference, spec.filter.neighbors, spec.diagnose.delta)?)
}

pub fn diagnose(spec: &ExperimentSpec) -> Result<BoundReport> {
    let d = &spec.diagnose;
    match d.field {
        FieldKind::Model => model_report(spec, &spec.load_dataset()?),
        field => synthetic_report(field, spec.filter.buffer_size, spec.filter.neighbors, d.queries, d.delta, d.seed),
    }
}
