//! Labeled datasets, synthetic generators and per-node stream partitioning.
//!
//! File loaders (CSV, IDX) are in the `impfilter` crate; everything here
//! works on in-memory data.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;
use crate::rng::{stream, SimRng};
use crate::{Error, Result};

/// An unlabeled observation. `id` is the row of the originating dataset and
/// is the only handle through which the label can be recovered.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub features: Vec<f64>,
}

/// Ground truth available to the AP.
pub trait LabelOracle {
    fn label(&self, sample: &Sample) -> Result<usize>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    /// Per-feature `(min, max)` of the raw data, once normalized.
    normalization: Option<Vec<(f64, f64)>>,
}

impl Dataset {
    /// `class_count` must exceed every label.
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                found: labels.len(),
            });
        }
        if features.rows() == 0 {
            return Err(Error::EmptyInput("dataset has no samples"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: class_count,
            });
        }
        if let Some(&bad) = features.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(bad));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            normalization: None,
        })
    }

    /// Like [`Dataset::new`] with `class_count = max label + 1` (at least 2).
    pub fn with_inferred_classes(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        let classes = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
        Self::new(features, labels, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn normalization(&self) -> Option<&[(f64, f64)]> {
        self.normalization.as_deref()
    }

    pub fn sample(&self, id: usize) -> Sample {
        Sample {
            id,
            features: self.features.row(id).to_vec(),
        }
    }

    /// Relative class frequencies.
    pub fn class_frequencies(&self) -> Vec<f64> {
        self.class_frequencies_of(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn class_frequencies_of(&self, ids: &[usize]) -> Vec<f64> {
        let mut counts = vec![0usize; self.class_count];
        for &i in ids {
            counts[self.labels[i]] += 1;
        }
        let n = ids.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    /// Min-max scales every feature to `[0, 1]`; constant features map to 0.
    /// Applying it again is a no-op.
    pub fn normalize(&mut self) {
        let dim = self.dim();
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); dim];
        for row in self.features.iter_rows() {
            for (r, &v) in ranges.iter_mut().zip(row) {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
        for r in 0..self.features.rows() {
            for (v, &(lo, hi)) in self.features.row_mut(r).iter_mut().zip(&ranges) {
                *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
            }
        }
        self.normalization = Some(match self.normalization.take() {
            None => ranges,
            Some(prev) => prev
                .iter()
                .zip(&ranges)
                .map(|(&(plo, phi), &(lo, hi))| {
                    let span = phi - plo;
                    (plo + lo * span, plo + hi * span)
                })
                .collect(),
        });
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization.is_some()
    }
}

impl LabelOracle for Dataset {
    fn label(&self, sample: &Sample) -> Result<usize> {
        match self.labels.get(sample.id) {
            Some(&y) if self.features.row(sample.id) == sample.features.as_slice() => Ok(y),
            _ => Err(Error::UnknownSample(sample.id)),
        }
    }
}

/// Isotropic Gaussian mixture: class `c` is drawn with probability
/// `weights[c]` and its samples are `means[c] + scales[c]·N(0, I)`.
pub fn synth_gaussians(
    means: &[Vec<f64>],
    scales: &[f64],
    weights: &[f64],
    count: usize,
    seed: u64,
) -> Result<Dataset> {
    let classes = means.len();
    if classes == 0 || scales.len() != classes || weights.len() != classes {
        return Err(Error::InvalidConfig(format!(
            "need one scale and one weight per class mean ({} means, {} scales, {} weights)",
            classes,
            scales.len(),
            weights.len()
        )));
    }
    let dim = means[0].len();
    if dim == 0 || means.iter().any(|m| m.len() != dim) {
        return Err(Error::InvalidConfig("class means must share a positive dimension".into()));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("class weights must be >= 0 and sum to 1, got {total}")));
    }
    if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidConfig("scales must be finite and non-negative".into()));
    }
    if count == 0 {
        return Err(Error::EmptyInput("requested zero samples"));
    }

    let mut rng = stream(seed, 0x6A05);
    let mut data = Vec::with_capacity(count * dim);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut class = classes - 1;
        for (c, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc && w > 0.0 {
                class = c;
                break;
            }
        }
        while weights[class] == 0.0 {
            class -= 1;
        }
        for &mu in &means[class] {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(mu + scales[class] * z);
        }
        labels.push(class);
    }
    Dataset::new(Matrix::from_vec(count, dim, data)?, labels, classes)
}

/// Hourly flow readings on `links` pipes with injected leaks.
///
/// Each link follows a noisy daily demand curve. Leaks start at random
/// hours, last 6 to 24 hours and add a step increase of `leak_magnitude` (in
/// units of the link's mean flow) to one randomly chosen link. Label 1 marks
/// hours during which a leak is active.
pub fn synth_flow_leaks(
    links: usize,
    hours: usize,
    leak_fraction: f64,
    leak_magnitude: f64,
    seed: u64,
) -> Result<Dataset> {
    if links == 0 || hours == 0 {
        return Err(Error::EmptyInput("flow series needs links and hours"));
    }
    if !(0.0..1.0).contains(&leak_fraction) {
        return Err(Error::InvalidConfig("leak fraction must lie in [0, 1)".into()));
    }
    let mut rng = stream(seed, 0x1EA4);
    let base: Vec<f64> = (0..links).map(|_| rng.random_range(5.0..20.0)).collect();
    let phase: Vec<f64> = (0..links).map(|_| rng.random_range(0.0..2.0)).collect();

    let mut leak_link = vec![None; hours];
    let mut t = 0;
    // Mean gap chosen so leaks cover roughly `leak_fraction` of all hours.
    let mean_duration = 15.0;
    let mean_gap = mean_duration * (1.0 - leak_fraction) / leak_fraction.max(1e-9);
    while t < hours {
        let gap = (rng.random::<f64>() * 2.0 * mean_gap) as usize;
        t += gap;
        let duration = rng.random_range(6..=24);
        let link = rng.random_range(0..links);
        for slot in leak_link.iter_mut().skip(t).take(duration) {
            *slot = Some(link);
        }
        t += duration;
    }

    let mut data = Vec::with_capacity(hours * links);
    let mut labels = Vec::with_capacity(hours);
    for (h, leak) in leak_link.iter().enumerate() {
        let hour = (h % 24) as f64;
        for l in 0..links {
            let daily = 1.0 + 0.4 * libm::sin(core::f64::consts::PI * (hour / 12.0 + phase[l]));
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mut flow = base[l] * (daily + 0.05 * noise);
            if *leak == Some(l) {
                flow += leak_magnitude * base[l];
            }
            data.push(flow);
        }
        labels.push(usize::from(leak.is_some()));
    }
    Dataset::new(Matrix::from_vec(hours, links, data)?, labels, 2)
}

/// Disjoint train/test row ids, both sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffled split with `round(len·test_fraction)` test rows.
pub fn train_test_split(len: usize, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} outside [0, 1)"
        )));
    }
    let mut ids: Vec<usize> = (0..len).collect();
    ids.shuffle(&mut stream(seed, 0x5B17));
    let n_test = libm::round(len as f64 * test_fraction) as usize;
    let mut test = ids[..n_test].to_vec();
    let mut train = ids[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    if train.is_empty() {
        return Err(Error::EmptyInput("training split is empty"));
    }
    Ok(Split { train, test })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamConfig {
    /// `m`, samples generated per node per interval.
    pub samples_per_interval: usize,
    /// `K`.
    pub node_count: usize,
    pub shuffle_seed: u64,
    /// Restart a node's sequence when it runs out instead of failing.
    pub cycle: bool,
}

/// The ordered sample ids one node will observe.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStream {
    node: usize,
    ids: Vec<usize>,
    cursor: usize,
    cycle: bool,
}

impl NodeStream {
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn next_id(&mut self) -> Result<usize> {
        if self.cursor == self.ids.len() {
            if !self.cycle || self.ids.is_empty() {
                return Err(Error::StreamExhausted { node: self.node });
            }
            self.cursor = 0;
        }
        let id = self.ids[self.cursor];
        self.cursor += 1;
        Ok(id)
    }

    /// The next `n` ids without consuming them.
    pub fn peek(&self, n: usize) -> Result<Vec<usize>> {
        let mut copy = self.clone();
        (0..n).map(|_| copy.next_id()).collect()
    }
}

/// Shuffles the training ids and deals them round-robin to `K` nodes.
pub fn partition_streams(train_ids: &[usize], config: &StreamConfig) -> Result<Vec<NodeStream>> {
    if config.node_count == 0 || config.samples_per_interval == 0 {
        return Err(Error::InvalidConfig(
            "node count and samples per interval must be positive".into(),
        ));
    }
    let mut ids = train_ids.to_vec();
    let mut rng: SimRng = stream(config.shuffle_seed, 0x57AE);
    ids.shuffle(&mut rng);
    let mut streams: Vec<NodeStream> = (0..config.node_count)
        .map(|node| NodeStream {
            node,
            ids: Vec::with_capacity(ids.len() / config.node_count + 1),
            cursor: 0,
            cycle: config.cycle,
        })
        .collect();
    for (i, id) in ids.into_iter().enumerate() {
        streams[i % config.node_count].ids.push(id);
    }
    Ok(streams)
}
