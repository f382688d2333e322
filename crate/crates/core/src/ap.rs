//! Access-point side: labeling, training, exact scoring and the choice of
//! which scores to send back to each node.
//!
//! At the end of every interval the AP
//! 1. trains on the records received during the interval,
//! 2. scores those records with the updated model,
//! 3. forms one super-sample (feature mean) per node that transmitted, and
//! 4. sends each node the scored records behind the `⌈P/b⌉` super-samples
//!    closest to its own.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::datasets::{LabelOracle, Sample};
use crate::filter::{euclidean_distance, ScoredEntry};
use crate::linalg::Matrix;
use crate::model::{ModelState, OptimizerConfig};
use crate::rng::SimRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedRecord {
    pub node_id: usize,
    pub interval: u64,
    pub sample: Sample,
    /// Assigned once, by the oracle, on receipt.
    pub label: usize,
    /// Exact leverage score under the model that finished this interval.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// `None` trains on the whole interval batch at once.
    pub batch_size: Option<usize>,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.epochs == 0 || self.batch_size == Some(0) {
            return Err(Error::InvalidConfig(
                "epochs and mini-batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The records one node delivered in one interval, summarized by their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperSample {
    pub node_id: usize,
    pub interval: u64,
    pub center: Vec<f64>,
    pub entries: Vec<ScoredEntry>,
}

#[derive(Debug, Clone)]
pub struct ApState {
    pub model: ModelState,
    rng: SimRng,
    round_index: u64,
    received: Vec<ReceivedRecord>,
    interval_start: usize,
    super_samples: Vec<SuperSample>,
}

impl ApState {
    pub fn new(model: ModelState, rng: SimRng) -> Self {
        Self {
            model,
            rng,
            round_index: 0,
            received: Vec::new(),
            interval_start: 0,
            super_samples: Vec::new(),
        }
    }

    pub fn round_index(&self) -> u64 {
        self.round_index
    }

    /// Every record received so far.
    pub fn history(&self) -> &[ReceivedRecord] {
        &self.received
    }

    /// Records received since the last [`ApState::close_interval`].
    pub fn current_interval(&self) -> &[ReceivedRecord] {
        &self.received[self.interval_start..]
    }

    pub fn super_samples(&self) -> &[SuperSample] {
        &self.super_samples
    }

    /// Accepts a packet and labels it.
    pub fn receive<O: LabelOracle + ?Sized>(
        &mut self,
        node_id: usize,
        sample: Sample,
        oracle: &O,
    ) -> Result<()> {
        let label = oracle.label(&sample)?;
        self.received.push(ReceivedRecord {
            node_id,
            interval: self.round_index,
            sample,
            label,
            score: None,
        });
        Ok(())
    }

    /// Trains on the current interval's records and advances the round
    /// counter. Returns the mean mini-batch loss of the last epoch.
    pub fn train_round(&mut self, config: &TrainingConfig) -> Result<f64> {
        let records = &self.received[self.interval_start..];
        if records.is_empty() {
            return Err(Error::EmptyInput("no records received this interval"));
        }
        let rows: Vec<&[f64]> = records.iter().map(|r| r.sample.features.as_slice()).collect();
        let features = Matrix::from_rows(&rows)?;
        let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
        let loss = train_batch(&mut self.model, &mut self.rng, &features, &labels, config)?;
        self.round_index += 1;
        Ok(loss)
    }

    /// Scores the current interval's records with the current model and
    /// records one super-sample per transmitting node.
    pub fn score_current(&mut self) -> Result<()> {
        let start = self.interval_start;
        for i in start..self.received.len() {
            let r = &self.received[i];
            let s = self.model.leverage_score(&r.sample.features, r.label)?;
            self.received[i].score = Some(s);
        }
        let mut nodes: Vec<usize> = self.received[start..].iter().map(|r| r.node_id).collect();
        nodes.sort_unstable();
        nodes.dedup();
        for node in nodes {
            let records: Vec<&ReceivedRecord> = self.received[start..]
                .iter()
                .filter(|r| r.node_id == node)
                .collect();
            let rows: Vec<&[f64]> = records.iter().map(|r| r.sample.features.as_slice()).collect();
            self.super_samples.push(SuperSample {
                node_id: node,
                interval: records[0].interval,
                center: super_sample(&rows)?,
                entries: records
                    .iter()
                    .map(|r| ScoredEntry::new(r.sample.features.clone(), r.score.unwrap_or(0.0)))
                    .collect(),
            });
        }
        Ok(())
    }

    /// Exact scores for arbitrary records under the current model.
    pub fn score_batch(&self, records: &[ReceivedRecord]) -> Result<Vec<ScoredEntry>> {
        records
            .iter()
            .map(|r| {
                let s = self.model.leverage_score(&r.sample.features, r.label)?;
                Ok(ScoredEntry::new(r.sample.features.clone(), s))
            })
            .collect()
    }

    /// Scored entries to feed back to `node_id`, at most `capacity` of them,
    /// ordered farthest group first so that the node's own group ends up
    /// newest in its buffer.
    ///
    /// `expected_per_node` is the nominal `b`, used when the node delivered
    /// nothing this interval.
    pub fn select_feedback(
        &self,
        node_id: usize,
        capacity: usize,
        expected_per_node: usize,
    ) -> Vec<ScoredEntry> {
        let first_current = self
            .super_samples
            .iter()
            .rposition(|s| s.interval != self.last_scored_interval())
            .map_or(0, |i| i + 1);
        let current = &self.super_samples[first_current..];

        let chosen: Vec<&SuperSample> = match current.iter().find(|s| s.node_id == node_id) {
            Some(own) => {
                let groups = capacity.div_ceil(own.entries.len().max(1));
                let mut ranked: Vec<(f64, usize, &SuperSample)> = current
                    .iter()
                    .map(|s| {
                        let d = euclidean_distance(&own.center, &s.center).unwrap_or(f64::INFINITY);
                        (d, s.node_id, s)
                    })
                    .collect();
                ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                ranked.truncate(groups);
                ranked.into_iter().rev().map(|(_, _, s)| s).collect()
            }
            None => {
                let groups = capacity.div_ceil(expected_per_node.max(1));
                let from = self.super_samples.len().saturating_sub(groups);
                self.super_samples[from..].iter().collect()
            }
        };

        let mut feedback: Vec<ScoredEntry> = chosen
            .into_iter()
            .flat_map(|s| s.entries.iter().cloned())
            .collect();
        if feedback.len() > capacity {
            feedback.drain(..feedback.len() - capacity);
        }
        feedback
    }

    fn last_scored_interval(&self) -> u64 {
        self.super_samples.last().map_or(0, |s| s.interval)
    }

    /// Starts a new interval. The round counter has already moved on if the
    /// AP trained; otherwise it is advanced here.
    pub fn close_interval(&mut self, trained: bool) {
        if !trained {
            self.round_index += 1;
        }
        self.interval_start = self.received.len();
    }
}

/// `epochs` passes of shuffled mini-batch updates over one batch.
pub fn train_batch(
    model: &mut ModelState,
    rng: &mut SimRng,
    features: &Matrix,
    labels: &[usize],
    config: &TrainingConfig,
) -> Result<f64> {
    config.validate()?;
    if features.rows() == 0 {
        return Err(Error::EmptyInput("empty training batch"));
    }
    let batch_size = config.batch_size.unwrap_or(features.rows()).min(features.rows());
    let mut order: Vec<usize> = (0..features.rows()).collect();
    let mut last_epoch_loss = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let x = features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            total += model.train_step(&x, &y, &config.optimizer)?;
            batches += 1;
        }
        last_epoch_loss = total / batches as f64;
    }
    Ok(last_epoch_loss)
}

/// Coordinate-wise mean.
pub fn super_sample<R: AsRef<[f64]>>(records: &[R]) -> Result<Vec<f64>> {
    let first = records
        .first()
        .ok_or(Error::EmptyInput("super-sample of no records"))?
        .as_ref();
    let mut mean = alloc::vec![0.0; first.len()];
    for r in records {
        let r = r.as_ref();
        if r.len() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: r.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    let n = records.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}
