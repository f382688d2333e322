//! Node-side importance filtering.
//!
//! A node keeps the `P` most recent `(sample, score)` pairs fed back by the
//! AP. For a fresh sample it averages the scores of the `L` nearest stored
//! samples, turns that estimate into a softmax weight against the stored
//! scores at the current inverse temperature `β`, and transmits with
//! probability `min(1, R·P·q)`. At `β = 0` every weight is `1/P` and the
//! node transmits with probability exactly `R`.
//!
//! Nothing here ever sees a label.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::energy::{EnergyLedger, EnergyParams};
use crate::rng::SimRng;
use crate::{Error, Result};

/// A stored sample and the exact leverage score the AP computed for it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub sample: Vec<f64>,
    pub score: f64,
}

impl ScoredEntry {
    pub fn new(sample: Vec<f64>, score: f64) -> Self {
        Self { sample, score }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FilterConfig {
    /// `P`, number of stored scores.
    pub buffer_size: usize,
    /// `L`, neighbours averaged by the estimate.
    pub neighbors: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Number of intervals after which `β` reaches `beta_max`.
    pub anneal_intervals: u64,
    /// `R`, target fraction of generated samples to transmit.
    pub target_rate: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            buffer_size: 64,
            neighbors: 8,
            beta_min: 0.0,
            beta_max: 1.0,
            anneal_intervals: 10,
            target_rate: 0.3,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_size == 0 || self.neighbors == 0 {
            return Err(Error::InvalidConfig(
                "buffer size and neighbour count must be positive".into(),
            ));
        }
        if self.neighbors >= self.buffer_size {
            return Err(Error::InvalidConfig(format!(
                "neighbours ({}) must be fewer than buffer size ({})",
                self.neighbors, self.buffer_size
            )));
        }
        if !(self.beta_min <= self.beta_max) || !self.beta_min.is_finite() || !self.beta_max.is_finite()
        {
            return Err(Error::InvalidConfig("need finite beta_min <= beta_max".into()));
        }
        if self.anneal_intervals == 0 {
            return Err(Error::InvalidConfig("anneal_intervals must be positive".into()));
        }
        if !(self.target_rate > 0.0 && self.target_rate <= 1.0) {
            return Err(Error::InvalidRate(self.target_rate));
        }
        Ok(())
    }

    /// Whether `L >= ln P`, the regime in which the estimation-error bound
    /// applies. Violations are worth a warning, not a rejection.
    pub fn neighbors_condition_holds(&self) -> bool {
        self.neighbors as f64 >= libm::log(self.buffer_size as f64)
    }
}

/// Mutable state of one node.
#[derive(Debug, Clone)]
pub struct NodeState {
    /// Oldest entry first.
    buffer: Vec<ScoredEntry>,
    capacity: usize,
    pub interval_index: u64,
    pub rng: SimRng,
    pub energy: EnergyLedger,
}

impl NodeState {
    /// Fills the buffer with the given samples, each scored 1.
    pub fn new(
        initial_samples: Vec<Vec<f64>>,
        capacity: usize,
        rng: SimRng,
        energy: EnergyParams,
    ) -> Result<Self> {
        if initial_samples.len() != capacity || capacity == 0 {
            return Err(Error::InvalidConfig(format!(
                "buffer needs exactly {} initial samples, got {}",
                capacity,
                initial_samples.len()
            )));
        }
        Ok(Self {
            buffer: initial_samples
                .into_iter()
                .map(|s| ScoredEntry::new(s, 1.0))
                .collect(),
            capacity,
            interval_index: 0,
            rng,
            energy: EnergyLedger::new(energy),
        })
    }

    pub fn buffer(&self) -> &[ScoredEntry] {
        &self.buffer
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Replaces the oldest entries with `feedback` (kept in order), advances
    /// the interval counter and charges one reception.
    pub fn refresh_buffer(&mut self, feedback: Vec<ScoredEntry>) -> Result<()> {
        if feedback.len() > self.capacity {
            return Err(Error::FeedbackTooLong {
                len: feedback.len(),
                capacity: self.capacity,
            });
        }
        self.buffer.drain(..feedback.len());
        self.buffer.extend(feedback);
        self.interval_index += 1;
        self.energy.charge_rx();
        Ok(())
    }

    /// Current transmit probability of `x` (no randomness consumed).
    pub fn transmit_probability_for(&self, x: &[f64], config: &FilterConfig) -> Result<f64> {
        let s_hat = knn_estimate(x, &self.buffer, config.neighbors)?;
        let beta = beta_schedule(self.interval_index, config);
        let q = transmit_probability(s_hat, &self.buffer, beta)?;
        Ok(calibrated_probability(q, self.buffer.len(), config.target_rate))
    }

    /// Bernoulli transmit decision for `x`.
    pub fn decide_transmit(&mut self, x: &[f64], config: &FilterConfig) -> Result<bool> {
        let p = self.transmit_probability_for(x, config)?;
        Ok(self.rng.random::<f64>() < p)
    }
}

/// Euclidean distance.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(distance_unchecked(a, b))
}

#[inline]
fn distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Indices of the `l` entries nearest to `x`, nearest first. Ties go to the
/// lower index.
pub fn nearest_indices(x: &[f64], buffer: &[ScoredEntry], l: usize) -> Result<Vec<(f64, usize)>> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if l == 0 || l > buffer.len() {
        return Err(Error::NeighborsOutOfRange {
            neighbors: l,
            len: buffer.len(),
        });
    }
    let mut dist = Vec::with_capacity(buffer.len());
    for (i, e) in buffer.iter().enumerate() {
        dist.push((euclidean_distance(x, &e.sample)?, i));
    }
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if l < dist.len() {
        dist.select_nth_unstable_by(l - 1, by_distance);
        dist.truncate(l);
    }
    dist.sort_unstable_by(by_distance);
    Ok(dist)
}

/// Mean score of the `l` stored entries nearest to `x`.
pub fn knn_estimate(x: &[f64], buffer: &[ScoredEntry], l: usize) -> Result<f64> {
    let nearest = nearest_indices(x, buffer, l)?;
    let sum: f64 = nearest.iter().map(|&(_, i)| buffer[i].score).sum();
    Ok(sum / l as f64)
}

/// Inverse temperature for interval `k`, rising linearly from `beta_min`
/// to `beta_max` over `anneal_intervals` and held there afterwards.
pub fn beta_schedule(interval_index: u64, config: &FilterConfig) -> f64 {
    if interval_index >= config.anneal_intervals {
        return config.beta_max;
    }
    let progress = interval_index as f64 / config.anneal_intervals as f64;
    config.beta_min + (config.beta_max - config.beta_min) * progress
}

/// Softmax weight of `s_hat` against the stored scores,
/// `exp(β·ŝ) / Σ_i exp(β·s_i)`. This is a relative weight and may exceed 1.
pub fn transmit_probability(s_hat: f64, buffer: &[ScoredEntry], beta: f64) -> Result<f64> {
    if !s_hat.is_finite() {
        return Err(Error::NonFinite(s_hat));
    }
    if !beta.is_finite() {
        return Err(Error::NonFinite(beta));
    }
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let shift = buffer
        .iter()
        .map(|e| beta * e.score)
        .fold(beta * s_hat, f64::max);
    let denom: f64 = buffer.iter().map(|e| libm::exp(beta * e.score - shift)).sum();
    Ok(libm::exp(beta * s_hat - shift) / denom)
}

/// Maps a softmax weight to a transmit probability `min(1, R·P·q)`.
#[inline]
pub fn calibrated_probability(q: f64, buffer_len: usize, rate: f64) -> f64 {
    (rate * buffer_len as f64 * q).min(1.0)
}

/// Selects exactly `count` of `weights.len()` items, each with inclusion
/// probability proportional to its weight (capped at 1), by systematic
/// sampling over a random permutation.
pub fn quota_select(weights: &[f64], count: usize, rng: &mut SimRng) -> Result<Vec<usize>> {
    let n = weights.len();
    if count >= n {
        return Ok((0..n).collect());
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if let Some(&bad) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::NonFinite(bad));
    }

    // Inclusion probabilities summing to `count`, capped at one.
    let mut incl = alloc::vec![0.0; n];
    let mut capped = alloc::vec![false; n];
    loop {
        let free_weight: f64 = (0..n).filter(|&i| !capped[i]).map(|i| weights[i]).sum();
        let free_slots = count - capped.iter().filter(|&&c| c).count();
        let mut newly_capped = false;
        for i in 0..n {
            if capped[i] {
                incl[i] = 1.0;
                continue;
            }
            incl[i] = if free_weight > 0.0 {
                free_slots as f64 * weights[i] / free_weight
            } else {
                free_slots as f64 / (n - (count - free_slots)) as f64
            };
            if incl[i] >= 1.0 {
                capped[i] = true;
                newly_capped = true;
            }
        }
        if !newly_capped {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let start: f64 = rng.random();
    let mut selected = Vec::with_capacity(count);
    let mut cumulative = 0.0;
    let mut next = start;
    for &i in &order {
        cumulative += incl[i];
        if selected.len() < count && cumulative > next {
            selected.push(i);
            next += 1.0;
        }
    }
    // Rounding in the cumulative sum can leave the last threshold unmet.
    for &i in order.iter().rev() {
        if selected.len() == count {
            break;
        }
        if !selected.contains(&i) {
            selected.push(i);
        }
    }
    selected.sort_unstable();
    Ok(selected)
}
