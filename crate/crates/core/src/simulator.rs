//! Discrete-time simulation of one cell.
//!
//! Time advances in ticks; each node generates one sample per tick, so an
//! interval of `m` samples lasts `m` ticks and the rate `R` is directly a
//! per-sample transmit probability. At the end of each interval the AP
//! trains, scores and (for the importance scheme) feeds scores back.
//!
//! Nodes are stepped in id order and every random stream is derived from
//! the run seed, so a run is a pure function of its configuration and data.

use alloc::format;
use alloc::vec::Vec;

use libm::{log, round};

use crate::ap::{ApState, TrainingConfig};
use crate::baselines::{genie_probability, genie_transmit_probability, uniform_decide, ClassDistribution};
use crate::datasets::{partition_streams, train_test_split, Dataset, NodeStream, Split, StreamConfig};
use crate::energy::{EnergyLedger, EnergyParams};
use crate::filter::{beta_schedule, knn_estimate, quota_select, FilterConfig, NodeState};
use crate::linalg::Matrix;
use crate::model::{ModelConfig, ModelState};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Scheme {
    Importance,
    Uniform,
    Genie,
    TransmitAll,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Importance => "importance",
            Scheme::Uniform => "uniform",
            Scheme::Genie => "genie",
            Scheme::TransmitAll => "transmit_all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Scheme::Importance, Scheme::Uniform, Scheme::Genie, Scheme::TransmitAll]
            .into_iter()
            .find(|k| k.name() == s)
    }

    /// Schemes whose packet budget is tied to `R`.
    pub fn is_rate_matched(self) -> bool {
        self != Scheme::TransmitAll
    }
}

/// How a node turns transmit weights into packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TransmissionMode {
    /// Independent per-sample coin flips; the packet count per interval is
    /// random with mean at most `R·m`.
    #[default]
    Bernoulli,
    /// Exactly `round(R·m)` packets per node per interval, chosen with
    /// inclusion probabilities proportional to the scheme's weights.
    Quota,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub nodes: usize,
    pub samples_per_interval: usize,
    pub rounds: u64,
    /// Overrides `filter.target_rate`.
    pub rate: f64,
    pub scheme: Scheme,
    pub transmission: TransmissionMode,
    pub filter: FilterConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub energy: EnergyParams,
    pub seed: u64,
    pub test_fraction: f64,
    pub cycle: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.samples_per_interval == 0 || self.rounds == 0 {
            return Err(Error::InvalidConfig(
                "nodes, samples per interval and rounds must be positive".into(),
            ));
        }
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::InvalidRate(self.rate));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        self.effective_filter().validate()?;
        self.model.validate()?;
        self.training.validate()?;
        self.energy.validate()
    }

    pub fn effective_filter(&self) -> FilterConfig {
        FilterConfig {
            target_rate: self.rate,
            ..self.filter
        }
    }

    /// Nominal packets per node per interval, `round(R·m)`.
    pub fn nominal_packets(&self) -> usize {
        round(self.rate * self.samples_per_interval as f64) as usize
    }
}

/// One transmission round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    /// 1-based.
    pub round: u64,
    pub train_error: f64,
    pub test_error: f64,
    pub packets_total: u64,
    /// Per-node energy spent during this round.
    pub energy_mean: f64,
    pub energy_max: f64,
    /// Inverse temperature in force during the round (0 for schemes that do
    /// not use it).
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub ledgers: Vec<EnergyLedger>,
    /// Round (1-based) in which each node could no longer wake up.
    pub depleted_at: Vec<Option<u64>>,
    pub model: ModelState,
    pub nodes: Vec<NodeState>,
    pub split: Split,
}

impl RunOutput {
    pub fn packets_total(&self) -> u64 {
        self.ledgers.iter().map(|l| l.transmissions).sum()
    }

    /// Transmitted over generated samples, per node.
    pub fn transmit_fractions(&self) -> Vec<f64> {
        self.ledgers
            .iter()
            .map(|l| {
                if l.wakes == 0 {
                    0.0
                } else {
                    l.transmissions as f64 / l.wakes as f64
                }
            })
            .collect()
    }

    /// Mean per-node consumption per interval over the whole run.
    pub fn mean_energy_per_interval(&self) -> f64 {
        let rounds = self.metrics.len().max(1) as f64;
        self.ledgers.iter().map(EnergyLedger::consumed).sum::<f64>()
            / (self.ledgers.len() as f64 * rounds)
    }
}

/// Runs the configured scheme on `data`.
///
/// The data is split into train/test rows, the training rows are dealt to
/// the nodes, and `rounds` intervals are simulated.
pub fn run(config: &SimConfig, data: &Dataset) -> Result<RunOutput> {
    config.validate()?;
    if data.dim() != config.model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: config.model.input_dim(),
            found: data.dim(),
        });
    }
    let filter = config.effective_filter();
    let split = train_test_split(data.len(), config.test_fraction, derive_seed(config.seed, 3))?;
    if split.test.is_empty() {
        return Err(Error::EmptyInput("test split is empty"));
    }
    let mut streams = partition_streams(
        &split.train,
        &StreamConfig {
            samples_per_interval: config.samples_per_interval,
            node_count: config.nodes,
            shuffle_seed: derive_seed(config.seed, 4),
            cycle: config.cycle,
        },
    )?;
    let test_x = data.features().select_rows(&split.test);
    let test_y: Vec<usize> = split.test.iter().map(|&i| data.labels()[i]).collect();
    let prior = ClassDistribution::new(data.class_frequencies_of(&split.train))?;

    let mut nodes = Vec::with_capacity(config.nodes);
    for (k, s) in streams.iter().enumerate() {
        let initial = s
            .peek(filter.buffer_size)?
            .into_iter()
            .map(|id| data.features().row(id).to_vec())
            .collect();
        nodes.push(NodeState::new(
            initial,
            filter.buffer_size,
            stream(config.seed, 1000 + k as u64),
            config.energy,
        )?);
    }

    let model = ModelState::init(ModelConfig {
        seed: derive_seed(config.seed, 2),
        ..config.model.clone()
    })?;
    let mut ap = ApState::new(model, stream(config.seed, 1));
    let mut depleted_at = alloc::vec![None; config.nodes];
    let mut metrics = Vec::with_capacity(config.rounds as usize);

    for round in 1..=config.rounds {
        let beta = match config.scheme {
            Scheme::Importance => beta_schedule(round - 1, &filter),
            _ => 0.0,
        };
        let before: Vec<(f64, u64)> = nodes
            .iter()
            .map(|n| (n.energy.consumed(), n.energy.transmissions))
            .collect();

        for (k, (node, node_stream)) in nodes.iter_mut().zip(streams.iter_mut()).enumerate() {
            let mut ctx = NodeStep {
                node,
                stream: node_stream,
                node_id: k,
                depleted: &mut depleted_at[k],
                round,
                data,
                ap: &mut ap,
            };
            match config.transmission {
                TransmissionMode::Bernoulli => ctx.bernoulli_interval(config, &filter, &prior)?,
                TransmissionMode::Quota => ctx.quota_interval(config, &filter, &prior)?,
            }
        }

        let trained = if ap.current_interval().is_empty() {
            false
        } else {
            ap.train_round(&config.training)?;
            ap.score_current()?;
            true
        };
        if config.scheme == Scheme::Importance {
            for (k, node) in nodes.iter_mut().enumerate() {
                if depleted_at[k].is_some() || node.energy.remaining() < node.energy.params().rx {
                    continue;
                }
                let feedback = if trained {
                    ap.select_feedback(k, filter.buffer_size, config.nominal_packets())
                } else {
                    Vec::new()
                };
                node.refresh_buffer(feedback)?;
            }
        }
        ap.close_interval(trained);

        let spent: Vec<f64> = nodes
            .iter()
            .zip(&before)
            .map(|(n, (e, _))| n.energy.consumed() - e)
            .collect();
        let packets: u64 = nodes
            .iter()
            .zip(&before)
            .map(|(n, (_, tx))| n.energy.transmissions - tx)
            .sum();
        let (train_error, test_error) = evaluate(&ap, &test_x, &test_y)?;
        metrics.push(RoundMetrics {
            round,
            train_error,
            test_error,
            packets_total: packets,
            energy_mean: spent.iter().sum::<f64>() / spent.len() as f64,
            energy_max: spent.iter().copied().fold(0.0, f64::max),
            beta,
        });
    }

    Ok(RunOutput {
        metrics,
        ledgers: nodes.iter().map(|n| n.energy).collect(),
        depleted_at,
        model: ap.model,
        nodes,
        split,
    })
}

struct NodeStep<'a> {
    node: &'a mut NodeState,
    stream: &'a mut NodeStream,
    node_id: usize,
    depleted: &'a mut Option<u64>,
    round: u64,
    data: &'a Dataset,
    ap: &'a mut ApState,
}

impl NodeStep<'_> {
    /// Wakes the node for one sample; `None` once the battery is empty.
    fn wake(&mut self) -> Result<Option<usize>> {
        if self.depleted.is_some() {
            return Ok(None);
        }
        if self.node.energy.depleted() {
            *self.depleted = Some(self.round);
            return Ok(None);
        }
        let id = self.stream.next_id()?;
        self.node.energy.charge_wake();
        Ok(Some(id))
    }

    fn transmit(&mut self, id: usize) -> Result<()> {
        if self.node.energy.remaining() < self.node.energy.params().tx {
            *self.depleted = Some(self.round);
            return Ok(());
        }
        self.node.energy.charge_tx();
        self.ap.receive(self.node_id, self.data.sample(id), self.data)
    }

    fn bernoulli_interval(
        &mut self,
        config: &SimConfig,
        filter: &FilterConfig,
        prior: &ClassDistribution,
    ) -> Result<()> {
        for _ in 0..config.samples_per_interval {
            let Some(id) = self.wake()? else { break };
            let x = self.data.features().row(id);
            let send = match config.scheme {
                Scheme::Importance => self.node.decide_transmit(x, filter)?,
                Scheme::Uniform => uniform_decide(&mut self.node.rng, config.rate)?,
                Scheme::Genie => {
                    let p = genie_transmit_probability(self.data.labels()[id], prior, config.rate)?;
                    rand::Rng::random::<f64>(&mut self.node.rng) < p
                }
                Scheme::TransmitAll => true,
            };
            if send {
                self.transmit(id)?;
            }
        }
        Ok(())
    }

    fn quota_interval(
        &mut self,
        config: &SimConfig,
        filter: &FilterConfig,
        prior: &ClassDistribution,
    ) -> Result<()> {
        let mut ids = Vec::with_capacity(config.samples_per_interval);
        for _ in 0..config.samples_per_interval {
            match self.wake()? {
                Some(id) => ids.push(id),
                None => break,
            }
        }
        let chosen: Vec<usize> = match config.scheme {
            Scheme::TransmitAll => (0..ids.len()).collect(),
            scheme => {
                let weights = self.weights(scheme, &ids, filter, prior)?;
                quota_select(&weights, config.nominal_packets(), &mut self.node.rng)?
            }
        };
        for i in chosen {
            self.transmit(ids[i])?;
        }
        Ok(())
    }

    fn weights(
        &self,
        scheme: Scheme,
        ids: &[usize],
        filter: &FilterConfig,
        prior: &ClassDistribution,
    ) -> Result<Vec<f64>> {
        match scheme {
            Scheme::Importance => {
                let beta = beta_schedule(self.node.interval_index, filter);
                let estimates = ids
                    .iter()
                    .map(|&id| {
                        knn_estimate(self.data.features().row(id), self.node.buffer(), filter.neighbors)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let top = estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok(estimates
                    .iter()
                    .map(|s| libm::exp(beta * (s - top)))
                    .collect())
            }
            Scheme::Genie => ids
                .iter()
                .map(|&id| genie_probability(self.data.labels()[id], prior))
                .collect(),
            _ => Ok(alloc::vec![1.0; ids.len()]),
        }
    }
}

/// Misclassification rate of the AP model on everything it has received
/// (NaN before the first packet) and on the held-out test set.
pub fn evaluate(ap: &ApState, test_x: &Matrix, test_y: &[usize]) -> Result<(f64, f64)> {
    if test_y.is_empty() {
        return Err(Error::EmptyInput("test set is empty"));
    }
    let history = ap.history();
    let train_error = if history.is_empty() {
        f64::NAN
    } else {
        let rows: Vec<&[f64]> = history.iter().map(|r| r.sample.features.as_slice()).collect();
        let labels: Vec<usize> = history.iter().map(|r| r.label).collect();
        classification_error(&ap.model, &Matrix::from_rows(&rows)?, &labels)?
    };
    Ok((train_error, classification_error(&ap.model, test_x, test_y)?))
}

/// Fraction of rows whose predicted class differs from the label.
pub fn classification_error(model: &ModelState, x: &Matrix, y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyInput("no samples to evaluate"));
    }
    let predicted = model.predict(x)?;
    let wrong = predicted.iter().zip(y).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / y.len() as f64)
}

/// `P_ε ≈ α·R^exponent`, fitted by least squares in log-log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub alpha: f64,
    pub exponent: f64,
    pub points_used: usize,
}

/// Fits the scaling law to `(rate, error)` points. Points with a
/// non-positive error or rate are dropped; at least three distinct rates
/// must remain.
pub fn fit_scaling_law(points: &[(f64, f64)]) -> Result<ScalingFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(r, e)| *r > 0.0 && *e > 0.0 && r.is_finite() && e.is_finite())
        .map(|&(r, e)| (log(r), log(e)))
        .collect();
    let mut rates: Vec<f64> = usable.iter().map(|p| p.0).collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    if rates.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: rates.len(),
        });
    }
    let n = usable.len() as f64;
    let mean_x = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let exponent = sxy / sxx;
    Ok(ScalingFit {
        alpha: libm::exp(mean_y - exponent * mean_x),
        exponent,
        points_used: usable.len(),
    })
}

/// Whether rate-matched packet totals differ by less than `tolerance`
/// (relative to the largest total).
pub fn packets_fair(totals: &[u64], tolerance: f64) -> bool {
    let max = totals.iter().copied().max().unwrap_or(0);
    let min = totals.iter().copied().min().unwrap_or(0);
    max == 0 || ((max - min) as f64 / max as f64) < tolerance
}

/// Largest per-node transmit fraction a run may show and still count as
/// rate compliant: `R·(1 + slack)`, plus three binomial standard deviations
/// when packets are drawn independently.
pub fn rate_compliance_limit(
    rate: f64,
    slack: f64,
    mode: TransmissionMode,
    samples_per_node: u64,
) -> f64 {
    let base = rate * (1.0 + slack);
    match mode {
        TransmissionMode::Quota => base,
        TransmissionMode::Bernoulli => {
            let n = samples_per_node.max(1) as f64;
            base + 3.0 * libm::sqrt(rate * (1.0 - rate) / n)
        }
    }
}
