//! Small dense feed-forward network used by the AP.
//!
//! Hidden layers apply an element-wise activation (optionally followed by
//! inverted dropout); the output layer is affine. With
//! [`LossKind::CrossEntropy`] the outputs are logits and a softmax head is
//! applied inside the loss. With [`LossKind::MeanSquaredError`] the outputs
//! are compared to one-hot targets (or to the label value itself when the
//! network has a single output unit).
//!
//! Per-sample gradients, and therefore leverage scores, are computed with
//! dropout disabled so they are pure functions of `(weights, x, y)`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;

use crate::linalg::{dot, squared_norm, Matrix};
use crate::rng::{derive_seed, SimRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + libm::exp(-z)),
            Activation::Tanh => libm::tanh(z),
        }
    }

    /// Derivative at pre-activation `z`, given `a = apply(z)`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    CrossEntropy,
    MeanSquaredError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input dimension, hidden widths, output dimension.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        Self {
            layer_sizes,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            loss: LossKind::CrossEntropy,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least input and output layer, got {} layer(s)",
                self.layer_sizes.len()
            )));
        }
        if self.layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig("layer sizes must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated config")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd(learning_rate)
        }
    }

    /// A zero learning rate is accepted and freezes the model.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::InvalidConfig("adam betas must lie in (0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Weights `(out, in)` and biases of one affine layer. Also the shape of a
/// gradient or optimizer moment for that layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            biases: alloc::vec![0.0; outputs],
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.as_slice().iter().chain(self.biases.iter())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .as_mut_slice()
            .iter_mut()
            .chain(self.biases.iter_mut())
    }
}

/// Parameter-shaped gradient of a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    fn zeros_like(layers: &[DenseLayer]) -> Self {
        Self {
            layers: layers
                .iter()
                .map(|l| DenseLayer::zeros(l.weights.cols(), l.weights.rows()))
                .collect(),
        }
    }

    /// All coordinates, layer by layer, weights before biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(DenseLayer::params)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    /// Euclidean norm over all flattened coordinates.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.iter().map(|g| g * g).sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct AdamMoments {
    first: Vec<DenseLayer>,
    second: Vec<DenseLayer>,
}

/// Weights, biases and optimizer accumulators.
#[derive(Debug, Clone)]
pub struct ModelState {
    config: ModelConfig,
    layers: Vec<DenseLayer>,
    adam: Option<AdamMoments>,
    step_count: u64,
    dropout_rng: SimRng,
}

impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.layers == other.layers
            && self.adam == other.adam
            && self.step_count == other.step_count
    }
}

/// Intermediate values of one forward pass.
struct Trace {
    /// `inputs[l]` is the (masked) input to layer `l`; the last entry is the
    /// network output.
    activations: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    pre_activations: Vec<Matrix>,
    masks: Option<Vec<Matrix>>,
}

impl ModelState {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SimRng::seed_from_u64(config.seed);
        let layers = config
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                let mut layer = DenseLayer::zeros(fan_in, fan_out);
                for v in layer.weights.as_mut_slice() {
                    *v = rng.random_range(-limit..=limit);
                }
                layer
            })
            .collect();
        let dropout_rng = SimRng::seed_from_u64(derive_seed(config.seed, 0xD20F));
        Ok(Self {
            config,
            layers,
            adam: None,
            step_count: 0,
            dropout_rng,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Direct parameter access, for hand-set networks and perturbation checks.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.params().count()).sum()
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.config.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim(),
                found: batch.cols(),
            });
        }
        Ok(())
    }

    fn check_labels(&self, rows: usize, labels: &[usize]) -> Result<()> {
        if labels.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                found: labels.len(),
            });
        }
        let classes = self.label_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(())
    }

    /// Number of distinct labels the output head can represent.
    fn label_classes(&self) -> usize {
        let out = self.config.output_dim();
        match self.config.loss {
            LossKind::MeanSquaredError if out == 1 => 2,
            _ => out,
        }
    }

    fn draw_masks(&mut self, batch_rows: usize) -> Option<Vec<Matrix>> {
        let p = self.config.dropout_rate;
        if p == 0.0 {
            return None;
        }
        let keep_scale = 1.0 / (1.0 - p);
        let hidden = &self.config.layer_sizes[1..self.config.layer_sizes.len() - 1];
        let rng = &mut self.dropout_rng;
        Some(
            hidden
                .iter()
                .map(|&units| {
                    let mut m = Matrix::zeros(batch_rows, units);
                    for v in m.as_mut_slice() {
                        *v = if rng.random::<f64>() < p { 0.0 } else { keep_scale };
                    }
                    m
                })
                .collect(),
        )
    }

    fn trace(&self, batch: &Matrix, masks: Option<Vec<Matrix>>) -> Trace {
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(last);
        activations.push(batch.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &activations[l];
            let mut z = Matrix::zeros(input.rows(), layer.weights.rows());
            for r in 0..input.rows() {
                let x = input.row(r);
                for (o, out) in z.row_mut(r).iter_mut().enumerate() {
                    *out = dot(layer.weights.row(o), x) + layer.biases[o];
                }
            }
            if l == last {
                activations.push(z);
            } else {
                let mut a = z.clone();
                for v in a.as_mut_slice() {
                    *v = self.config.activation.apply(*v);
                }
                if let Some(masks) = &masks {
                    for (v, m) in a.as_mut_slice().iter_mut().zip(masks[l].as_slice()) {
                        *v *= m;
                    }
                }
                pre_activations.push(z);
                activations.push(a);
            }
        }
        Trace {
            activations,
            pre_activations,
            masks,
        }
    }

    /// Inference-mode forward pass: row `i` holds the raw output (logits for
    /// cross-entropy) of sample `i`. No dropout.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_batch(batch)?;
        Ok(self.trace(batch, None).activations.pop().expect("output layer"))
    }

    /// Training-mode forward pass; applies dropout when configured.
    pub fn forward_train(&mut self, batch: &Matrix) -> Result<Matrix> {
        self.check_batch(batch)?;
        let masks = self.draw_masks(batch.rows());
        Ok(self.trace(batch, masks).activations.pop().expect("output layer"))
    }

    /// Class probabilities for cross-entropy models, raw outputs otherwise.
    pub fn predict_proba(&self, batch: &Matrix) -> Result<Matrix> {
        let mut out = self.forward(batch)?;
        if self.config.loss == LossKind::CrossEntropy {
            for r in 0..out.rows() {
                softmax_in_place(out.row_mut(r));
            }
        }
        Ok(out)
    }

    /// Predicted class of every row.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let out = self.forward(batch)?;
        let single = out.cols() == 1;
        Ok(out
            .iter_rows()
            .map(|row| {
                if single {
                    usize::from(row[0] >= 0.5)
                } else {
                    argmax(row)
                }
            })
            .collect())
    }

    /// Mean per-sample loss of `outputs` (as returned by [`Self::forward`]).
    pub fn loss(&self, outputs: &Matrix, labels: &[usize]) -> Result<f64> {
        self.check_labels(outputs.rows(), labels)?;
        if outputs.cols() != self.config.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.config.output_dim(),
                found: outputs.cols(),
            });
        }
        Ok(mean_loss(self.config.loss, outputs, labels))
    }

    /// Exact gradient of the mean batch loss, dropout disabled.
    pub fn gradient(&self, batch: &Matrix, labels: &[usize]) -> Result<Gradients> {
        self.check_batch(batch)?;
        self.check_labels(batch.rows(), labels)?;
        let trace = self.trace(batch, None);
        Ok(self.backprop(&trace, labels).1)
    }

    /// Gradient of the mean batch loss under a freshly drawn dropout mask,
    /// shared between the forward and the backward pass. Also returns the
    /// batch loss seen by that pass.
    pub fn training_gradient(
        &mut self,
        batch: &Matrix,
        labels: &[usize],
    ) -> Result<(f64, Gradients)> {
        self.check_batch(batch)?;
        self.check_labels(batch.rows(), labels)?;
        let masks = self.draw_masks(batch.rows());
        let trace = self.trace(batch, masks);
        Ok(self.backprop(&trace, labels))
    }

    fn backprop(&self, trace: &Trace, labels: &[usize]) -> (f64, Gradients) {
        let output = trace.activations.last().expect("output layer");
        let loss = mean_loss(self.config.loss, output, labels);
        let mut delta = output_delta(self.config.loss, output, labels);
        let mut grads = Gradients::zeros_like(&self.layers);

        for l in (0..self.layers.len()).rev() {
            let input = &trace.activations[l];
            let g = &mut grads.layers[l];
            for r in 0..delta.rows() {
                let d = delta.row(r);
                let x = input.row(r);
                for (o, &d_o) in d.iter().enumerate() {
                    if d_o == 0.0 {
                        continue;
                    }
                    for (w, &x_i) in g.weights.row_mut(o).iter_mut().zip(x) {
                        *w += d_o * x_i;
                    }
                    g.biases[o] += d_o;
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.layers[l].weights;
            let z = &trace.pre_activations[l - 1];
            let a = &trace.activations[l];
            let mut prev = Matrix::zeros(delta.rows(), weights.cols());
            for r in 0..delta.rows() {
                let d = delta.row(r);
                let p = prev.row_mut(r);
                for (o, &d_o) in d.iter().enumerate() {
                    for (pi, &w) in p.iter_mut().zip(weights.row(o)) {
                        *pi += d_o * w;
                    }
                }
                let activation = self.config.activation;
                for (i, pi) in p.iter_mut().enumerate() {
                    let zi = z.get(r, i);
                    *pi *= match &trace.masks {
                        None => activation.derivative(zi, a.get(r, i)),
                        Some(masks) => {
                            let keep = masks[l - 1].get(r, i);
                            if keep == 0.0 {
                                0.0
                            } else {
                                keep * activation.derivative(zi, activation.apply(zi))
                            }
                        }
                    };
                }
            }
            delta = prev;
        }
        (loss, grads)
    }

    /// Gradient-norm leverage score of one labeled sample.
    pub fn leverage_score(&self, sample: &[f64], label: usize) -> Result<f64> {
        let batch = Matrix::from_vec(1, sample.len(), sample.to_vec())?;
        Ok(self.gradient(&batch, &[label])?.norm())
    }

    /// Per-row leverage scores; each row is backpropagated on its own.
    pub fn leverage_scores(&self, batch: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
        self.check_labels(batch.rows(), labels)?;
        batch
            .iter_rows()
            .zip(labels)
            .map(|(x, &y)| self.leverage_score(x, y))
            .collect()
    }

    /// One optimizer update with a precomputed gradient.
    pub fn apply_gradients(&mut self, grads: &Gradients, opt: &OptimizerConfig) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.weights.rows() != l.weights.rows() || g.weights.cols() != l.weights.cols())
        {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                found: grads.iter().count(),
            });
        }
        self.step_count += 1;
        let lr = opt.learning_rate;
        match opt.kind {
            OptimizerKind::Sgd => {
                for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
                    for (w, &gw) in layer.params_mut().zip(g.params()) {
                        *w -= lr * gw;
                    }
                }
            }
            OptimizerKind::Adam => {
                let moments = self.adam.get_or_insert_with(|| AdamMoments {
                    first: Gradients::zeros_like(&self.layers).layers,
                    second: Gradients::zeros_like(&self.layers).layers,
                });
                let t = self.step_count as i32;
                let bias1 = 1.0 - libm::pow(opt.beta1, t as f64);
                let bias2 = 1.0 - libm::pow(opt.beta2, t as f64);
                for (((layer, g), m), v) in self
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(moments.first.iter_mut())
                    .zip(moments.second.iter_mut())
                {
                    for (((w, &gw), mw), vw) in layer
                        .params_mut()
                        .zip(g.params())
                        .zip(m.params_mut())
                        .zip(v.params_mut())
                    {
                        *mw = opt.beta1 * *mw + (1.0 - opt.beta1) * gw;
                        *vw = opt.beta2 * *vw + (1.0 - opt.beta2) * gw * gw;
                        let m_hat = *mw / bias1;
                        let v_hat = *vw / bias2;
                        *w -= lr * m_hat / (libm::sqrt(v_hat) + opt.epsilon);
                    }
                }
            }
        }
        Ok(())
    }

    /// Training gradient followed by an optimizer update. Returns the batch
    /// loss before the update.
    pub fn train_step(
        &mut self,
        batch: &Matrix,
        labels: &[usize],
        opt: &OptimizerConfig,
    ) -> Result<f64> {
        let (loss, grads) = self.training_gradient(batch, labels)?;
        self.apply_gradients(&grads, opt)?;
        Ok(loss)
    }
}

fn mean_loss(kind: LossKind, outputs: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = outputs
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| match kind {
            LossKind::CrossEntropy => log_sum_exp(row) - row[y],
            LossKind::MeanSquaredError => {
                row.iter()
                    .enumerate()
                    .map(|(c, &o)| {
                        let d = o - target(row.len(), y, c);
                        d * d
                    })
                    .sum::<f64>()
                    / row.len() as f64
            }
        })
        .sum();
    total / labels.len() as f64
}

/// d(mean loss)/d(output) for every row.
fn output_delta(kind: LossKind, outputs: &Matrix, labels: &[usize]) -> Matrix {
    let batch = labels.len() as f64;
    let mut delta = outputs.clone();
    for (r, &y) in labels.iter().enumerate() {
        let row = delta.row_mut(r);
        match kind {
            LossKind::CrossEntropy => {
                softmax_in_place(row);
                row[y] -= 1.0;
                for v in row.iter_mut() {
                    *v /= batch;
                }
            }
            LossKind::MeanSquaredError => {
                let width = row.len();
                for (c, v) in row.iter_mut().enumerate() {
                    *v = 2.0 * (*v - target(width, y, c)) / (width as f64 * batch);
                }
            }
        }
    }
    delta
}

#[inline]
fn target(width: usize, label: usize, c: usize) -> f64 {
    if width == 1 {
        label as f64
    } else if c == label {
        1.0
    } else {
        0.0
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(row.iter().map(|&v| libm::exp(v - max)).sum::<f64>())
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; first one wins on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Flattened squared norm of a parameter set, for tests and diagnostics.
pub fn squared_parameter_norm(layers: &[DenseLayer]) -> f64 {
    layers
        .iter()
        .map(|l| squared_norm(l.weights.as_slice()) + squared_norm(&l.biases))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn config(sizes: &[usize], activation: Activation, loss: LossKind) -> ModelConfig {
        ModelConfig {
            layer_sizes: sizes.to_vec(),
            activation,
            dropout_rate: 0.0,
            loss,
            seed: 7,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = config(&[2, 3, 2], Activation::Relu, LossKind::CrossEntropy);
        let a = ModelState::init(cfg.clone()).unwrap();
        let b = ModelState::init(cfg).unwrap();
        assert_eq!(a, b);
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            for (x, y) in la.weights.as_slice().iter().zip(lb.weights.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn init_rejects_single_layer_and_bad_dropout() {
        let cfg = config(&[4], Activation::Relu, LossKind::CrossEntropy);
        assert!(matches!(ModelState::init(cfg), Err(Error::InvalidConfig(_))));
        let mut cfg = config(&[4, 2], Activation::Relu, LossKind::CrossEntropy);
        cfg.dropout_rate = 1.0;
        assert!(matches!(ModelState::init(cfg), Err(Error::InvalidConfig(_))));
        let cfg = config(&[4, 0, 2], Activation::Relu, LossKind::CrossEntropy);
        assert!(ModelState::init(cfg).is_err());
    }

    #[test]
    fn biases_start_at_zero_and_weights_within_glorot_limit() {
        let m = ModelState::init(config(&[784, 32, 10], Activation::Relu, LossKind::CrossEntropy))
            .unwrap();
        for l in m.layers() {
            assert!(l.biases.iter().all(|&b| b == 0.0));
            let limit = libm::sqrt(6.0 / (l.weights.cols() + l.weights.rows()) as f64);
            assert!(l.weights.as_slice().iter().all(|w| w.abs() <= limit));
        }
        assert_eq!(m.step_count(), 0);
    }

    #[test]
    fn zero_network_gives_uniform_probabilities() {
        let mut m =
            ModelState::init(config(&[3, 4, 5], Activation::Tanh, LossKind::CrossEntropy)).unwrap();
        for l in m.layers_mut() {
            l.weights.as_mut_slice().fill(0.0);
        }
        let batch = Matrix::from_rows(&[[0.3, -1.0, 2.0], [5.0, 5.0, 5.0]]).unwrap();
        let p = m.predict_proba(&batch).unwrap();
        assert!(p.as_slice().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let loss = m.loss(&m.forward(&batch).unwrap(), &[0, 3]).unwrap();
        assert!((loss - libm::log(5.0)).abs() < 1e-9);
    }

    #[test]
    fn hand_set_two_layer_net() {
        // 1 input -> 1 tanh hidden unit -> 1 linear output.
        let mut m =
            ModelState::init(config(&[1, 1, 1], Activation::Tanh, LossKind::MeanSquaredError))
                .unwrap();
        m.layers_mut()[0].weights.set(0, 0, 2.0);
        m.layers_mut()[0].biases[0] = -0.5;
        m.layers_mut()[1].weights.set(0, 0, 3.0);
        m.layers_mut()[1].biases[0] = 0.25;
        let out = m.forward(&Matrix::from_rows(&[[0.75]]).unwrap()).unwrap();
        let expected = 3.0 * libm::tanh(2.0 * 0.75 - 0.5) + 0.25;
        assert_eq!(out.get(0, 0), expected);
    }

    #[test]
    fn inference_forward_is_pure() {
        let mut cfg = config(&[3, 6, 2], Activation::Relu, LossKind::CrossEntropy);
        cfg.dropout_rate = 0.5;
        let m = ModelState::init(cfg).unwrap();
        let batch = Matrix::from_rows(&[[0.1, 0.2, 0.3]]).unwrap();
        assert_eq!(m.forward(&batch).unwrap(), m.forward(&batch).unwrap());
    }

    #[test]
    fn dropout_masks_and_rescales_in_training() {
        let mut cfg = config(&[1, 400, 1], Activation::Relu, LossKind::MeanSquaredError);
        cfg.dropout_rate = 0.25;
        let mut m = ModelState::init(cfg).unwrap();
        for l in m.layers_mut() {
            l.weights.as_mut_slice().fill(1.0);
        }
        // Each hidden unit outputs relu(1) = 1; survivors are scaled to 4/3.
        let out = m.forward_train(&Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        let survivors = out.get(0, 0) / (4.0 / 3.0);
        assert!((survivors - libm::round(survivors)).abs() < 1e-9);
        assert!((survivors - 300.0).abs() < 40.0);
        let inference = m.forward(&Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(inference.get(0, 0), 400.0);
    }

    #[test]
    fn loss_edge_cases() {
        let m =
            ModelState::init(config(&[2, 3], Activation::Relu, LossKind::CrossEntropy)).unwrap();
        let confident = Matrix::from_rows(&[[800.0, 0.0, 0.0], [0.0, 0.0, 800.0]]).unwrap();
        assert!(m.loss(&confident, &[0, 2]).unwrap() < 1e-9);
        assert_eq!(
            m.loss(&confident, &[0, 3]),
            Err(Error::LabelOutOfRange {
                label: 3,
                classes: 3
            })
        );
        assert!(m.loss(&confident, &[0]).is_err());
    }

    #[test]
    fn cross_entropy_matches_scalar_loop() {
        let m =
            ModelState::init(config(&[2, 3], Activation::Relu, LossKind::CrossEntropy)).unwrap();
        let rows = [[0.5, -1.0, 2.0], [1.5, 1.5, -0.3], [-2.0, 0.0, 0.7]];
        let labels = [2, 0, 1];
        let mut expected = 0.0;
        for (row, &y) in rows.iter().zip(&labels) {
            let denom: f64 = row.iter().map(|v| libm::exp(*v)).sum();
            expected += -libm::log(libm::exp(row[y]) / denom);
        }
        expected /= 3.0;
        let out = Matrix::from_rows(&rows).unwrap();
        assert!((m.loss(&out, &labels).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mse_matches_scalar_loop() {
        let m = ModelState::init(config(&[2, 2], Activation::Relu, LossKind::MeanSquaredError))
            .unwrap();
        let out = Matrix::from_rows(&[[0.5, 0.25], [1.0, -1.0]]).unwrap();
        // targets (1,0) and (0,1)
        let expected = (((0.5 - 1.0f64).powi(2) + 0.25f64.powi(2)) / 2.0
            + (1.0f64.powi(2) + (-2.0f64).powi(2)) / 2.0)
            / 2.0;
        assert!((m.loss(&out, &[0, 1]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_at_mse_minimum() {
        let mut m = ModelState::init(config(&[1, 2], Activation::Relu, LossKind::MeanSquaredError))
            .unwrap();
        m.layers_mut()[0].weights = Matrix::from_rows(&[[1.0], [0.0]]).unwrap();
        m.layers_mut()[0].biases = vec![0.0, 0.0];
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        let g = m.gradient(&x, &[0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(m.leverage_score(&[1.0], 0).unwrap(), 0.0);
    }

    #[test]
    fn duplicated_batch_has_same_mean_gradient() {
        let m =
            ModelState::init(config(&[2, 4, 3], Activation::Sigmoid, LossKind::CrossEntropy))
                .unwrap();
        let x = Matrix::from_rows(&[[0.2, 0.9], [0.7, 0.1]]).unwrap();
        let xx = Matrix::from_rows(&[[0.2, 0.9], [0.7, 0.1], [0.2, 0.9], [0.7, 0.1]]).unwrap();
        let g1 = m.gradient(&x, &[0, 2]).unwrap().flatten();
        let g2 = m.gradient(&xx, &[0, 2, 0, 2]).unwrap().flatten();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_step_is_exact() {
        let mut m = ModelState::init(config(&[1, 1], Activation::Relu, LossKind::MeanSquaredError))
            .unwrap();
        m.layers_mut()[0].weights.set(0, 0, 1.0);
        let mut g = Gradients::zeros_like(m.layers());
        g.layers[0].weights.set(0, 0, 0.5);
        m.apply_gradients(&g, &OptimizerConfig::sgd(0.1)).unwrap();
        assert_eq!(m.layers()[0].weights.get(0, 0), 0.95);
        assert_eq!(m.layers()[0].biases[0], 0.0);
        assert_eq!(m.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_sgd_parameters_unchanged() {
        let mut m =
            ModelState::init(config(&[3, 2, 2], Activation::Tanh, LossKind::CrossEntropy)).unwrap();
        let before = m.layers().to_vec();
        let g = Gradients::zeros_like(m.layers());
        m.apply_gradients(&g, &OptimizerConfig::sgd(0.5)).unwrap();
        assert_eq!(m.layers(), &before[..]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut m = ModelState::init(config(&[1, 1], Activation::Relu, LossKind::MeanSquaredError))
            .unwrap();
        m.layers_mut()[0].weights.set(0, 0, 1.0);
        let mut g = Gradients::zeros_like(m.layers());
        g.layers[0].weights.set(0, 0, 1.0);
        m.apply_gradients(&g, &OptimizerConfig::adam(0.001)).unwrap();
        // m_hat = 1, v_hat = 1: step = 0.001 / (1 + 1e-8).
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((m.layers()[0].weights.get(0, 0) - expected).abs() < 1e-15);
        // The bias had zero gradient and must not move.
        assert_eq!(m.layers()[0].biases[0], 0.0);
    }

    #[test]
    fn apply_gradients_rejects_shape_mismatch() {
        let mut m =
            ModelState::init(config(&[2, 2], Activation::Relu, LossKind::CrossEntropy)).unwrap();
        let other =
            ModelState::init(config(&[3, 2], Activation::Relu, LossKind::CrossEntropy)).unwrap();
        let g = Gradients::zeros_like(other.layers());
        assert!(m.apply_gradients(&g, &OptimizerConfig::sgd(0.1)).is_err());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m =
            ModelState::init(config(&[3, 2], Activation::Relu, LossKind::CrossEntropy)).unwrap();
        let err = m.forward(&Matrix::zeros(1, 2)).unwrap_err();
        assert_eq!(
            err,
            Error::DimensionMismatch {
                expected: 3,
                found: 2
            }
        );
    }

    #[test]
    fn batch_scores_equal_single_calls() {
        let m =
            ModelState::init(config(&[2, 5, 3], Activation::Tanh, LossKind::CrossEntropy)).unwrap();
        let rows = [[0.1, 0.4], [0.9, 0.3], [0.5, 0.5]];
        let labels = [0, 1, 2];
        let batch = m
            .leverage_scores(&Matrix::from_rows(&rows).unwrap(), &labels)
            .unwrap();
        for ((row, &y), s) in rows.iter().zip(&labels).zip(&batch) {
            assert_eq!(*s, m.leverage_score(row, y).unwrap());
        }
    }

    #[test]
    fn predict_uses_argmax() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
    }
}
