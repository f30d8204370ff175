//! Multilayer perceptron risk model for right-censored survival data.
//!
//! The network maps each feature row to one scalar risk score through a chain
//! of hidden layers (linear, optional batch normalization, ReLU, inverted
//! dropout) and a final linear projection. Gradients are hand-derived rather
//! than taped; the optimizer and early-stopping loop live in the `train`
//! submodule and are re-exported here.

mod train;

pub use train::{npll_loss_and_grad, train, BatchMode, StopReason, TrainConfig, TrainHistory};

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cox::{CoxError, RiskScores};
use crate::fsio;
use crate::parallel;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("input_dim must be at least 1")]
    ZeroInputDim,
    #[error("hidden layer {index} has width 0")]
    ZeroHiddenWidth { index: usize },
    #[error("dropout rate {rate} is outside [0, 1)")]
    BadDropoutRate { rate: f64 },
    #[error("batch has {got} columns, model expects {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("train-mode forward needs a non-empty batch")]
    EmptyBatch,
    #[error("batch normalization needs at least 2 rows in train mode, got {got}")]
    BatchTooSmall { got: usize },
    #[error("parameter vector has length {got}, model has {expected} trainable parameters")]
    ParamLength { expected: usize, got: usize },
    #[error("features have {rows} rows but times/events have {times}/{events}")]
    LabelMismatch {
        rows: usize,
        times: usize,
        events: usize,
    },
    #[error("{field} must be finite and non-negative, got {value}")]
    BadTrainField { field: &'static str, value: f64 },
    #[error("patience must be at least 1")]
    ZeroPatience,
    #[error("max_epochs must be at least 1")]
    ZeroMaxEpochs,
    #[error("minibatch size must be at least 1")]
    ZeroBatchSize,
    #[error("loss became non-finite ({loss}) at epoch {epoch}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("no partition with an event in every batch found after {attempts} reshuffles")]
    EventlessBatches { attempts: usize },
    #[error("loss evaluation failed")]
    Loss(#[from] CoxError),
    #[error("checkpoint is inconsistent: {0}")]
    BadCheckpoint(String),
    #[error("i/o failure")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding failed")]
    Json(#[from] serde_json::Error),
}

/// Whether a forward pass uses batch statistics and dropout (`Train`) or
/// running statistics with dropout disabled (`Eval`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture and initialization settings for [`build_mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_dropout_rate")]
    pub dropout_rate: f64,
    #[serde(default = "default_batchnorm")]
    pub batchnorm: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden_dims() -> Vec<usize> {
    vec![128, 64]
}

fn default_dropout_rate() -> f64 {
    0.3
}

fn default_batchnorm() -> bool {
    true
}

impl MlpConfig {
    /// Config with the default two-layer head: hidden [128, 64], dropout 0.3,
    /// batch normalization on.
    pub fn new(input_dim: usize, seed: u64) -> Self {
        MlpConfig {
            input_dim,
            hidden_dims: default_hidden_dims(),
            dropout_rate: default_dropout_rate(),
            batchnorm: default_batchnorm(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        if self.input_dim == 0 {
            return Err(MlpError::ZeroInputDim);
        }
        if let Some(index) = self.hidden_dims.iter().position(|&w| w == 0) {
            return Err(MlpError::ZeroHiddenWidth { index });
        }
        if !self.dropout_rate.is_finite() || self.dropout_rate < 0.0 || self.dropout_rate >= 1.0 {
            return Err(MlpError::BadDropoutRate {
                rate: self.dropout_rate,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct BatchNorm {
    pub(crate) scale: Array1<f64>,
    pub(crate) shift: Array1<f64>,
    pub(crate) running_mean: Array1<f64>,
    pub(crate) running_var: Array1<f64>,
}

impl BatchNorm {
    fn fresh(width: usize) -> Self {
        BatchNorm {
            scale: Array1::ones(width),
            shift: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }

    /// Normalizes with batch statistics and folds them into the running
    /// estimates. Returns the scaled output, the normalized values, and the
    /// per-unit reciprocal standard deviation needed by the backward pass.
    fn forward_train(&mut self, z: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let n = z.nrows();
        let nf = n as f64;
        let width = z.ncols();
        let mut out = Array2::zeros(z.raw_dim());
        let mut xhat = Array2::zeros(z.raw_dim());
        let mut inv_std = Array1::zeros(width);
        for j in 0..width {
            let mut mean = 0.0;
            for i in 0..n {
                mean += z[(i, j)];
            }
            mean /= nf;
            let mut var = 0.0;
            for i in 0..n {
                let d = z[(i, j)] - mean;
                var += d * d;
            }
            var /= nf;
            let is = 1.0 / (var + BN_EPS).sqrt();
            inv_std[j] = is;
            for i in 0..n {
                let xh = (z[(i, j)] - mean) * is;
                xhat[(i, j)] = xh;
                out[(i, j)] = self.scale[j] * xh + self.shift[j];
            }
            self.running_mean[j] = (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * mean;
            self.running_var[j] = (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * var;
        }
        (out, xhat, inv_std)
    }

    fn forward_eval(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(z.raw_dim());
        for j in 0..z.ncols() {
            let is = 1.0 / (self.running_var[j] + BN_EPS).sqrt();
            for i in 0..z.nrows() {
                out[(i, j)] =
                    self.scale[j] * (z[(i, j)] - self.running_mean[j]) * is + self.shift[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct HiddenLayer {
    pub(crate) weight: Array2<f64>,
    pub(crate) bias: Array1<f64>,
    pub(crate) batchnorm: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct OutputLayer {
    pub(crate) weight: Array1<f64>,
    pub(crate) bias: f64,
}

/// Feed-forward risk model. Hidden layers apply linear, optional batch
/// normalization, ReLU, then dropout; the output layer is a plain affine map
/// to one score per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    config: MlpConfig,
    pub(crate) hidden: Vec<HiddenLayer>,
    pub(crate) output: OutputLayer,
    mode: Mode,
    train_seed: Option<u64>,
}

/// Activations cached by a train-mode forward pass for backpropagation.
pub(crate) struct ForwardTrace {
    /// Input to each hidden linear layer, then the input to the output layer.
    pub(crate) inputs: Vec<Array2<f64>>,
    pub(crate) bn_xhat: Vec<Option<Array2<f64>>>,
    pub(crate) bn_inv_std: Vec<Option<Array1<f64>>>,
    /// Post-ReLU activations before dropout; the sign doubles as the ReLU mask.
    pub(crate) relu_out: Vec<Array2<f64>>,
    /// Inverted-dropout factors (0 or 1/keep), absent when the rate is 0.
    pub(crate) drop_scale: Vec<Option<Array2<f64>>>,
    pub(crate) scores: Vec<f64>,
}

/// Builds a model with weights and biases drawn from U(-1/sqrt(fan_in),
/// 1/sqrt(fan_in)) using a ChaCha stream seeded by `config.seed`. Batch
/// normalization starts at scale 1, shift 0, running mean 0, running
/// variance 1.
pub fn build_mlp(config: MlpConfig) -> Result<MlpModel, MlpError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut hidden = Vec::with_capacity(config.hidden_dims.len());
    let mut fan_in = config.input_dim;
    for &width in &config.hidden_dims {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut w = Vec::with_capacity(width * fan_in);
        for _ in 0..width * fan_in {
            w.push(rng.random_range(-bound..bound));
        }
        let weight = Array2::from_shape_vec((width, fan_in), w).expect("length matches shape");
        let bias = Array1::from_iter((0..width).map(|_| rng.random_range(-bound..bound)));
        let batchnorm = config.batchnorm.then(|| BatchNorm::fresh(width));
        hidden.push(HiddenLayer {
            weight,
            bias,
            batchnorm,
        });
        fan_in = width;
    }
    let bound = 1.0 / (fan_in as f64).sqrt();
    let weight = Array1::from_iter((0..fan_in).map(|_| rng.random_range(-bound..bound)));
    let bias = rng.random_range(-bound..bound);
    Ok(MlpModel {
        config,
        hidden,
        output: OutputLayer { weight, bias },
        mode: Mode::Eval,
        train_seed: None,
    })
}

impl MlpModel {
    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Seed of the most recent training run, if any.
    pub fn train_seed(&self) -> Option<u64> {
        self.train_seed
    }

    pub(crate) fn record_train_seed(&mut self, seed: u64) {
        self.train_seed = Some(seed);
    }

    /// Forward pass dispatching on the mode flag. Train mode consumes dropout
    /// draws from `rng` and updates batch-norm running statistics; eval mode
    /// leaves `rng` untouched.
    pub fn forward(
        &mut self,
        batch: &Array2<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<RiskScores, MlpError> {
        match self.mode {
            Mode::Train => self.forward_train_traced(batch, rng).map(|t| t.scores),
            Mode::Eval => self.forward_eval_impl(batch),
        }
    }

    /// Deterministic eval-mode scores, one per row, independent of the mode
    /// flag.
    pub fn predict_risk(&self, features: &Array2<f64>) -> Result<RiskScores, MlpError> {
        self.forward_eval_impl(features)
    }

    /// Number of trainable parameters: weights, biases, and batch-norm scale
    /// and shift. Running statistics are state, not parameters.
    pub fn param_count(&self) -> usize {
        let mut count = 0;
        for layer in &self.hidden {
            count += layer.weight.len() + layer.bias.len();
            if let Some(bn) = &layer.batchnorm {
                count += bn.scale.len() + bn.shift.len();
            }
        }
        count + self.output.weight.len() + 1
    }

    /// Flattens trainable parameters in a fixed order: per hidden layer the
    /// weight matrix row-major, bias, then batch-norm scale and shift, and
    /// finally the output weights and bias. [`MlpModel::set_params`] and the
    /// gradient layout in [`npll_loss_and_grad`] use the same order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.hidden {
            out.extend(layer.weight.iter().copied());
            out.extend(layer.bias.iter().copied());
            if let Some(bn) = &layer.batchnorm {
                out.extend(bn.scale.iter().copied());
                out.extend(bn.shift.iter().copied());
            }
        }
        out.extend(self.output.weight.iter().copied());
        out.push(self.output.bias);
        out
    }

    /// Writes a flat parameter vector back into the model. The layout must
    /// match [`MlpModel::params`].
    pub fn set_params(&mut self, params: &[f64]) -> Result<(), MlpError> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(MlpError::ParamLength {
                expected,
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        let mut next = || it.next().expect("length checked above");
        for layer in &mut self.hidden {
            for v in layer.weight.iter_mut() {
                *v = next();
            }
            for v in layer.bias.iter_mut() {
                *v = next();
            }
            if let Some(bn) = &mut layer.batchnorm {
                for v in bn.scale.iter_mut() {
                    *v = next();
                }
                for v in bn.shift.iter_mut() {
                    *v = next();
                }
            }
        }
        for v in self.output.weight.iter_mut() {
            *v = next();
        }
        self.output.bias = next();
        Ok(())
    }

    /// Serializes the full model state (config, parameters, running
    /// statistics, mode, training seed) as pretty JSON. Finite f64 values
    /// survive the round trip bitwise.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), MlpError> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fsio::write_atomic(path, &bytes)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<MlpModel, MlpError> {
        let bytes = std::fs::read(path)?;
        let model: MlpModel = serde_json::from_slice(&bytes)?;
        model.validate_loaded()?;
        Ok(model)
    }

    fn validate_loaded(&self) -> Result<(), MlpError> {
        self.config
            .validate()
            .map_err(|e| MlpError::BadCheckpoint(e.to_string()))?;
        if self.hidden.len() != self.config.hidden_dims.len() {
            return Err(MlpError::BadCheckpoint(format!(
                "config lists {} hidden layers, checkpoint holds {}",
                self.config.hidden_dims.len(),
                self.hidden.len()
            )));
        }
        let mut fan_in = self.config.input_dim;
        for (l, layer) in self.hidden.iter().enumerate() {
            let width = self.config.hidden_dims[l];
            if layer.weight.dim() != (width, fan_in) {
                return Err(MlpError::BadCheckpoint(format!(
                    "layer {l} weight shape {:?} does not match ({width}, {fan_in})",
                    layer.weight.dim()
                )));
            }
            if layer.bias.len() != width {
                return Err(MlpError::BadCheckpoint(format!(
                    "layer {l} bias length {} does not match width {width}",
                    layer.bias.len()
                )));
            }
            match (&layer.batchnorm, self.config.batchnorm) {
                (Some(bn), true) => {
                    if bn.scale.len() != width
                        || bn.shift.len() != width
                        || bn.running_mean.len() != width
                        || bn.running_var.len() != width
                    {
                        return Err(MlpError::BadCheckpoint(format!(
                            "layer {l} batch-norm arrays do not all have width {width}"
                        )));
                    }
                    if bn.running_var.iter().any(|&v| !v.is_finite() || v <= 0.0) {
                        return Err(MlpError::BadCheckpoint(format!(
                            "layer {l} running variance has a non-positive entry"
                        )));
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(MlpError::BadCheckpoint(format!(
                        "layer {l} batch-norm presence disagrees with the config"
                    )));
                }
            }
            fan_in = width;
        }
        if self.output.weight.len() != fan_in {
            return Err(MlpError::BadCheckpoint(format!(
                "output weight length {} does not match final width {fan_in}",
                self.output.weight.len()
            )));
        }
        Ok(())
    }

    fn check_width(&self, batch: &Array2<f64>) -> Result<(), MlpError> {
        if batch.ncols() != self.config.input_dim {
            return Err(MlpError::WidthMismatch {
                expected: self.config.input_dim,
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward_train_traced(
        &mut self,
        batch: &Array2<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardTrace, MlpError> {
        self.check_width(batch)?;
        let n = batch.nrows();
        if n == 0 {
            return Err(MlpError::EmptyBatch);
        }
        if self.config.batchnorm && !self.hidden.is_empty() && n < 2 {
            return Err(MlpError::BatchTooSmall { got: n });
        }
        let layers = self.hidden.len();
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(layers + 1),
            bn_xhat: Vec::with_capacity(layers),
            bn_inv_std: Vec::with_capacity(layers),
            relu_out: Vec::with_capacity(layers),
            drop_scale: Vec::with_capacity(layers),
            scores: Vec::new(),
        };
        let dropout_rate = self.config.dropout_rate;
        let mut x = batch.to_owned();
        for layer in &mut self.hidden {
            let z = linear_forward(&x, &layer.weight, &layer.bias);
            trace.inputs.push(x);
            let (y, xhat, inv_std) = match layer.batchnorm.as_mut() {
                Some(bn) => {
                    let (y, xhat, inv_std) = bn.forward_train(&z);
                    (y, Some(xhat), Some(inv_std))
                }
                None => (z, None, None),
            };
            trace.bn_xhat.push(xhat);
            trace.bn_inv_std.push(inv_std);
            let a = y.mapv(|v| v.max(0.0));
            let (dropped, scale) = apply_dropout(&a, dropout_rate, rng);
            trace.relu_out.push(a);
            trace.drop_scale.push(scale);
            x = dropped;
        }
        trace.scores = output_forward(&x, &self.output);
        trace.inputs.push(x);
        Ok(trace)
    }

    fn forward_eval_impl(&self, batch: &Array2<f64>) -> Result<Vec<f64>, MlpError> {
        self.check_width(batch)?;
        let mut x = batch.to_owned();
        for layer in &self.hidden {
            let z = linear_forward(&x, &layer.weight, &layer.bias);
            let y = match &layer.batchnorm {
                Some(bn) => bn.forward_eval(&z),
                None => z,
            };
            x = y.mapv(|v| v.max(0.0));
        }
        Ok(output_forward(&x, &self.output))
    }
}

/// Row-parallel affine map `x W^T + b`. Each output entry accumulates over the
/// input index in ascending order, so results do not depend on the thread
/// count.
pub(crate) fn linear_forward(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let n = x.nrows();
    let width = w.nrows();
    let rows = parallel::map_indexed(n, |i| {
        let mut row = Vec::with_capacity(width);
        for j in 0..width {
            let mut acc = b[j];
            for k in 0..x.ncols() {
                acc += x[(i, k)] * w[(j, k)];
            }
            row.push(acc);
        }
        row
    });
    let mut out = Array2::zeros((n, width));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

fn output_forward(x: &Array2<f64>, out: &OutputLayer) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let mut acc = out.bias;
            for k in 0..x.ncols() {
                acc += x[(i, k)] * out.weight[k];
            }
            acc
        })
        .collect()
}

/// Inverted dropout: kept units are rescaled by 1/keep so eval mode needs no
/// correction. A rate of 0 skips the draw entirely and leaves the stream
/// untouched.
fn apply_dropout(
    a: &Array2<f64>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Array2<f64>, Option<Array2<f64>>) {
    if rate == 0.0 {
        return (a.clone(), None);
    }
    let keep = 1.0 - rate;
    let mut factors = Vec::with_capacity(a.len());
    for _ in 0..a.len() {
        factors.push(if rng.random::<f64>() < rate {
            0.0
        } else {
            1.0 / keep
        });
    }
    let scale = Array2::from_shape_vec(a.raw_dim(), factors).expect("length matches shape");
    (a * &scale, Some(scale))
}
