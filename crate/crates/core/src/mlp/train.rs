//! Optimization loop for the perceptron risk model: hand-derived
//! backpropagation of the Cox negative partial log-likelihood, Adam with
//! decoupled weight decay, and early stopping on validation loss.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cox::{cox_npll, cox_npll_gradient, CoxError};
use crate::parallel;

use super::{BatchNorm, ForwardTrace, HiddenLayer, MlpError, MlpModel, Mode, OutputLayer};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Reshuffle attempts before giving up on an event-in-every-batch partition.
const SHUFFLE_ATTEMPTS: usize = 100;

/// How many rows each optimization step sees. Full-batch steps use the whole
/// training split as the risk set; minibatch steps restrict the risk set to
/// the batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchMode {
    #[default]
    FullBatch,
    Minibatch {
        size: usize,
    },
}

/// Optimizer and early-stopping settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
    #[serde(default)]
    pub batch_mode: BatchMode,
    #[serde(default)]
    pub seed: u64,
}

fn default_learning_rate() -> f64 {
    1e-4
}

fn default_weight_decay() -> f64 {
    1e-3
}

fn default_max_epochs() -> usize {
    100
}

fn default_patience() -> usize {
    10
}

fn default_min_delta() -> f64 {
    1e-4
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_learning_rate(),
            weight_decay: default_weight_decay(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            min_delta: default_min_delta(),
            batch_mode: BatchMode::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        for (field, value) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("min_delta", self.min_delta),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(MlpError::BadTrainField { field, value });
            }
        }
        if self.patience == 0 {
            return Err(MlpError::ZeroPatience);
        }
        if self.max_epochs == 0 {
            return Err(MlpError::ZeroMaxEpochs);
        }
        if let BatchMode::Minibatch { size: 0 } = self.batch_mode {
            return Err(MlpError::ZeroBatchSize);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

/// Per-epoch losses and stopping bookkeeping from one [`train`] run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean train-mode loss of each epoch's optimization steps.
    pub train_loss: Vec<f64>,
    /// Eval-mode validation loss recorded after each epoch.
    pub val_loss: Vec<f64>,
    /// 1-based epoch holding the minimum recorded validation loss; the
    /// returned model carries that epoch's state.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    /// Worker threads available during the run. Results do not depend on it;
    /// recorded so reproducibility reports can state the execution context.
    pub threads: usize,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.val_loss.len()
    }

    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch - 1]
    }
}

struct AdamW {
    learning_rate: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    fn new(dim: usize, learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// One Adam update with decoupled weight decay. The decay term is scaled
    /// by the learning rate, so a zero learning rate leaves every parameter
    /// bitwise unchanged regardless of the decay setting.
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = ADAM_BETA1 * self.m[k] + (1.0 - ADAM_BETA1) * grad[k];
            self.v[k] = ADAM_BETA2 * self.v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= self.learning_rate
                * (m_hat / (v_hat.sqrt() + ADAM_EPS) + self.weight_decay * params[k]);
        }
    }
}

fn check_labels(features: &Array2<f64>, times: &[f64], events: &[bool]) -> Result<(), MlpError> {
    if times.len() != features.nrows() || events.len() != features.nrows() {
        return Err(MlpError::LabelMismatch {
            rows: features.nrows(),
            times: times.len(),
            events: events.len(),
        });
    }
    Ok(())
}

/// Train-mode loss and analytic parameter gradient of the Cox negative
/// partial log-likelihood over `features`. The gradient layout matches
/// [`MlpModel::params`]. Dropout draws come from `rng`; batch-norm running
/// statistics are updated as a side effect, which does not change the loss.
pub fn npll_loss_and_grad(
    model: &mut MlpModel,
    features: &Array2<f64>,
    times: &[f64],
    events: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>), MlpError> {
    check_labels(features, times, events)?;
    let trace = model.forward_train_traced(features, rng)?;
    let loss = cox_npll(&trace.scores, times, events)?;
    let dscores = cox_npll_gradient(&trace.scores, times, events)?;
    let grad = backward(model, &trace, &dscores);
    Ok((loss, grad))
}

struct LayerGrads {
    dw: Array2<f64>,
    db: Array1<f64>,
    dscale: Option<Array1<f64>>,
    dshift: Option<Array1<f64>>,
}

/// Backpropagates `dscores` through the cached forward pass. Returns the
/// flat gradient in [`MlpModel::params`] order.
fn backward(model: &MlpModel, trace: &ForwardTrace, dscores: &[f64]) -> Vec<f64> {
    let n = dscores.len();
    let layers = model.hidden.len();
    let x_last = &trace.inputs[layers];
    let d_last = x_last.ncols();

    let mut dw_out = Array1::zeros(d_last);
    for k in 0..d_last {
        let mut acc = 0.0;
        for i in 0..n {
            acc += dscores[i] * x_last[(i, k)];
        }
        dw_out[k] = acc;
    }
    let db_out: f64 = dscores.iter().sum();
    let mut dx = Array2::zeros((n, d_last));
    for i in 0..n {
        for k in 0..d_last {
            dx[(i, k)] = dscores[i] * model.output.weight[k];
        }
    }

    let mut reversed: Vec<LayerGrads> = Vec::with_capacity(layers);
    for l in (0..layers).rev() {
        let layer = &model.hidden[l];
        if let Some(scale) = &trace.drop_scale[l] {
            dx = &dx * scale;
        }
        let relu = &trace.relu_out[l];
        for (idx, v) in dx.indexed_iter_mut() {
            if relu[idx] <= 0.0 {
                *v = 0.0;
            }
        }
        let (dz, dscale, dshift) = match (&layer.batchnorm, &trace.bn_xhat[l], &trace.bn_inv_std[l])
        {
            (Some(bn), Some(xhat), Some(inv_std)) => {
                let (dz, dg, ds) = batchnorm_backward(bn, xhat, inv_std, &dx);
                (dz, Some(dg), Some(ds))
            }
            _ => (dx, None, None),
        };
        let (dw, db, dprev) = linear_backward(&trace.inputs[l], &layer.weight, &dz);
        reversed.push(LayerGrads {
            dw,
            db,
            dscale,
            dshift,
        });
        dx = dprev;
    }

    let mut flat = Vec::with_capacity(model.param_count());
    for grads in reversed.into_iter().rev() {
        flat.extend(grads.dw.iter().copied());
        flat.extend(grads.db.iter().copied());
        if let Some(g) = grads.dscale {
            flat.extend(g.iter().copied());
        }
        if let Some(g) = grads.dshift {
            flat.extend(g.iter().copied());
        }
    }
    flat.extend(dw_out.iter().copied());
    flat.push(db_out);
    flat
}

/// Gradients of `z = x W^T + b` given `dz`: weight and bias gradients plus
/// the gradient passed to the previous layer. Row sums accumulate in
/// ascending index order inside each parallel task, keeping results
/// independent of the thread count.
fn linear_backward(
    x: &Array2<f64>,
    w: &Array2<f64>,
    dz: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let n = x.nrows();
    let d_in = x.ncols();
    let d_out = w.nrows();
    let weight_rows = parallel::map_indexed(d_out, |j| {
        let mut row = vec![0.0; d_in];
        let mut bias = 0.0;
        for i in 0..n {
            let g = dz[(i, j)];
            bias += g;
            for k in 0..d_in {
                row[k] += g * x[(i, k)];
            }
        }
        (row, bias)
    });
    let mut dw = Array2::zeros((d_out, d_in));
    let mut db = Array1::zeros(d_out);
    for (j, (row, bias)) in weight_rows.into_iter().enumerate() {
        db[j] = bias;
        for (k, v) in row.into_iter().enumerate() {
            dw[(j, k)] = v;
        }
    }
    let dx_rows = parallel::map_indexed(n, |i| {
        let mut row = vec![0.0; d_in];
        for j in 0..d_out {
            let g = dz[(i, j)];
            for k in 0..d_in {
                row[k] += g * w[(j, k)];
            }
        }
        row
    });
    let mut dx = Array2::zeros((n, d_in));
    for (i, row) in dx_rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            dx[(i, k)] = v;
        }
    }
    (dw, db, dx)
}

/// Batch-norm backward over cached normalized values. Accounts for the
/// dependence of the batch mean and variance on every row.
fn batchnorm_backward(
    bn: &BatchNorm,
    xhat: &Array2<f64>,
    inv_std: &Array1<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = dy.nrows();
    let nf = n as f64;
    let width = dy.ncols();
    let mut dz = Array2::zeros(dy.raw_dim());
    let mut dscale = Array1::zeros(width);
    let mut dshift = Array1::zeros(width);
    for j in 0..width {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for i in 0..n {
            sum_dy += dy[(i, j)];
            sum_dy_xhat += dy[(i, j)] * xhat[(i, j)];
        }
        dshift[j] = sum_dy;
        dscale[j] = sum_dy_xhat;
        let coef = bn.scale[j] * inv_std[j] / nf;
        for i in 0..n {
            dz[(i, j)] = coef * (nf * dy[(i, j)] - sum_dy - xhat[(i, j)] * sum_dy_xhat);
        }
    }
    (dz, dscale, dshift)
}

/// Shuffles `0..n` into chunks of `size` such that every chunk contains an
/// event, retrying the shuffle up to [`SHUFFLE_ATTEMPTS`] times. A trailing
/// single-row chunk is merged into its predecessor when batch normalization
/// needs pairs.
fn plan_minibatches(
    n: usize,
    size: usize,
    needs_pairs: bool,
    events: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>, MlpError> {
    if size == 0 {
        return Err(MlpError::ZeroBatchSize);
    }
    let size = size.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..SHUFFLE_ATTEMPTS {
        idx.shuffle(rng);
        let mut chunks: Vec<Vec<usize>> = idx.chunks(size).map(|c| c.to_vec()).collect();
        if needs_pairs && chunks.len() >= 2 && chunks.last().is_some_and(|c| c.len() < 2) {
            let tail = chunks.pop().expect("checked non-empty");
            chunks.last_mut().expect("at least one chunk").extend(tail);
        }
        if chunks.iter().all(|c| c.iter().any(|&i| events[i])) {
            return Ok(chunks);
        }
    }
    Err(MlpError::EventlessBatches {
        attempts: SHUFFLE_ATTEMPTS,
    })
}

fn gather(
    x: &Array2<f64>,
    times: &[f64],
    events: &[bool],
    idx: &[usize],
) -> (Array2<f64>, Vec<f64>, Vec<bool>) {
    let mut bx = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        bx.row_mut(r).assign(&x.row(i));
    }
    let bt = idx.iter().map(|&i| times[i]).collect();
    let be = idx.iter().map(|&i| events[i]).collect();
    (bx, bt, be)
}

fn train_step(
    model: &mut MlpModel,
    opt: &mut AdamW,
    x: &Array2<f64>,
    times: &[f64],
    events: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<f64, MlpError> {
    let (loss, grad) = npll_loss_and_grad(model, x, times, events, rng)?;
    let mut params = model.params();
    opt.step(&mut params, &grad);
    model
        .set_params(&params)
        .expect("parameter count is stable across steps");
    Ok(loss)
}

fn check_finite(loss: f64, epoch: usize) -> Result<(), MlpError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(MlpError::Divergence { epoch, loss })
    }
}

struct Snapshot {
    val_loss: f64,
    epoch: usize,
    hidden: Vec<HiddenLayer>,
    output: OutputLayer,
}

/// Fits the model by gradient descent on the Cox negative partial
/// log-likelihood and returns the state from the epoch with the lowest
/// validation loss.
///
/// After each epoch the validation split is scored in eval mode. The best
/// state is snapshotted whenever the validation loss reaches a new strict
/// minimum; the patience counter resets only when the loss beats its anchor
/// by more than `min_delta`, so training stops after `patience` consecutive
/// epochs without a material improvement and the reported `best_epoch`
/// always points at the recorded minimum.
#[allow(clippy::too_many_arguments)]
pub fn train(
    mut model: MlpModel,
    train_features: &Array2<f64>,
    train_times: &[f64],
    train_events: &[bool],
    val_features: &Array2<f64>,
    val_times: &[f64],
    val_events: &[bool],
    tc: &TrainConfig,
) -> Result<(MlpModel, TrainHistory), MlpError> {
    tc.validate()?;
    check_labels(train_features, train_times, train_events)?;
    check_labels(val_features, val_times, val_events)?;
    if train_features.nrows() == 0 || val_features.nrows() == 0 {
        return Err(MlpError::EmptyBatch);
    }
    if !train_events.contains(&true) || !val_events.contains(&true) {
        return Err(MlpError::Loss(CoxError::NoEvents));
    }
    let needs_pairs = model.hidden.iter().any(|l| l.batchnorm.is_some());
    if let BatchMode::Minibatch { size } = tc.batch_mode {
        if needs_pairs && size < 2 {
            return Err(MlpError::BatchTooSmall { got: size });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut opt = AdamW::new(model.param_count(), tc.learning_rate, tc.weight_decay);
    let mut train_curve = Vec::with_capacity(tc.max_epochs);
    let mut val_curve = Vec::with_capacity(tc.max_epochs);
    let mut best: Option<Snapshot> = None;
    let mut anchor = f64::INFINITY;
    let mut wait = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=tc.max_epochs {
        let train_loss = match tc.batch_mode {
            BatchMode::FullBatch => {
                let loss = train_step(
                    &mut model,
                    &mut opt,
                    train_features,
                    train_times,
                    train_events,
                    &mut rng,
                )?;
                check_finite(loss, epoch)?;
                loss
            }
            BatchMode::Minibatch { size } => {
                let batches = plan_minibatches(
                    train_features.nrows(),
                    size,
                    needs_pairs,
                    train_events,
                    &mut rng,
                )?;
                let mut total = 0.0;
                for batch in &batches {
                    let (bx, bt, be) = gather(train_features, train_times, train_events, batch);
                    let loss = train_step(&mut model, &mut opt, &bx, &bt, &be, &mut rng)?;
                    check_finite(loss, epoch)?;
                    total += loss;
                }
                total / batches.len() as f64
            }
        };

        let val_scores = model.predict_risk(val_features)?;
        let val_loss = cox_npll(&val_scores, val_times, val_events)?;
        check_finite(val_loss, epoch)?;
        train_curve.push(train_loss);
        val_curve.push(val_loss);

        if best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            best = Some(Snapshot {
                val_loss,
                epoch,
                hidden: model.hidden.clone(),
                output: model.output.clone(),
            });
        }
        if anchor - val_loss > tc.min_delta {
            anchor = val_loss;
            wait = 0;
        } else {
            wait += 1;
            if wait >= tc.patience {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }

    let best = best.expect("max_epochs is at least 1, so one epoch was recorded");
    model.hidden = best.hidden;
    model.output = best.output;
    model.set_mode(Mode::Eval);
    model.record_train_seed(tc.seed);
    let history = TrainHistory {
        train_loss: train_curve,
        val_loss: val_curve,
        best_epoch: best.epoch,
        stop_reason,
        threads: parallel::thread_count(),
    };
    Ok((model, history))
}
