//! Cox partial-likelihood machinery: the negative partial log-likelihood
//! (NPLL) loss for arbitrary risk scores, its analytic gradient, and a
//! linear proportional-hazards baseline fitted by Newton-Raphson.
//!
//! Ties are handled with the Breslow approximation: tied event times share
//! one risk set, so each tied event contributes the same log-sum-exp term.
//! The loss is normalized by the number of events, which keeps early
//! stopping deltas comparable across batch sizes. Risk sets use
//! `t_j >= t_i`, so subjects censored exactly at an event time are still
//! at risk there.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureTable;
use crate::linalg::{self, Cholesky};

/// Per-sample scalar risk scores, aligned to sample order.
pub type RiskScores = Vec<f64>;

#[derive(Debug, Error)]
pub enum CoxError {
    #[error("length mismatch: {scores} scores, {times} times, {events} event flags")]
    LengthMismatch {
        scores: usize,
        times: usize,
        events: usize,
    },
    #[error("no events in the data; the partial likelihood is undefined")]
    NoEvents,
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("feature row count {rows} does not match {labels} survival labels")]
    RowMismatch { rows: usize, labels: usize },
    #[error(
        "singular information matrix at iteration {iteration} (condition estimate {condition:.3e})"
    )]
    SingularHessian { iteration: usize, condition: f64 },
    #[error("did not converge after {iterations} iterations (gradient max-norm {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error(
        "monotone likelihood detected (coefficient variance estimate {variance:.3e}); \
         the data are perfectly separated and no finite maximizer exists"
    )]
    MonotoneLikelihood { variance: f64 },
    #[error("model expects column `{expected}`, features provide `{found}`")]
    ColumnMismatch { expected: String, found: String },
}

/// Fitted linear Cox model: one coefficient per feature column plus the
/// Newton convergence report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCoxModel {
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn validate(scores: &[f64], times: &[f64], events: &[bool]) -> Result<(), CoxError> {
    if scores.len() != times.len() || times.len() != events.len() {
        return Err(CoxError::LengthMismatch {
            scores: scores.len(),
            times: times.len(),
            events: events.len(),
        });
    }
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(CoxError::NonFinite {
                what: "score",
                index: i,
            });
        }
    }
    for (i, t) in times.iter().enumerate() {
        if !t.is_finite() {
            return Err(CoxError::NonFinite {
                what: "time",
                index: i,
            });
        }
    }
    if !events.iter().any(|e| *e) {
        return Err(CoxError::NoEvents);
    }
    Ok(())
}

/// Sample indices grouped by distinct time, descending, so a forward walk
/// accumulates suffix (at-risk) sums.
fn descending_time_groups(times: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| {
        times[b]
            .partial_cmp(&times[a])
            .expect("times are finite")
            .then(a.cmp(&b))
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for idx in order {
        match groups.last_mut() {
            Some(g) if times[g[0]] == times[idx] => g.push(idx),
            _ => groups.push(vec![idx]),
        }
    }
    groups
}

/// Streaming max-shifted log-sum-exp accumulator.
#[derive(Clone, Copy)]
struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn add(&mut self, value: f64) {
        self.add_weighted(value, 1.0);
    }

    fn add_weighted(&mut self, value: f64, count: f64) {
        if self.sum == 0.0 {
            self.max = value;
            self.sum = count;
        } else if value <= self.max {
            self.sum += count * (value - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - value).exp() + count;
            self.max = value;
        }
    }

    fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Negative partial log-likelihood, Breslow ties, normalized by event
/// count:
///
/// `-(1/D) * sum over events i of [ r_i - log(sum over t_j >= t_i of exp(r_j)) ]`
pub fn cox_npll(scores: &[f64], times: &[f64], events: &[bool]) -> Result<f64, CoxError> {
    validate(scores, times, events)?;
    let groups = descending_time_groups(times);
    let mut lse = LogSumExp::new();
    let mut loss = 0.0;
    let mut n_events = 0usize;
    for group in &groups {
        for &j in group {
            lse.add(scores[j]);
        }
        let group_lse = lse.value();
        for &j in group {
            if events[j] {
                loss += group_lse - scores[j];
                n_events += 1;
            }
        }
    }
    Ok(loss / n_events as f64)
}

/// Analytic gradient of [`cox_npll`] with respect to each score:
///
/// `g_k = (1/D) * [ sum over events i with t_i <= t_k of exp(r_k - lse_i) - 1{k is an event} ]`
///
/// Computed in two passes: a descending-time pass records each risk set's
/// log-sum-exp, and an ascending-time pass accumulates the per-sample
/// softmax weights, again with max shifting.
pub fn cox_npll_gradient(
    scores: &[f64],
    times: &[f64],
    events: &[bool],
) -> Result<Vec<f64>, CoxError> {
    validate(scores, times, events)?;
    let groups = descending_time_groups(times);

    let mut lse = LogSumExp::new();
    let mut group_lse = Vec::with_capacity(groups.len());
    let mut group_events = Vec::with_capacity(groups.len());
    for group in &groups {
        for &j in group {
            lse.add(scores[j]);
        }
        group_lse.push(lse.value());
        group_events.push(group.iter().filter(|&&j| events[j]).count());
    }
    let n_events: usize = group_events.iter().sum();
    let d = n_events as f64;

    let mut grad = vec![0.0; scores.len()];
    let mut weight_acc = LogSumExp::new();
    for (g, group) in groups.iter().enumerate().rev() {
        if group_events[g] > 0 {
            weight_acc.add_weighted(-group_lse[g], group_events[g] as f64);
        }
        let log_weight = weight_acc.value();
        for &j in group {
            let softmax_sum = if log_weight == f64::NEG_INFINITY {
                0.0
            } else {
                (scores[j] + log_weight).exp()
            };
            let indicator = if events[j] { 1.0 } else { 0.0 };
            grad[j] = (softmax_sum - indicator) / d;
        }
    }
    Ok(grad)
}

struct NewtonState {
    loglik: f64,
    grad: Vec<f64>,
    info: Array2<f64>,
}

/// Un-normalized Breslow log partial likelihood of `X beta`.
fn linear_loglik(eta: &[f64], times: &[f64], events: &[bool]) -> f64 {
    let groups = descending_time_groups(times);
    let gamma = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    let mut loglik = 0.0;
    for group in &groups {
        for &j in group {
            s += (eta[j] - gamma).exp();
        }
        for &j in group {
            if events[j] {
                loglik += eta[j] - (gamma + s.ln());
            }
        }
    }
    loglik
}

/// Log partial likelihood with gradient and observed information,
/// accumulated in one descending-time sweep with suffix sums of
/// `w`, `w x`, and `w x xT`.
fn newton_state(x: &Array2<f64>, eta: &[f64], times: &[f64], events: &[bool]) -> NewtonState {
    let p = x.ncols();
    let groups = descending_time_groups(times);
    let gamma = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mut s = 0.0;
    let mut u = Array1::<f64>::zeros(p);
    let mut m = Array2::<f64>::zeros((p, p));
    let mut loglik = 0.0;
    let mut grad = Array1::<f64>::zeros(p);
    let mut info = Array2::<f64>::zeros((p, p));

    for group in &groups {
        for &j in group {
            let w = (eta[j] - gamma).exp();
            let xj = x.row(j);
            s += w;
            for a in 0..p {
                let wxa = w * xj[a];
                u[a] += wxa;
                for b in 0..p {
                    m[(a, b)] += wxa * xj[b];
                }
            }
        }
        let mut d_g = 0.0;
        for &j in group {
            if events[j] {
                d_g += 1.0;
                loglik += eta[j] - (gamma + s.ln());
                for a in 0..p {
                    grad[a] += x[(j, a)];
                }
            }
        }
        if d_g > 0.0 {
            for a in 0..p {
                let xbar_a = u[a] / s;
                grad[a] -= d_g * xbar_a;
                for b in 0..p {
                    info[(a, b)] += d_g * (m[(a, b)] / s - xbar_a * u[b] / s);
                }
            }
        }
    }
    NewtonState {
        loglik,
        grad: grad.to_vec(),
        info,
    }
}

/// Record of one Newton fit: the model plus the per-iteration log partial
/// likelihood path (non-decreasing, enforced by step-halving).
pub struct TracedFit {
    pub model: LinearCoxModel,
    pub loglik_path: Vec<f64>,
}

/// Fit a linear Cox model by Newton-Raphson on the Breslow partial
/// likelihood. Converges when the gradient max-norm drops below `tol`;
/// steps that would lower the likelihood are halved. Perfect separation
/// (monotone likelihood) and singular information matrices are reported
/// as errors rather than returned as garbage coefficients.
pub fn fit_linear_coxph(
    features: &FeatureTable,
    times: &[f64],
    events: &[bool],
    tol: f64,
    max_iter: usize,
) -> Result<LinearCoxModel, CoxError> {
    fit_linear_coxph_traced(features, times, events, tol, max_iter).map(|t| t.model)
}

/// [`fit_linear_coxph`] variant that also returns the likelihood path.
pub fn fit_linear_coxph_traced(
    features: &FeatureTable,
    times: &[f64],
    events: &[bool],
    tol: f64,
    max_iter: usize,
) -> Result<TracedFit, CoxError> {
    let x = features.values();
    let n = x.nrows();
    if n != times.len() || n != events.len() {
        return Err(CoxError::RowMismatch {
            rows: n,
            labels: times.len().min(events.len()),
        });
    }
    let zeros = vec![0.0; n];
    validate(&zeros, times, events)?;

    let p = x.ncols();
    let mut beta = Array1::<f64>::zeros(p);
    let mut loglik_path: Vec<f64> = Vec::new();

    let eta_of = |beta: &Array1<f64>| -> Vec<f64> {
        let b = beta.view().insert_axis(ndarray::Axis(1));
        linalg::matmul(x.view(), b).column(0).to_vec()
    };

    let mut grad_norm = f64::INFINITY;
    for iteration in 1..=max_iter {
        let eta = eta_of(&beta);
        let state = newton_state(x, &eta, times, events);
        if let Some(&prev) = loglik_path.last() {
            assert!(
                state.loglik >= prev - 1e-8 * (1.0 + prev.abs()),
                "likelihood decreased from {prev} to {} despite step-halving",
                state.loglik
            );
        }
        loglik_path.push(state.loglik);

        grad_norm = state.grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        if grad_norm < tol {
            let factor =
                Cholesky::factor(&state.info).map_err(|condition| CoxError::SingularHessian {
                    iteration,
                    condition,
                })?;
            let max_variance = factor.inverse_diagonal().into_iter().fold(0.0f64, f64::max);
            if max_variance > 1e8 {
                return Err(CoxError::MonotoneLikelihood {
                    variance: max_variance,
                });
            }
            return Ok(TracedFit {
                model: LinearCoxModel {
                    columns: features.qualified_names(),
                    beta: beta.to_vec(),
                    iterations: iteration,
                    grad_norm,
                },
                loglik_path,
            });
        }
        if beta.iter().any(|b| b.abs() > 50.0) {
            return Err(CoxError::MonotoneLikelihood {
                variance: f64::INFINITY,
            });
        }

        let factor =
            Cholesky::factor(&state.info).map_err(|condition| CoxError::SingularHessian {
                iteration,
                condition,
            })?;
        let delta = factor.solve(&state.grad);

        let mut step = 1.0;
        loop {
            let mut candidate = beta.clone();
            for (c, d) in candidate.iter_mut().zip(&delta) {
                *c += step * d;
            }
            let cand_loglik = linear_loglik(&eta_of(&candidate), times, events);
            if cand_loglik >= state.loglik - 1e-12 * (1.0 + state.loglik.abs()) {
                beta = candidate;
                break;
            }
            step *= 0.5;
            if step < 1e-10 {
                return Err(CoxError::NonConvergence {
                    iterations: iteration,
                    grad_norm,
                });
            }
        }
    }
    Err(CoxError::NonConvergence {
        iterations: max_iter,
        grad_norm,
    })
}

/// Risk scores `r = X beta` for a fitted linear model. The feature columns
/// must match the training columns exactly, order included.
pub fn predict_linear_risk(
    model: &LinearCoxModel,
    features: &FeatureTable,
) -> Result<RiskScores, CoxError> {
    let names = features.qualified_names();
    if names.len() != model.columns.len() {
        return Err(CoxError::ColumnMismatch {
            expected: format!("{} columns", model.columns.len()),
            found: format!("{} columns", names.len()),
        });
    }
    for (expected, found) in model.columns.iter().zip(&names) {
        if expected != found {
            return Err(CoxError::ColumnMismatch {
                expected: expected.clone(),
                found: found.clone(),
            });
        }
    }
    let beta = Array1::from_vec(model.beta.clone());
    let b = beta.view().insert_axis(ndarray::Axis(1));
    Ok(linalg::matmul(features.values().view(), b)
        .column(0)
        .to_vec())
}
