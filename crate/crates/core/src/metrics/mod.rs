//! Evaluation protocol: Harrell's concordance index with bootstrap
//! confidence intervals, Kaplan-Meier curves, threshold-zero risk
//! stratification, and the two-group log-rank test.

mod bootstrap;
mod concordance;
mod km;
mod logrank;

pub use bootstrap::{bootstrap_ci, bootstrap_ci_seq, concordance_with_ci, BootstrapMode};
pub use concordance::{concordance_index, concordance_index_brute};
pub use km::kaplan_meier;
pub use logrank::log_rank_test;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {times} times, {events} event flags, {scores} scores")]
    LengthMismatch {
        times: usize,
        events: usize,
        scores: usize,
    },
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("no comparable pairs; the concordance index is undefined")]
    NoComparablePairs,
    #[error("empty input")]
    Empty,
    #[error("bootstrap needs at least 100 replicates, got {0}")]
    BadBootstrapCount(usize),
    #[error("confidence level must lie in (0,1), got {0}")]
    BadLevel(f64),
    #[error("replicate {replicate} produced no comparable pairs after {attempts} redraws")]
    DegenerateResamples { replicate: usize, attempts: usize },
    #[error("the {0} risk group is empty; the log-rank test needs both groups")]
    EmptyGroup(&'static str),
    #[error("no events in either group; the log-rank test is undefined")]
    NoEvents,
    #[error("nothing to export")]
    NoCurves,
    #[error("subject ids required for subject-level resampling do not match sample count")]
    SubjectIdMismatch,
    #[error("write failed")]
    Io(#[from] std::io::Error),
    #[error("CSV failure")]
    Csv(#[from] csv::Error),
}

/// Confidence interval attached to a C-index estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiInfo {
    pub lower: f64,
    pub upper: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
}

/// Harrell's C-index with its pair counts and an optional bootstrap CI.
///
/// `value = (concordant + 0.5 * tied) / pairs`, all counts integer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CIndexResult {
    pub value: f64,
    pub concordant: u64,
    pub discordant: u64,
    pub tied: u64,
    pub pairs: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci: Option<CiInfo>,
}

impl CIndexResult {
    /// Table-row formatting, `0.6750 (0.6429, 0.7121)`; without a CI just
    /// the value.
    pub fn formatted(&self) -> String {
        match &self.ci {
            Some(ci) => format!("{:.4} ({:.4}, {:.4})", self.value, ci.lower, ci.upper),
            None => format!("{:.4}", self.value),
        }
    }
}

/// Product-limit survival curve over the distinct event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// `S(t_k)`, the survival probability just after `t_k`.
    pub survival: Vec<f64>,
    /// Subjects at risk at `t_k` (censorings at `t_k` still count).
    pub n_at_risk: Vec<u64>,
    /// Events at `t_k`.
    pub n_events: Vec<u64>,
    /// Total subjects the curve was estimated from.
    pub n_total: u64,
}

impl KmCurve {
    /// Survival probability at time `t` (1 before the first event).
    pub fn survival_at(&self, t: f64) -> f64 {
        let mut s = 1.0;
        for (tk, sk) in self.times.iter().zip(&self.survival) {
            if *tk <= t {
                s = *sk;
            } else {
                break;
            }
        }
        s
    }
}

/// Two-group log-rank test result, chi-square with one degree of freedom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl LogRankResult {
    /// P-value for display; values below 1e-16 print as `<1e-16` since the
    /// chi-square tail is not meaningful past double precision.
    pub fn formatted_p(&self) -> String {
        if self.p_value < 1e-16 {
            "<1e-16".to_string()
        } else {
            format!("{:.4e}", self.p_value)
        }
    }
}

/// Risk-group label per sample, split at score zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskGroup {
    High,
    Low,
}

/// Sample-aligned stratification labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratifiedGroups {
    pub labels: Vec<RiskGroup>,
}

impl StratifiedGroups {
    pub fn high_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, g)| **g == RiskGroup::High)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn low_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, g)| **g == RiskGroup::Low)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Label scores: strictly positive is high risk, zero or negative is low.
pub fn stratify(scores: &[f64]) -> Result<StratifiedGroups, MetricError> {
    let mut labels = Vec::with_capacity(scores.len());
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(MetricError::NonFinite {
                what: "score",
                index: i,
            });
        }
        labels.push(if *s > 0.0 {
            RiskGroup::High
        } else {
            RiskGroup::Low
        });
    }
    Ok(StratifiedGroups { labels })
}

/// Write curves as long-format CSV `label,time,survival,n_at_risk,n_events`.
///
/// Each curve starts with a baseline row at time 0 and survival 1 so the
/// export plots correctly even for curves with no events. The write is
/// atomic (temp file + rename) and byte-stable across re-exports.
pub fn km_export(
    curves: &[(String, KmCurve)],
    path: impl AsRef<std::path::Path>,
) -> Result<(), MetricError> {
    if curves.is_empty() {
        return Err(MetricError::NoCurves);
    }
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new()?,
    };
    {
        let mut w = csv::Writer::from_writer(&tmp);
        w.write_record(["label", "time", "survival", "n_at_risk", "n_events"])?;
        for (label, curve) in curves {
            w.write_record([label.as_str(), "0", "1", &curve.n_total.to_string(), "0"])?;
            for k in 0..curve.times.len() {
                w.write_record([
                    label.as_str(),
                    &curve.times[k].to_string(),
                    &curve.survival[k].to_string(),
                    &curve.n_at_risk[k].to_string(),
                    &curve.n_events[k].to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| MetricError::Io(e.error))?;
    Ok(())
}

pub(crate) fn validate_inputs(
    times: &[f64],
    events: &[bool],
    scores: &[f64],
) -> Result<(), MetricError> {
    if times.len() != events.len() || events.len() != scores.len() {
        return Err(MetricError::LengthMismatch {
            times: times.len(),
            events: events.len(),
            scores: scores.len(),
        });
    }
    if times.is_empty() {
        return Err(MetricError::Empty);
    }
    for (i, t) in times.iter().enumerate() {
        if !t.is_finite() {
            return Err(MetricError::NonFinite {
                what: "time",
                index: i,
            });
        }
    }
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(MetricError::NonFinite {
                what: "score",
                index: i,
            });
        }
    }
    Ok(())
}
