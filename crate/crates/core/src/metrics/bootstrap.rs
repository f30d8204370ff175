//! Percentile bootstrap confidence intervals for the C-index.
//!
//! Replicates resample either scans (the default, matching pooled
//! scan-level evaluation) or whole subjects. Replicate r draws from its own
//! generator seeded `seed + r`, so the interval is bitwise identical
//! whatever the thread count, and redraws on degenerate resamples stay
//! inside that replicate's stream.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::concordance::concordance_index;
use super::{CIndexResult, CiInfo, MetricError};
use crate::parallel;

const REDRAW_ATTEMPTS: usize = 100;

/// What a bootstrap replicate resamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapMode<'a> {
    /// Resample individual samples (scans) with replacement.
    Samples,
    /// Resample subjects with replacement, keeping each drawn subject's
    /// samples together. The slice maps each sample to its subject.
    Subjects(&'a [String]),
}

struct SubjectIndex {
    /// Sample indices per subject, subjects in first-appearance order.
    groups: Vec<Vec<usize>>,
}

fn subject_index(subject_ids: &[String]) -> SubjectIndex {
    let mut seen: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, s) in subject_ids.iter().enumerate() {
        match seen.get(s.as_str()) {
            Some(&g) => groups[g].push(i),
            None => {
                seen.insert(s, groups.len());
                groups.push(vec![i]);
            }
        }
    }
    SubjectIndex { groups }
}

fn replicate_value(
    r: usize,
    seed: u64,
    times: &[f64],
    events: &[bool],
    scores: &[f64],
    subjects: Option<&SubjectIndex>,
) -> Result<f64, MetricError> {
    let n = times.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
    for _ in 0..REDRAW_ATTEMPTS {
        let mut idx = Vec::with_capacity(n);
        match subjects {
            None => {
                for _ in 0..n {
                    idx.push(rng.random_range(0..n));
                }
            }
            Some(si) => {
                let s = si.groups.len();
                for _ in 0..s {
                    let g = rng.random_range(0..s);
                    idx.extend_from_slice(&si.groups[g]);
                }
            }
        }
        let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
        let e: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        match concordance_index(&t, &e, &s) {
            Ok(res) => return Ok(res.value),
            Err(MetricError::NoComparablePairs) => continue,
            Err(other) => return Err(other),
        }
    }
    Err(MetricError::DegenerateResamples {
        replicate: r,
        attempts: REDRAW_ATTEMPTS,
    })
}

/// Linear-interpolation percentile of pre-sorted values (the common
/// "type 7" definition).
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[allow(clippy::too_many_arguments)]
fn bootstrap_impl(
    times: &[f64],
    events: &[bool],
    scores: &[f64],
    b: usize,
    seed: u64,
    level: f64,
    mode: BootstrapMode,
    parallel_run: bool,
) -> Result<(f64, f64), MetricError> {
    super::validate_inputs(times, events, scores)?;
    if b < 100 {
        return Err(MetricError::BadBootstrapCount(b));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricError::BadLevel(level));
    }
    let subjects = match mode {
        BootstrapMode::Samples => None,
        BootstrapMode::Subjects(ids) => {
            if ids.len() != times.len() {
                return Err(MetricError::SubjectIdMismatch);
            }
            Some(subject_index(ids))
        }
    };
    let run = |r: usize| replicate_value(r, seed, times, events, scores, subjects.as_ref());
    let raw = if parallel_run {
        parallel::map_indexed(b, run)
    } else {
        parallel::map_indexed_seq(b, run)
    };
    let mut values = Vec::with_capacity(b);
    for v in raw {
        values.push(v?);
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("C-index values are finite"));
    let alpha = (1.0 - level) / 2.0;
    Ok((
        percentile_sorted(&values, alpha),
        percentile_sorted(&values, 1.0 - alpha),
    ))
}

/// Percentile bootstrap interval for the C-index; `B` replicates at the
/// given confidence level, deterministic for a fixed seed.
pub fn bootstrap_ci(
    times: &[f64],
    events: &[bool],
    scores: &[f64],
    b: usize,
    seed: u64,
    level: f64,
    mode: BootstrapMode,
) -> Result<(f64, f64), MetricError> {
    bootstrap_impl(times, events, scores, b, seed, level, mode, true)
}

/// Sequential variant of [`bootstrap_ci`]; identical output bit for bit.
/// Kept public as the benchmark baseline.
pub fn bootstrap_ci_seq(
    times: &[f64],
    events: &[bool],
    scores: &[f64],
    b: usize,
    seed: u64,
    level: f64,
    mode: BootstrapMode,
) -> Result<(f64, f64), MetricError> {
    bootstrap_impl(times, events, scores, b, seed, level, mode, false)
}

/// Full-data C-index with an attached bootstrap CI.
pub fn concordance_with_ci(
    times: &[f64],
    events: &[bool],
    scores: &[f64],
    b: usize,
    seed: u64,
    level: f64,
    mode: BootstrapMode,
) -> Result<CIndexResult, MetricError> {
    let mut result = concordance_index(times, events, scores)?;
    let (lower, upper) = bootstrap_ci(times, events, scores, b, seed, level, mode)?;
    result.ci = Some(CiInfo {
        lower,
        upper,
        b,
        seed,
    });
    Ok(result)
}
