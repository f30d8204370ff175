//! Two-group log-rank test with the hypergeometric variance at each
//! distinct event time; p-value from the chi-square(1) upper tail via the
//! regularized incomplete gamma function.

use statrs::function::gamma::gamma_ur;

use super::{LogRankResult, MetricError, RiskGroup, StratifiedGroups};

/// Log-rank test between the high and low risk groups.
pub fn log_rank_test(
    groups: &StratifiedGroups,
    times: &[f64],
    events: &[bool],
) -> Result<LogRankResult, MetricError> {
    let n = groups.labels.len();
    if n != times.len() || n != events.len() {
        return Err(MetricError::LengthMismatch {
            times: times.len(),
            events: events.len(),
            scores: n,
        });
    }
    let n_high = groups
        .labels
        .iter()
        .filter(|g| **g == RiskGroup::High)
        .count();
    if n_high == 0 {
        return Err(MetricError::EmptyGroup("high"));
    }
    if n_high == n {
        return Err(MetricError::EmptyGroup("low"));
    }
    if !events.iter().any(|e| *e) {
        return Err(MetricError::NoEvents);
    }
    for (i, t) in times.iter().enumerate() {
        if !t.is_finite() {
            return Err(MetricError::NonFinite {
                what: "time",
                index: i,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).expect("finite times"));

    let mut at_risk = n as f64;
    let mut at_risk_high = n_high as f64;
    let mut observed_high = 0.0;
    let mut expected_high = 0.0;
    let mut variance = 0.0;

    let mut g = 0;
    while g < n {
        let t = times[order[g]];
        let mut h = g;
        let mut d = 0.0;
        let mut d_high = 0.0;
        let mut leaving = 0.0;
        let mut leaving_high = 0.0;
        while h < n && times[order[h]] == t {
            let i = order[h];
            let is_high = groups.labels[i] == RiskGroup::High;
            if events[i] {
                d += 1.0;
                if is_high {
                    d_high += 1.0;
                }
            }
            leaving += 1.0;
            if is_high {
                leaving_high += 1.0;
            }
            h += 1;
        }
        if d > 0.0 {
            observed_high += d_high;
            expected_high += d * at_risk_high / at_risk;
            if at_risk > 1.0 {
                let p = at_risk_high / at_risk;
                variance += d * p * (1.0 - p) * (at_risk - d) / (at_risk - 1.0);
            }
        }
        at_risk -= leaving;
        at_risk_high -= leaving_high;
        g = h;
    }

    let statistic = if variance > 0.0 {
        (observed_high - expected_high).powi(2) / variance
    } else {
        0.0
    };
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        gamma_ur(0.5, statistic / 2.0).max(f64::MIN_POSITIVE)
    };
    Ok(LogRankResult { statistic, p_value })
}
