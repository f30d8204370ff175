//! Kaplan-Meier product-limit estimator.
//!
//! At a tied timestamp events are processed before censorings, so a
//! subject censored at an event time still counts as at risk there.

use super::{KmCurve, MetricError};

/// Product-limit survival estimate over the distinct event times.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<KmCurve, MetricError> {
    if times.len() != events.len() {
        return Err(MetricError::LengthMismatch {
            times: times.len(),
            events: events.len(),
            scores: 0,
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

    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).expect("finite times"));

    let mut curve = KmCurve {
        times: Vec::new(),
        survival: Vec::new(),
        n_at_risk: Vec::new(),
        n_events: Vec::new(),
        n_total: times.len() as u64,
    };
    let mut at_risk = times.len() as u64;
    let mut survival = 1.0;
    let mut g = 0;
    while g < order.len() {
        let t = times[order[g]];
        let mut h = g;
        let mut d = 0u64;
        let mut c = 0u64;
        while h < order.len() && times[order[h]] == t {
            if events[order[h]] {
                d += 1;
            } else {
                c += 1;
            }
            h += 1;
        }
        if d > 0 {
            survival *= 1.0 - d as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(survival);
            curve.n_at_risk.push(at_risk);
            curve.n_events.push(d);
        }
        at_risk -= d + c;
        g = h;
    }
    Ok(curve)
}
