//! Harrell's concordance index.
//!
//! A pair (i, j) is comparable when the earlier subject had an event
//! (`t_i < t_j` and `e_i`), or at tied times when exactly one of the two is
//! an event; tied-time double events are excluded. The comparable subject
//! with the shorter time should carry the higher risk score; tied scores
//! count half.
//!
//! The production path runs in O(n log n): samples are processed by
//! descending time with a Fenwick tree over compressed score ranks, so the
//! tree always holds exactly the longer-lived comparators. The O(n²)
//! enumeration is kept as [`concordance_index_brute`], the oracle the fast
//! path is tested against.

use super::{validate_inputs, CIndexResult, MetricError};

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks in `0..=i`.
    fn prefix(&self, i: usize) -> u64 {
        let mut i = i + 1;
        let mut sum = 0;
        while i > 0 {
            sum += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        sum
    }
}

fn score_ranks(scores: &[f64]) -> Vec<usize> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    sorted.dedup();
    scores
        .iter()
        .map(|s| sorted.partition_point(|x| x < s))
        .collect()
}

fn counts_to_result(
    concordant: u64,
    discordant: u64,
    tied: u64,
) -> Result<CIndexResult, MetricError> {
    let pairs = concordant + discordant + tied;
    if pairs == 0 {
        return Err(MetricError::NoComparablePairs);
    }
    Ok(CIndexResult {
        value: (concordant as f64 + 0.5 * tied as f64) / pairs as f64,
        concordant,
        discordant,
        tied,
        pairs,
        ci: None,
    })
}

/// Harrell's C-index in O(n log n).
pub fn concordance_index(
    times: &[f64],
    events: &[bool],
    scores: &[f64],
) -> Result<CIndexResult, MetricError> {
    validate_inputs(times, events, scores)?;
    let n = times.len();
    let ranks = score_ranks(scores);
    let n_ranks = ranks.iter().max().map_or(0, |m| m + 1);

    // descending time, grouped by exact tie
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        times[b]
            .partial_cmp(&times[a])
            .expect("times are finite")
            .then(a.cmp(&b))
    });

    let mut tree = Fenwick::new(n_ranks);
    let mut inserted: u64 = 0;
    let mut concordant = 0u64;
    let mut discordant = 0u64;
    let mut tied = 0u64;

    let mut g = 0;
    while g < n {
        let mut h = g;
        while h < n && times[order[h]] == times[order[g]] {
            h += 1;
        }
        let group = &order[g..h];

        // events in this group against every longer-lived sample
        for &i in group {
            if !events[i] {
                continue;
            }
            let below = if ranks[i] == 0 {
                0
            } else {
                tree.prefix(ranks[i] - 1)
            };
            let at_or_below = tree.prefix(ranks[i]);
            let equal = at_or_below - below;
            concordant += below;
            tied += equal;
            discordant += inserted - at_or_below;
        }

        // events against censored samples tied at the same time
        let mut censored_ranks: Vec<usize> = group
            .iter()
            .filter(|&&j| !events[j])
            .map(|&j| ranks[j])
            .collect();
        censored_ranks.sort_unstable();
        if !censored_ranks.is_empty() {
            for &i in group {
                if !events[i] {
                    continue;
                }
                let below = censored_ranks.partition_point(|&r| r < ranks[i]) as u64;
                let at_or_below = censored_ranks.partition_point(|&r| r <= ranks[i]) as u64;
                concordant += below;
                tied += at_or_below - below;
                discordant += censored_ranks.len() as u64 - at_or_below;
            }
        }

        for &j in group {
            tree.add(ranks[j]);
            inserted += 1;
        }
        g = h;
    }
    counts_to_result(concordant, discordant, tied)
}

/// O(n²) pair enumeration; the oracle [`concordance_index`] must match
/// exactly.
pub fn concordance_index_brute(
    times: &[f64],
    events: &[bool],
    scores: &[f64],
) -> Result<CIndexResult, MetricError> {
    validate_inputs(times, events, scores)?;
    let n = times.len();
    let mut concordant = 0u64;
    let mut discordant = 0u64;
    let mut tied = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            // orient the pair so `a` is the one whose event makes it comparable
            let (a, b) = if times[i] < times[j] {
                if !events[i] {
                    continue;
                }
                (i, j)
            } else if times[j] < times[i] {
                if !events[j] {
                    continue;
                }
                (j, i)
            } else {
                match (events[i], events[j]) {
                    (true, false) => (i, j),
                    (false, true) => (j, i),
                    _ => continue,
                }
            };
            if scores[a] > scores[b] {
                concordant += 1;
            } else if scores[a] < scores[b] {
                discordant += 1;
            } else {
                tied += 1;
            }
        }
    }
    counts_to_result(concordant, discordant, tied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_instance(n: usize, seed: u64, censor_frac: f64) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // coarse times and scores so ties of both kinds occur
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..=20) as f64).collect();
        let events: Vec<bool> = (0..n)
            .map(|_| rng.random_range(0.0..1.0) >= censor_frac)
            .collect();
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.sample(StandardNormal);
                (s * 4.0).round() / 4.0
            })
            .collect();
        (times, events, scores)
    }

    #[test]
    fn perfect_anti_alignment_scores_one() {
        let times = vec![3.0, 1.0, 4.0, 2.0];
        let events = vec![true; 4];
        let scores: Vec<f64> = times.iter().map(|t| -t).collect();
        let r = concordance_index(&times, &events, &scores).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.pairs, 6);
        assert_eq!(r.discordant, 0);
    }

    #[test]
    fn all_tied_scores_give_half() {
        let times = vec![1.0, 2.0, 3.0];
        let events = vec![true; 3];
        let scores = vec![0.7; 3];
        let r = concordance_index(&times, &events, &scores).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(r.tied, 3);
    }

    #[test]
    fn tied_time_double_events_excluded() {
        let times = vec![1.0, 1.0];
        let events = vec![true, true];
        let scores = vec![0.2, 0.9];
        assert!(matches!(
            concordance_index(&times, &events, &scores),
            Err(MetricError::NoComparablePairs)
        ));
    }

    #[test]
    fn tied_time_event_vs_censored_is_comparable() {
        let times = vec![2.0, 2.0];
        let events = vec![true, false];
        let scores = vec![1.0, 0.0];
        let r = concordance_index(&times, &events, &scores).unwrap();
        assert_eq!(r.pairs, 1);
        assert_eq!(r.concordant, 1);
        assert_eq!(r.value, 1.0);
    }

    #[test]
    fn censored_before_event_is_not_comparable() {
        let times = vec![1.0, 2.0];
        let events = vec![false, true];
        let scores = vec![1.0, 0.0];
        assert!(matches!(
            concordance_index(&times, &events, &scores),
            Err(MetricError::NoComparablePairs)
        ));
    }

    #[test]
    fn matches_brute_force_exactly() {
        for seed in 0..25 {
            let n = 50 + (seed as usize % 5) * 50;
            let (times, events, scores) = random_instance(n, seed, 0.4);
            let fast = concordance_index(&times, &events, &scores);
            let brute = concordance_index_brute(&times, &events, &scores);
            match (fast, brute) {
                (Ok(f), Ok(b)) => {
                    assert_eq!(f.concordant, b.concordant, "seed {seed}");
                    assert_eq!(f.discordant, b.discordant, "seed {seed}");
                    assert_eq!(f.tied, b.tied, "seed {seed}");
                    assert_eq!(f.pairs, b.pairs, "seed {seed}");
                    assert_eq!(f.value, b.value, "seed {seed}");
                }
                (Err(MetricError::NoComparablePairs), Err(MetricError::NoComparablePairs)) => {}
                (f, b) => panic!("seed {seed}: fast {f:?} vs brute {b:?}"),
            }
        }
    }

    #[test]
    fn antisymmetry_under_score_negation() {
        let (times, events, scores) = random_instance(120, 77, 0.3);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = concordance_index(&times, &events, &scores).unwrap();
        let b = concordance_index(&times, &events, &flipped).unwrap();
        assert_eq!(a.concordant, b.discordant);
        assert_eq!(a.discordant, b.concordant);
        assert_eq!(a.tied, b.tied);
        assert_eq!(a.pairs, b.pairs);
    }

    #[test]
    fn monotone_transform_leaves_counts_unchanged() {
        let (times, events, scores) = random_instance(90, 13, 0.35);
        let transformed: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() + 3.0).collect();
        let a = concordance_index(&times, &events, &scores).unwrap();
        let b = concordance_index(&times, &events, &transformed).unwrap();
        assert_eq!(a.concordant, b.concordant);
        assert_eq!(a.discordant, b.discordant);
        assert_eq!(a.tied, b.tied);
        assert_eq!(a.pairs, b.pairs);
    }

    #[test]
    fn input_validation() {
        assert!(matches!(
            concordance_index(&[1.0], &[true, false], &[0.0]),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert!(matches!(
            concordance_index(&[], &[], &[]),
            Err(MetricError::Empty)
        ));
        assert!(matches!(
            concordance_index(&[1.0, 2.0], &[true, true], &[f64::INFINITY, 0.0]),
            Err(MetricError::NonFinite { .. })
        ));
    }
}
