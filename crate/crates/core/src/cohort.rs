//! Scan-level survival observations: ingestion, horizon censoring, and
//! patient-level splitting.
//!
//! A [`SurvivalRecord`] is one CT scan with the months elapsed until
//! diagnosis (or censoring). Events are diagnoses observed within the
//! administrative horizon (60 months by default); later diagnoses are
//! censored at the horizon. Splits are assigned per subject so that no
//! patient contributes scans to more than one of train / validation / test.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default administrative censoring horizon in months.
pub const DEFAULT_HORIZON_MONTHS: f64 = 60.0;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("failed to read cohort file")]
    Io(#[from] std::io::Error),
    #[error("malformed CSV")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in cohort CSV header")]
    MissingColumn(String),
    #[error("unparseable {field} at row {row}: `{value}`")]
    Parse {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("non-positive time at row {row}")]
    NonPositiveTime { row: usize },
    #[error("duplicate sample_id `{sample_id}` at row {row}")]
    DuplicateSample { row: usize, sample_id: String },
    #[error("unknown site `{value}` at row {row} (expected internal_a, internal_b, or external)")]
    UnknownSite { row: usize, value: String },
    #[error("cohort file has no data rows")]
    Empty,
    #[error("non-positive horizon: {0}")]
    NonPositiveHorizon(f64),
    #[error("split ratio must lie strictly in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("cannot split an empty cohort")]
    EmptySplit,
}

/// Acquisition site tag. `External` is held out as the test cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    InternalA,
    InternalB,
    External,
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Site::InternalA => "internal_a",
            Site::InternalB => "internal_b",
            Site::External => "external",
        };
        f.write_str(s)
    }
}

impl FromStr for Site {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "internal_a" => Ok(Site::InternalA),
            "internal_b" => Ok(Site::InternalB),
            "external" => Ok(Site::External),
            other => Err(format!("unknown site `{other}`")),
        }
    }
}

/// One scan-level observation.
///
/// `raw_time_months` is the pre-censoring time from scan to diagnosis (or
/// end of follow-up); `time_months` and `event` are the values after
/// horizon censoring and are what the loss and metrics consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub subject_id: String,
    pub sample_id: String,
    pub time_months: f64,
    pub event: bool,
    pub site: Site,
    pub raw_time_months: f64,
}

/// A validated set of survival records with a fixed censoring horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    records: Vec<SurvivalRecord>,
    horizon_months: f64,
}

impl Cohort {
    /// Build a cohort from records, checking sample uniqueness and time
    /// positivity.
    pub fn new(records: Vec<SurvivalRecord>, horizon_months: f64) -> Result<Self, CohortError> {
        if horizon_months <= 0.0 || !horizon_months.is_finite() {
            return Err(CohortError::NonPositiveHorizon(horizon_months));
        }
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if !r.raw_time_months.is_finite() || r.raw_time_months <= 0.0 {
                return Err(CohortError::NonPositiveTime { row });
            }
            if !r.time_months.is_finite() || r.time_months <= 0.0 {
                return Err(CohortError::NonPositiveTime { row });
            }
            if !seen.insert(r.sample_id.clone()) {
                return Err(CohortError::DuplicateSample {
                    row,
                    sample_id: r.sample_id.clone(),
                });
            }
        }
        Ok(Self {
            records,
            horizon_months,
        })
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn horizon_months(&self) -> f64 {
        self.horizon_months
    }

    /// Fraction of records with `event == false`.
    pub fn censorship_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let censored = self.records.iter().filter(|r| !r.event).count();
        censored as f64 / self.records.len() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time_months).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.sample_id.clone()).collect()
    }

    /// Keep only the records whose sample_id is in `keep`, preserving order.
    pub fn filter_samples(&self, keep: &HashSet<String>) -> Result<Cohort, CohortError> {
        let records: Vec<SurvivalRecord> = self
            .records
            .iter()
            .filter(|r| keep.contains(&r.sample_id))
            .cloned()
            .collect();
        Cohort::new(records, self.horizon_months)
    }

    /// Record indices whose subject is assigned to `split`.
    pub fn indices_for(&self, assignment: &SplitAssignment, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| assignment.split_of(&r.subject_id) == Some(split))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Partition label for one subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

/// Subject-level split assignment; every subject appears exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    by_subject: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, subject_id: &str) -> Option<Split> {
        self.by_subject.get(subject_id).copied()
    }

    pub fn subjects(&self, split: Split) -> Vec<&str> {
        self.by_subject
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Split)> {
        self.by_subject.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.by_subject.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_subject.is_empty()
    }
}

/// Load and validate a cohort CSV, then apply horizon censoring.
///
/// Expected header: `subject_id,sample_id,site,raw_time_months,event_observed`
/// with `event_observed` in {0, 1}. Row numbers in errors count data rows,
/// header excluded.
pub fn load_cohort(path: impl AsRef<Path>, horizon_months: f64) -> Result<Cohort, CohortError> {
    if horizon_months <= 0.0 || !horizon_months.is_finite() {
        return Err(CohortError::NonPositiveHorizon(horizon_months));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;

    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, CohortError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CohortError::MissingColumn(name.to_string()))
    };
    let c_subject = col("subject_id")?;
    let c_sample = col("sample_id")?;
    let c_site = col("site")?;
    let c_time = col("raw_time_months")?;
    let c_event = col("event_observed")?;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |idx: usize, name: &'static str| -> Result<&str, CohortError> {
            row.get(idx).ok_or(CohortError::Parse {
                row: row_no,
                field: name,
                value: String::new(),
            })
        };

        let subject_id = field(c_subject, "subject_id")?.to_string();
        let sample_id = field(c_sample, "sample_id")?.to_string();
        if !seen.insert(sample_id.clone()) {
            return Err(CohortError::DuplicateSample {
                row: row_no,
                sample_id,
            });
        }

        let site_str = field(c_site, "site")?;
        let site = Site::from_str(site_str).map_err(|_| CohortError::UnknownSite {
            row: row_no,
            value: site_str.to_string(),
        })?;

        let time_str = field(c_time, "raw_time_months")?;
        let raw_time: f64 = time_str.parse().map_err(|_| CohortError::Parse {
            row: row_no,
            field: "raw_time_months",
            value: time_str.to_string(),
        })?;
        if !raw_time.is_finite() || raw_time <= 0.0 {
            return Err(CohortError::NonPositiveTime { row: row_no });
        }

        let event_str = field(c_event, "event_observed")?;
        let event_observed = match event_str.trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(CohortError::Parse {
                    row: row_no,
                    field: "event_observed",
                    value: other.to_string(),
                })
            }
        };

        records.push(SurvivalRecord {
            subject_id,
            sample_id,
            time_months: raw_time,
            event: event_observed,
            site,
            raw_time_months: raw_time,
        });
    }

    if records.is_empty() {
        return Err(CohortError::Empty);
    }
    let cohort = Cohort::new(records, horizon_months)?;
    apply_horizon_censoring(&cohort, horizon_months)
}

/// Administratively censor at `horizon_months`.
///
/// Records with `raw_time_months > horizon` become `(horizon, event=false)`;
/// records at or under the horizon keep their raw time and current event
/// flag (a boundary time of exactly `horizon` counts as an event).
/// Idempotent at a fixed horizon.
pub fn apply_horizon_censoring(
    cohort: &Cohort,
    horizon_months: f64,
) -> Result<Cohort, CohortError> {
    if horizon_months <= 0.0 || !horizon_months.is_finite() {
        return Err(CohortError::NonPositiveHorizon(horizon_months));
    }
    let records = cohort
        .records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.raw_time_months > horizon_months {
                r.time_months = horizon_months;
                r.event = false;
            } else {
                r.time_months = r.raw_time_months;
            }
            r
        })
        .collect();
    Cohort::new(records, horizon_months)
}

/// Assign subjects to train / validation / test.
///
/// Every subject with at least one sample at `external_site` goes to test.
/// The remaining subjects are sorted, shuffled by a seeded RNG, and the
/// first `floor(ratio * n)` go to train, the rest to validation. The result
/// depends only on the subject set, ratio, seed, and external site.
pub fn split_by_subject(
    cohort: &Cohort,
    ratio: f64,
    seed: u64,
    external_site: Option<Site>,
) -> Result<SplitAssignment, CohortError> {
    if cohort.is_empty() {
        return Err(CohortError::EmptySplit);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CohortError::BadRatio(ratio));
    }

    let mut external_subjects: BTreeSet<&str> = BTreeSet::new();
    if let Some(ext) = external_site {
        for r in &cohort.records {
            if r.site == ext {
                external_subjects.insert(r.subject_id.as_str());
            }
        }
    }

    let internal_subjects: BTreeSet<&str> = cohort
        .records
        .iter()
        .map(|r| r.subject_id.as_str())
        .filter(|s| !external_subjects.contains(s))
        .collect();

    let mut shuffled: Vec<&str> = internal_subjects.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let n_train = ((ratio * shuffled.len() as f64).floor() as usize).min(shuffled.len());
    let mut by_subject = BTreeMap::new();
    for (i, s) in shuffled.iter().enumerate() {
        let split = if i < n_train {
            Split::Train
        } else {
            Split::Validation
        };
        by_subject.insert((*s).to_string(), split);
    }
    for s in external_subjects {
        by_subject.insert(s.to_string(), Split::Test);
    }

    Ok(SplitAssignment { by_subject })
}

/// Count subjects per split (train, validation, test).
pub fn split_counts(assignment: &SplitAssignment) -> (usize, usize, usize) {
    let mut counts = HashMap::new();
    for (_, s) in assignment.iter() {
        *counts.entry(s).or_insert(0usize) += 1;
    }
    (
        counts.get(&Split::Train).copied().unwrap_or(0),
        counts.get(&Split::Validation).copied().unwrap_or(0),
        counts.get(&Split::Test).copied().unwrap_or(0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn rec(subject: &str, sample: &str, raw: f64, event: bool, site: Site) -> SurvivalRecord {
        SurvivalRecord {
            subject_id: subject.to_string(),
            sample_id: sample.to_string(),
            time_months: raw,
            event,
            site,
            raw_time_months: raw,
        }
    }

    fn write_csv(rows: &[(&str, &str, &str, &str, &str)]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "subject_id,sample_id,site,raw_time_months,event_observed"
        )
        .unwrap();
        for (a, b, c, d, e) in rows {
            writeln!(f, "{a},{b},{c},{d},{e}").unwrap();
        }
        f
    }

    #[test]
    fn load_three_valid_rows() {
        let f = write_csv(&[
            ("p1", "s1", "internal_a", "12.5", "1"),
            ("p1", "s2", "internal_a", "30.0", "1"),
            ("p2", "s3", "external", "72.0", "1"),
        ]);
        let cohort = load_cohort(f.path(), 60.0).unwrap();
        assert_eq!(cohort.len(), 3);
        assert!(cohort.records()[0].event);
        // 72 months exceeds the horizon -> censored at 60
        assert!(!cohort.records()[2].event);
        assert_eq!(cohort.records()[2].time_months, 60.0);
        assert_eq!(cohort.records()[2].raw_time_months, 72.0);
    }

    #[test]
    fn non_positive_time_reports_row() {
        let f = write_csv(&[
            ("p1", "s1", "internal_a", "12.5", "1"),
            ("p2", "s2", "internal_a", "0", "1"),
        ]);
        let err = load_cohort(f.path(), 60.0).unwrap_err();
        match err {
            CohortError::NonPositiveTime { row } => assert_eq!(row, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn duplicate_sample_rejected() {
        let f = write_csv(&[
            ("p1", "s1", "internal_a", "12.5", "1"),
            ("p2", "s1", "internal_b", "20.0", "0"),
        ]);
        let err = load_cohort(f.path(), 60.0).unwrap_err();
        assert!(matches!(err, CohortError::DuplicateSample { row: 2, .. }));
    }

    #[test]
    fn missing_column_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "subject_id,sample_id,raw_time_months,event_observed").unwrap();
        writeln!(f, "p1,s1,10.0,1").unwrap();
        let err = load_cohort(f.path(), 60.0).unwrap_err();
        assert!(matches!(err, CohortError::MissingColumn(c) if c == "site"));
    }

    #[test]
    fn unparseable_number_reports_row() {
        let f = write_csv(&[("p1", "s1", "internal_a", "ten", "1")]);
        let err = load_cohort(f.path(), 60.0).unwrap_err();
        assert!(matches!(
            err,
            CohortError::Parse {
                row: 1,
                field: "raw_time_months",
                ..
            }
        ));
    }

    #[test]
    fn censoring_median_case_stays_event() {
        let c = Cohort::new(vec![rec("p", "s", 44.5, true, Site::InternalA)], 60.0).unwrap();
        let c = apply_horizon_censoring(&c, 60.0).unwrap();
        assert_eq!(c.records()[0].time_months, 44.5);
        assert!(c.records()[0].event);
    }

    #[test]
    fn censoring_boundary_is_inclusive() {
        let c = Cohort::new(vec![rec("p", "s", 60.0, true, Site::InternalA)], 60.0).unwrap();
        let c = apply_horizon_censoring(&c, 60.0).unwrap();
        assert_eq!(c.records()[0].time_months, 60.0);
        assert!(c.records()[0].event);
    }

    #[test]
    fn censoring_truncates_late_events() {
        let c = Cohort::new(vec![rec("p", "s", 72.0, true, Site::InternalA)], 60.0).unwrap();
        let c = apply_horizon_censoring(&c, 60.0).unwrap();
        assert_eq!(c.records()[0].time_months, 60.0);
        assert!(!c.records()[0].event);
    }

    #[test]
    fn censoring_is_idempotent() {
        let records = vec![
            rec("p1", "s1", 44.5, true, Site::InternalA),
            rec("p2", "s2", 60.0, true, Site::InternalA),
            rec("p3", "s3", 72.0, true, Site::InternalB),
            rec("p4", "s4", 10.0, false, Site::InternalA),
        ];
        let c = Cohort::new(records, 60.0).unwrap();
        let once = apply_horizon_censoring(&c, 60.0).unwrap();
        let twice = apply_horizon_censoring(&once, 60.0).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn censorship_rate_is_exact() {
        let records: Vec<SurvivalRecord> = (0..10)
            .map(|i| {
                let raw = if i < 4 { 80.0 } else { 20.0 };
                rec(
                    &format!("p{i}"),
                    &format!("s{i}"),
                    raw,
                    true,
                    Site::InternalA,
                )
            })
            .collect();
        let c = Cohort::new(records, 60.0).unwrap();
        let c = apply_horizon_censoring(&c, 60.0).unwrap();
        assert_eq!(c.censorship_rate(), 0.4);
    }

    #[test]
    fn split_exact_ratio_on_divisible_count() {
        let records: Vec<SurvivalRecord> = (0..10)
            .map(|i| {
                rec(
                    &format!("p{i}"),
                    &format!("s{i}"),
                    10.0,
                    true,
                    Site::InternalA,
                )
            })
            .collect();
        let c = Cohort::new(records, 60.0).unwrap();
        let a = split_by_subject(&c, 0.8, 7, None).unwrap();
        let (tr, va, te) = split_counts(&a);
        assert_eq!((tr, va, te), (8, 2, 0));
    }

    #[test]
    fn subject_samples_share_a_split() {
        let mut records = vec![
            rec("p1", "s1", 10.0, true, Site::InternalA),
            rec("p1", "s2", 20.0, true, Site::InternalA),
            rec("p1", "s3", 30.0, true, Site::InternalB),
        ];
        for i in 0..7 {
            records.push(rec(
                &format!("q{i}"),
                &format!("t{i}"),
                15.0,
                true,
                Site::InternalA,
            ));
        }
        let c = Cohort::new(records, 60.0).unwrap();
        let a = split_by_subject(&c, 0.8, 3, None).unwrap();
        let split = a.split_of("p1").unwrap();
        for idx in 0..3 {
            let r = &c.records()[idx];
            assert_eq!(a.split_of(&r.subject_id), Some(split));
        }
    }

    #[test]
    fn same_seed_same_assignment() {
        let records: Vec<SurvivalRecord> = (0..23)
            .map(|i| {
                rec(
                    &format!("p{i}"),
                    &format!("s{i}"),
                    10.0,
                    true,
                    Site::InternalA,
                )
            })
            .collect();
        let c = Cohort::new(records, 60.0).unwrap();
        let a = split_by_subject(&c, 0.8, 42, None).unwrap();
        let b = split_by_subject(&c, 0.8, 42, None).unwrap();
        assert_eq!(a, b);
        let c2 = split_by_subject(&c, 0.8, 43, None).unwrap();
        assert_ne!(a, c2);
    }

    #[test]
    fn assignment_depends_only_on_subject_set() {
        // Same subjects, different record order and sample multiplicity.
        let mut r1 = Vec::new();
        let mut r2 = Vec::new();
        for i in 0..9 {
            r1.push(rec(
                &format!("p{i}"),
                &format!("a{i}"),
                10.0,
                true,
                Site::InternalA,
            ));
        }
        for i in (0..9).rev() {
            r2.push(rec(
                &format!("p{i}"),
                &format!("b{i}"),
                22.0,
                false,
                Site::InternalB,
            ));
            r2.push(rec(
                &format!("p{i}"),
                &format!("c{i}"),
                31.0,
                true,
                Site::InternalB,
            ));
        }
        let c1 = Cohort::new(r1, 60.0).unwrap();
        let c2 = Cohort::new(r2, 60.0).unwrap();
        let a1 = split_by_subject(&c1, 0.7, 5, None).unwrap();
        let a2 = split_by_subject(&c2, 0.7, 5, None).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn external_site_goes_to_test() {
        let records = vec![
            rec("p1", "s1", 10.0, true, Site::InternalA),
            rec("p2", "s2", 10.0, true, Site::External),
            rec("p3", "s3", 10.0, true, Site::InternalB),
            rec("p4", "s4", 10.0, true, Site::External),
            rec("p5", "s5", 10.0, true, Site::InternalA),
        ];
        let c = Cohort::new(records, 60.0).unwrap();
        let a = split_by_subject(&c, 0.5, 0, Some(Site::External)).unwrap();
        assert_eq!(a.split_of("p2"), Some(Split::Test));
        assert_eq!(a.split_of("p4"), Some(Split::Test));
        let (tr, va, te) = split_counts(&a);
        assert_eq!(te, 2);
        assert_eq!(tr + va, 3);
    }

    #[test]
    fn subject_with_external_sample_is_fully_held_out() {
        let records = vec![
            rec("p1", "s1", 10.0, true, Site::InternalA),
            rec("p1", "s2", 12.0, true, Site::External),
            rec("p2", "s3", 10.0, true, Site::InternalA),
        ];
        let c = Cohort::new(records, 60.0).unwrap();
        let a = split_by_subject(&c, 0.5, 0, Some(Site::External)).unwrap();
        assert_eq!(a.split_of("p1"), Some(Split::Test));
    }

    #[test]
    fn bad_ratio_rejected() {
        let c = Cohort::new(vec![rec("p", "s", 10.0, true, Site::InternalA)], 60.0).unwrap();
        assert!(matches!(
            split_by_subject(&c, 1.0, 0, None),
            Err(CohortError::BadRatio(_))
        ));
        assert!(matches!(
            split_by_subject(&c, 0.0, 0, None),
            Err(CohortError::BadRatio(_))
        ));
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        use proptest::prelude::*;
        let mut runner = proptest::test_runner::TestRunner::default();
        runner
            .run(
                &(2usize..60, proptest::num::u64::ANY, 1usize..99),
                |(n_subjects, seed, pct)| {
                    let ratio = pct as f64 / 100.0;
                    let records: Vec<SurvivalRecord> = (0..n_subjects)
                        .flat_map(|i| {
                            let site = match i % 3 {
                                0 => Site::InternalA,
                                1 => Site::InternalB,
                                _ => Site::External,
                            };
                            (0..=(i % 2)).map(move |j| SurvivalRecord {
                                subject_id: format!("p{i}"),
                                sample_id: format!("s{i}-{j}"),
                                time_months: 10.0,
                                event: true,
                                site,
                                raw_time_months: 10.0,
                            })
                        })
                        .collect();
                    let c = Cohort::new(records, 60.0).unwrap();
                    let a = split_by_subject(&c, ratio, seed, Some(Site::External)).unwrap();
                    // every subject appears exactly once
                    let subjects: BTreeSet<String> =
                        c.records().iter().map(|r| r.subject_id.clone()).collect();
                    prop_assert_eq!(a.len(), subjects.len());
                    for s in &subjects {
                        prop_assert!(a.split_of(s).is_some());
                    }
                    // record indices partition across the three splits
                    let tr = c.indices_for(&a, Split::Train);
                    let va = c.indices_for(&a, Split::Validation);
                    let te = c.indices_for(&a, Split::Test);
                    let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
                    all.sort_unstable();
                    let expected: Vec<usize> = (0..c.len()).collect();
                    prop_assert_eq!(all, expected);
                    Ok(())
                },
            )
            .unwrap();
    }
}
