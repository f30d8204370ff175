//! Synthetic proportional-hazards cohorts with known ground truth.
//!
//! Features are standard normal; event times come from inverse-transform
//! sampling of the Weibull proportional-hazards survival function
//! `S(t | x) = exp(-(t / scale)^shape * exp(risk(x)))`, so every
//! downstream estimate (coefficients, C-index, KM separation) can be
//! checked against the generating truth. Generation is a pure function of
//! the spec, seed included.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{apply_horizon_censoring, Cohort, CohortError, Site, SurvivalRecord};
use crate::features::{FeatureColumn, FeatureError, FeatureTable};
use crate::fsio;
use crate::metrics::{concordance_index, CIndexResult, MetricError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid synthetic spec: {0}")]
    BadSpec(&'static str),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("failed to write synthetic outputs")]
    Io(#[from] std::io::Error),
    #[error("CSV failure")]
    Csv(#[from] csv::Error),
    #[error("JSON failure")]
    Json(#[from] serde_json::Error),
}

/// True risk function used by the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskFn {
    /// `risk(x) = beta . x`; requires `beta.len() == p`.
    Linear { beta: Vec<f64> },
    /// A named nonlinear form.
    Nonlinear { form: NonlinearForm },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum NonlinearForm {
    /// `risk(x) = x_0^2 - x_1^2 + sin(pi * x_2)`; smooth, roughly centered,
    /// and invisible to a linear fit. Needs `p >= 3`.
    QuadSine,
    /// `risk(x) = log_hr * [x_0 > 0] - log_hr / 2`: exactly two hazard
    /// levels with ratio `exp(log_hr)` between them. Needs `p >= 1`.
    Step { log_hr: f64 },
}

/// Administrative censoring process applied on top of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Censoring {
    /// Follow-up always exceeds the horizon.
    None,
    /// Censoring time uniform on `(0, window)`.
    Uniform { window: f64 },
    /// Censoring time exponential with the given rate.
    Exponential { rate: f64 },
}

/// Weibull baseline hazard parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullBaseline {
    pub shape: f64,
    pub scale: f64,
}

/// Full description of one synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub risk_fn: RiskFn,
    pub baseline: WeibullBaseline,
    pub censoring: Censoring,
    pub horizon_months: f64,
    pub seed: u64,
}

/// Generated cohort plus everything needed to score an estimator against
/// the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub features: FeatureTable,
    pub true_risk: Vec<f64>,
    pub spec: SyntheticSpec,
    /// Pre-horizon event flags, one per record; what the cohort CSV's
    /// `event_observed` column carries.
    pub event_observed: Vec<bool>,
}

impl SyntheticCohort {
    pub fn event_fraction(&self) -> f64 {
        1.0 - self.cohort.censorship_rate()
    }
}

fn validate_spec(spec: &SyntheticSpec) -> Result<(), SimError> {
    if spec.n < 2 {
        return Err(SimError::BadSpec("n must be at least 2"));
    }
    if spec.p == 0 {
        return Err(SimError::BadSpec("p must be positive"));
    }
    if !spec.baseline.shape.is_finite()
        || spec.baseline.shape <= 0.0
        || !spec.baseline.scale.is_finite()
        || spec.baseline.scale <= 0.0
    {
        return Err(SimError::BadSpec(
            "Weibull shape and scale must be positive",
        ));
    }
    if !spec.horizon_months.is_finite() || spec.horizon_months <= 0.0 {
        return Err(SimError::BadSpec("horizon must be positive"));
    }
    match &spec.risk_fn {
        RiskFn::Linear { beta } => {
            if beta.len() != spec.p {
                return Err(SimError::BadSpec("linear risk needs beta.len() == p"));
            }
        }
        RiskFn::Nonlinear {
            form: NonlinearForm::QuadSine,
        } => {
            if spec.p < 3 {
                return Err(SimError::BadSpec("quad_sine risk needs p >= 3"));
            }
        }
        RiskFn::Nonlinear {
            form: NonlinearForm::Step { .. },
        } => {}
    }
    match spec.censoring {
        Censoring::Uniform { window } if !window.is_finite() || window <= 0.0 => Err(
            SimError::BadSpec("uniform censoring window must be positive"),
        ),
        Censoring::Exponential { rate } if !rate.is_finite() || rate <= 0.0 => Err(
            SimError::BadSpec("exponential censoring rate must be positive"),
        ),
        _ => Ok(()),
    }
}

fn risk_of(risk_fn: &RiskFn, x: &[f64]) -> f64 {
    match risk_fn {
        RiskFn::Linear { beta } => x.iter().zip(beta).map(|(a, b)| a * b).sum(),
        RiskFn::Nonlinear {
            form: NonlinearForm::QuadSine,
        } => x[0] * x[0] - x[1] * x[1] + (std::f64::consts::PI * x[2]).sin(),
        RiskFn::Nonlinear {
            form: NonlinearForm::Step { log_hr },
        } => {
            if x[0] > 0.0 {
                log_hr / 2.0
            } else {
                -log_hr / 2.0
            }
        }
    }
}

/// Generate a cohort from the spec. Same seed, same cohort, bit for bit.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCohort, SimError> {
    validate_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.baseline.shape;
    let lambda = spec.baseline.scale;

    let mut values = Vec::with_capacity(spec.n * spec.p);
    let mut true_risk = Vec::with_capacity(spec.n);
    let mut records = Vec::with_capacity(spec.n);
    let mut event_observed = Vec::with_capacity(spec.n);
    let mut x = vec![0.0; spec.p];

    for i in 0..spec.n {
        for xj in x.iter_mut() {
            *xj = rng.sample(StandardNormal);
        }
        values.extend_from_slice(&x);
        let risk = risk_of(&spec.risk_fn, &x);
        true_risk.push(risk);

        let u: f64 = rng.random_range(0.0f64..1.0).max(1e-300);
        let event_time = (lambda * (-u.ln() * (-risk).exp()).powf(1.0 / k)).max(1e-12);
        let censor_time = match spec.censoring {
            Censoring::None => f64::INFINITY,
            Censoring::Uniform { window } => rng.random_range(0.0f64..window).max(1e-12),
            Censoring::Exponential { rate } => {
                let v: f64 = rng.random_range(0.0f64..1.0).max(1e-300);
                (-v.ln() / rate).max(1e-12)
            }
        };
        let observed = event_time <= censor_time;
        event_observed.push(observed);
        records.push(SurvivalRecord {
            subject_id: format!("subj-{i:05}"),
            sample_id: format!("samp-{i:05}"),
            time_months: event_time.min(censor_time),
            event: observed,
            site: if i % 2 == 0 {
                Site::InternalA
            } else {
                Site::InternalB
            },
            raw_time_months: event_time.min(censor_time),
        });
    }

    let cohort = Cohort::new(records, spec.horizon_months)?;
    let cohort = apply_horizon_censoring(&cohort, spec.horizon_months)?;
    if !cohort.events().iter().any(|e| *e) {
        log::warn!("synthetic spec produced zero events after censoring");
    }

    let sample_ids = cohort.sample_ids();
    let columns = (0..spec.p)
        .map(|j| FeatureColumn::new("sim", format!("x{j:03}")))
        .collect();
    let features = FeatureTable::new(
        sample_ids,
        columns,
        ndarray::Array2::from_shape_vec((spec.n, spec.p), values)
            .expect("row-major buffer matches (n, p)"),
    )?;

    Ok(SyntheticCohort {
        cohort,
        features,
        true_risk,
        spec: spec.clone(),
        event_observed,
    })
}

/// C-index of the true risk scores on the generated cohort; the ceiling
/// any fitted model is compared against.
pub fn oracle_metrics(sc: &SyntheticCohort) -> Result<CIndexResult, SimError> {
    Ok(concordance_index(
        &sc.cohort.times(),
        &sc.cohort.events(),
        &sc.true_risk,
    )?)
}

/// File paths produced by [`write_synthetic`].
#[derive(Debug, Clone)]
pub struct SimPaths {
    pub cohort_csv: PathBuf,
    pub features_csv: PathBuf,
    pub spec_json: PathBuf,
}

/// Write the cohort CSV, feature CSV, and spec echo into `dir` using the
/// same schemas the loaders read.
pub fn write_synthetic(sc: &SyntheticCohort, dir: impl AsRef<Path>) -> Result<SimPaths, SimError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let mut cohort_bytes = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut cohort_bytes);
        w.write_record([
            "subject_id",
            "sample_id",
            "site",
            "raw_time_months",
            "event_observed",
        ])?;
        for (r, observed) in sc.cohort.records().iter().zip(&sc.event_observed) {
            w.write_record([
                r.subject_id.as_str(),
                r.sample_id.as_str(),
                &r.site.to_string(),
                &r.raw_time_months.to_string(),
                if *observed { "1" } else { "0" },
            ])?;
        }
        w.flush()?;
    }
    let cohort_csv = dir.join("cohort.csv");
    fsio::write_atomic(&cohort_csv, &cohort_bytes)?;

    let mut feature_bytes = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut feature_bytes);
        let mut header = vec!["sample_id".to_string()];
        header.extend(sc.features.columns().iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for (i, sid) in sc.features.sample_ids().iter().enumerate() {
            let mut row = vec![sid.clone()];
            row.extend(sc.features.values().row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    let features_csv = dir.join("features.csv");
    fsio::write_atomic(&features_csv, &feature_bytes)?;

    let spec_json = dir.join("spec.json");
    let mut spec_bytes = serde_json::to_vec_pretty(&sc.spec)?;
    spec_bytes.push(b'\n');
    fsio::write_atomic(&spec_json, &spec_bytes)?;

    Ok(SimPaths {
        cohort_csv,
        features_csv,
        spec_json,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::load_cohort;
    use crate::cox::{fit_linear_coxph, predict_linear_risk};
    use crate::features::load_feature_table;
    use crate::metrics::concordance_index;

    fn base_spec() -> SyntheticSpec {
        SyntheticSpec {
            n: 2000,
            p: 3,
            risk_fn: RiskFn::Linear {
                beta: vec![1.0, -0.5, 0.25],
            },
            baseline: WeibullBaseline {
                shape: 1.5,
                scale: 36.0,
            },
            censoring: Censoring::Uniform { window: 210.0 },
            horizon_months: 60.0,
            seed: 2024,
        }
    }

    #[test]
    fn exponential_special_case_mean() {
        let spec = SyntheticSpec {
            n: 10_000,
            p: 1,
            risk_fn: RiskFn::Linear { beta: vec![0.0] },
            baseline: WeibullBaseline {
                shape: 1.0,
                scale: 10.0,
            },
            censoring: Censoring::None,
            horizon_months: 1e9,
            seed: 31,
        };
        let sc = generate(&spec).unwrap();
        let times = sc.cohort.times();
        let mean: f64 = times.iter().sum::<f64>() / times.len() as f64;
        assert!(
            (mean - 10.0).abs() / 10.0 < 0.05,
            "empirical mean {mean} too far from 10"
        );
        assert!(sc.cohort.events().iter().all(|e| *e));
    }

    #[test]
    fn exponential_special_case_ks_distance() {
        let spec = SyntheticSpec {
            n: 10_000,
            p: 1,
            risk_fn: RiskFn::Linear { beta: vec![0.0] },
            baseline: WeibullBaseline {
                shape: 1.0,
                scale: 7.0,
            },
            censoring: Censoring::None,
            horizon_months: 1e9,
            seed: 77,
        };
        let sc = generate(&spec).unwrap();
        let mut times = sc.cohort.times();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = times.len() as f64;
        let mut d: f64 = 0.0;
        for (i, t) in times.iter().enumerate() {
            let cdf = 1.0 - (-t / 7.0).exp();
            let upper = (i as f64 + 1.0) / n - cdf;
            let lower = cdf - i as f64 / n;
            d = d.max(upper.abs()).max(lower.abs());
        }
        // 1% critical value of the one-sample KS statistic
        let critical = 1.628 / n.sqrt();
        assert!(d < critical, "KS distance {d} >= {critical}");
    }

    #[test]
    fn zero_beta_oracle_is_exactly_half() {
        let spec = SyntheticSpec {
            n: 2000,
            p: 3,
            risk_fn: RiskFn::Linear {
                beta: vec![0.0, 0.0, 0.0],
            },
            ..base_spec()
        };
        let sc = generate(&spec).unwrap();
        let oracle = oracle_metrics(&sc).unwrap();
        assert!(
            (oracle.value - 0.5).abs() <= 0.02,
            "oracle C {}",
            oracle.value
        );
        // all true risks are 0, so every comparable pair is score-tied
        assert_eq!(oracle.value, 0.5);
        assert_eq!(oracle.tied, oracle.pairs);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = base_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticSpec { seed: 2025, ..spec }).unwrap();
        assert_ne!(a.cohort, c.cohort);
    }

    #[test]
    fn censoring_fraction_monotone_in_rate() {
        let mut fractions = Vec::new();
        for rate in [0.005, 0.02, 0.08] {
            let spec = SyntheticSpec {
                censoring: Censoring::Exponential { rate },
                ..base_spec()
            };
            let sc = generate(&spec).unwrap();
            fractions.push(sc.cohort.censorship_rate());
        }
        assert!(
            fractions[0] < fractions[1] && fractions[1] < fractions[2],
            "censoring fractions not monotone: {fractions:?}"
        );
    }

    #[test]
    fn step_form_has_two_risk_levels() {
        let spec = SyntheticSpec {
            n: 100,
            p: 1,
            risk_fn: RiskFn::Nonlinear {
                form: NonlinearForm::Step {
                    log_hr: std::f64::consts::LN_2,
                },
            },
            baseline: WeibullBaseline {
                shape: 1.0,
                scale: 20.0,
            },
            censoring: Censoring::None,
            horizon_months: 1e9,
            seed: 5,
        };
        let sc = generate(&spec).unwrap();
        let half = std::f64::consts::LN_2 / 2.0;
        for (risk, x) in sc.true_risk.iter().zip(sc.features.values().column(0)) {
            let expected = if *x > 0.0 { half } else { -half };
            assert_eq!(*risk, expected);
        }
    }

    #[test]
    fn fitted_cox_never_beats_oracle_on_held_out_data() {
        let train = generate(&base_spec()).unwrap();
        let test = generate(&SyntheticSpec {
            seed: 512,
            ..base_spec()
        })
        .unwrap();
        let model = fit_linear_coxph(
            &train.features,
            &train.cohort.times(),
            &train.cohort.events(),
            1e-9,
            100,
        )
        .unwrap();
        let fitted_scores = predict_linear_risk(&model, &test.features).unwrap();
        let fitted_c =
            concordance_index(&test.cohort.times(), &test.cohort.events(), &fitted_scores)
                .unwrap()
                .value;
        let oracle_c = oracle_metrics(&test).unwrap().value;
        assert!(
            fitted_c <= oracle_c + 0.01,
            "fitted {fitted_c} vs oracle {oracle_c}"
        );
        // a correctly specified fit should also land close to the ceiling
        assert!(
            oracle_c - fitted_c < 0.05,
            "fitted {fitted_c} vs oracle {oracle_c}"
        );
    }

    #[test]
    fn linear_fit_trails_oracle_on_nonlinear_risk() {
        let spec = SyntheticSpec {
            risk_fn: RiskFn::Nonlinear {
                form: NonlinearForm::QuadSine,
            },
            ..base_spec()
        };
        let sc = generate(&spec).unwrap();
        let model = fit_linear_coxph(
            &sc.features,
            &sc.cohort.times(),
            &sc.cohort.events(),
            1e-9,
            100,
        )
        .unwrap();
        let fitted_scores = predict_linear_risk(&model, &sc.features).unwrap();
        let fitted_c = concordance_index(&sc.cohort.times(), &sc.cohort.events(), &fitted_scores)
            .unwrap()
            .value;
        let oracle_c = oracle_metrics(&sc).unwrap().value;
        assert!(
            oracle_c - fitted_c >= 0.03,
            "gap only {} (oracle {oracle_c}, linear {fitted_c})",
            oracle_c - fitted_c
        );
    }

    #[test]
    fn coefficient_recovery_within_tolerance() {
        let sc = generate(&base_spec()).unwrap();
        let model = fit_linear_coxph(
            &sc.features,
            &sc.cohort.times(),
            &sc.cohort.events(),
            1e-9,
            100,
        )
        .unwrap();
        let truth = [1.0, -0.5, 0.25];
        for (b, t) in model.beta.iter().zip(truth) {
            assert!((b - t).abs() < 0.1, "beta {b} vs true {t}");
        }
    }

    #[test]
    fn written_outputs_round_trip() {
        let spec = SyntheticSpec {
            n: 40,
            ..base_spec()
        };
        let sc = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_synthetic(&sc, dir.path()).unwrap();

        let cohort = load_cohort(&paths.cohort_csv, spec.horizon_months).unwrap();
        assert_eq!(cohort, sc.cohort);

        let features = load_feature_table(&paths.features_csv, "sim").unwrap();
        assert_eq!(features, sc.features);

        let spec_back: SyntheticSpec =
            serde_json::from_slice(&std::fs::read(&paths.spec_json).unwrap()).unwrap();
        assert_eq!(spec_back, sc.spec);
    }

    #[test]
    fn spec_validation_catches_degenerate_inputs() {
        let ok = base_spec();
        assert!(matches!(
            generate(&SyntheticSpec { n: 1, ..ok.clone() }),
            Err(SimError::BadSpec(_))
        ));
        assert!(matches!(
            generate(&SyntheticSpec {
                baseline: WeibullBaseline {
                    shape: 0.0,
                    scale: 1.0
                },
                ..ok.clone()
            }),
            Err(SimError::BadSpec(_))
        ));
        assert!(matches!(
            generate(&SyntheticSpec {
                risk_fn: RiskFn::Linear { beta: vec![1.0] },
                ..ok.clone()
            }),
            Err(SimError::BadSpec(_))
        ));
        assert!(matches!(
            generate(&SyntheticSpec {
                risk_fn: RiskFn::Nonlinear {
                    form: NonlinearForm::QuadSine
                },
                p: 2,
                ..ok.clone()
            }),
            Err(SimError::BadSpec(_))
        ));
        assert!(matches!(
            generate(&SyntheticSpec {
                censoring: Censoring::Uniform { window: 0.0 },
                ..ok
            }),
            Err(SimError::BadSpec(_))
        ));
    }

    #[test]
    fn oracle_in_pinned_band() {
        // Band pinned from 50 generations of the base spec (seeds 0..50)
        // via the propose_band_fixture procedure below; fresh seeds must
        // stay inside mean +/- 3 sigma.
        let mut spec = base_spec();
        spec.seed = 123_456;
        let sc = generate(&spec).unwrap();
        let oracle = oracle_metrics(&sc).unwrap();
        let (mean, sigma) = (0.750783, 0.006578);
        assert!(
            (oracle.value - mean).abs() <= 3.0 * sigma,
            "oracle C {} outside pinned band {mean} +/- 3*{sigma}",
            oracle.value
        );
    }

    #[test]
    #[ignore]
    fn propose_band_fixture() {
        let mut values = Vec::new();
        let mut censor = Vec::new();
        for seed in 0..50u64 {
            let spec = SyntheticSpec {
                seed,
                ..base_spec()
            };
            let sc = generate(&spec).unwrap();
            values.push(oracle_metrics(&sc).unwrap().value);
            censor.push(sc.cohort.censorship_rate());
        }
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        let var: f64 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        let cmean: f64 = censor.iter().sum::<f64>() / censor.len() as f64;
        println!("oracle C mean {mean:.6} sigma {:.6}", var.sqrt());
        println!("censoring fraction mean {cmean:.4}");
    }
}
