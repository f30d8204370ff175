//! End-to-end experiment orchestration: one JSON config describes data
//! paths, split policy, feature fusion, the model family, and evaluation
//! settings; the runners here execute the train / eval / ablation / report
//! preprocessing flows and write their artifacts atomically.
//!
//! Every runner is deterministic given the config: a single master seed
//! fans out into fixed per-stage seeds (split, model init, training,
//! bootstrap) that are recorded in every output file, and rerunning a
//! command with the same config reproduces its artifacts byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::cohort::{
    load_cohort, split_by_subject, Cohort, CohortError, Site, Split, SplitAssignment,
    DEFAULT_HORIZON_MONTHS,
};
use crate::cox::{fit_linear_coxph, predict_linear_risk, CoxError, LinearCoxModel};
use crate::features::{
    apply_standardizer, fit_standardizer, fuse_concat, load_feature_table, pearson,
    select_by_correlation, FeatureError, FeatureTable, SelectionMask, StandardizationParams,
};
use crate::fsio;
use crate::metrics::{
    concordance_with_ci, kaplan_meier, km_export, log_rank_test, stratify, BootstrapMode,
    CIndexResult, LogRankResult, MetricError,
};
use crate::mlp::{build_mlp, train, MlpConfig, MlpError, MlpModel, TrainConfig, TrainHistory};
use crate::reports::{
    export_sentence_bundles, load_reports_csv, load_reports_jsonl, process_corpus, Category,
    ReportDocument, ReportsConfig, ReportsError,
};
use crate::simdata::{
    generate, oracle_metrics, write_synthetic, SimError, SimPaths, SyntheticSpec,
};

/// Newton tolerance for linear Cox fits launched by the pipeline.
pub const COX_TOL: f64 = 1e-9;
/// Newton iteration cap for linear Cox fits launched by the pipeline.
pub const COX_MAX_ITER: usize = 200;

/// The feature-subset combinations enumerated by the standard section
/// sweep: each singleton, the pairs and triples built around indications,
/// and all four categories together.
pub const SECTION_COMBINATIONS: [&[&str]; 10] = [
    &["impressions"],
    &["findings"],
    &["pancreas"],
    &["indications"],
    &["indications", "findings"],
    &["indications", "impressions"],
    &["indications", "pancreas"],
    &["indications", "pancreas", "impressions"],
    &["indications", "pancreas", "findings"],
    &["indications", "findings", "impressions", "pancreas"],
];

/// Failure modes for experiment configuration and the pipeline runners.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    BadConfig(String),
    #[error("block `{0}` has no configured feature table path")]
    UnknownBlock(String),
    #[error("checkpoint is unusable: {0}")]
    BadCheckpoint(String),
    #[error("feature columns do not match the checkpoint (expected {expected}, found {found})")]
    ColumnMismatch { expected: String, found: String },
    #[error("report input contains no documents")]
    EmptyInput,
    #[error("split `{0}` has no samples")]
    EmptySplit(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Cox(#[from] CoxError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Reports(#[from] ReportsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o failure")]
    Io(#[from] std::io::Error),
    #[error("encoding failed")]
    Json(#[from] serde_json::Error),
    #[error("csv output failed")]
    Csv(#[from] csv::Error),
}

/// Correlation-threshold setting: keep every feature, or run redundancy
/// selection with the given cutoff. Serializes as the string `"all"` or a
/// bare number so configs read naturally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    All,
    Below(f64),
}

impl Serialize for ThresholdSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ThresholdSpec::All => serializer.serialize_str("all"),
            ThresholdSpec::Below(t) => serializer.serialize_f64(*t),
        }
    }
}

impl<'de> Deserialize<'de> for ThresholdSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(t) => Ok(ThresholdSpec::Below(t)),
            Raw::Text(s) if s.eq_ignore_ascii_case("all") => Ok(ThresholdSpec::All),
            Raw::Text(s) => Err(D::Error::custom(format!(
                "expected a number or \"all\", got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdSpec::All => f.write_str("all"),
            ThresholdSpec::Below(t) => write!(f, "{t}"),
        }
    }
}

impl FromStr for ThresholdSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(ThresholdSpec::All);
        }
        s.parse::<f64>()
            .map(ThresholdSpec::Below)
            .map_err(|_| format!("expected a number or `all`, got `{s}`"))
    }
}

/// Which model a run trains and evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    LinearCox,
    Mlp,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::LinearCox => "linear_cox",
            ModelFamily::Mlp => "mlp",
        })
    }
}

/// Which rows an evaluation scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTarget {
    Validation,
    Test,
    All,
}

impl fmt::Display for EvalTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalTarget::Validation => "validation",
            EvalTarget::Test => "test",
            EvalTarget::All => "all",
        })
    }
}

impl FromStr for EvalTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "validation" => Ok(EvalTarget::Validation),
            "test" => Ok(EvalTarget::Test),
            "all" => Ok(EvalTarget::All),
            other => Err(format!("unknown eval target `{other}`")),
        }
    }
}

/// Input file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSettings {
    pub cohort: PathBuf,
    /// Feature table CSV per block name.
    #[serde(default)]
    pub feature_blocks: BTreeMap<String, PathBuf>,
    /// Report corpus (CSV or JSONL), only needed by the sections flow.
    #[serde(default)]
    pub reports: Option<PathBuf>,
    #[serde(default = "default_horizon")]
    pub horizon_months: f64,
}

fn default_horizon() -> f64 {
    DEFAULT_HORIZON_MONTHS
}

/// Subject-level split policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSettings {
    /// Fraction of internal subjects assigned to training.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Site whose subjects form the held-out test split.
    #[serde(default)]
    pub external_site: Option<Site>,
}

fn default_train_fraction() -> f64 {
    0.8
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            train_fraction: default_train_fraction(),
            external_site: None,
        }
    }
}

/// Which blocks are fused and whether one of them goes through
/// correlation-threshold selection first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSettings {
    /// Blocks to fuse, in concatenation order.
    pub blocks: Vec<String>,
    #[serde(default = "default_threshold")]
    pub correlation_threshold: ThresholdSpec,
    /// Block the threshold applies to; other blocks are never filtered.
    #[serde(default)]
    pub selection_block: Option<String>,
}

fn default_threshold() -> ThresholdSpec {
    ThresholdSpec::All
}

/// Network shape settings; the input width and seeds are derived at run
/// time from the fused table and the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSettings {
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_dropout_rate")]
    pub dropout_rate: f64,
    #[serde(default = "default_batchnorm")]
    pub batchnorm: bool,
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

impl Default for MlpSettings {
    fn default() -> Self {
        MlpSettings {
            hidden_dims: default_hidden_dims(),
            dropout_rate: default_dropout_rate(),
            batchnorm: default_batchnorm(),
        }
    }
}

/// Model family plus its hyperparameters. The `seed` fields inside
/// `train` are ignored: per-stage seeds always come from the master seed
/// so one knob controls the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub family: ModelFamily,
    #[serde(default)]
    pub mlp: MlpSettings,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Bootstrap and stratification settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSettings {
    #[serde(default = "default_bootstrap_b")]
    pub bootstrap_b: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Scores strictly above this value are labeled high risk.
    #[serde(default)]
    pub stratification_threshold: f64,
    #[serde(default = "default_eval_target")]
    pub eval_split: EvalTarget,
}

fn default_bootstrap_b() -> usize {
    1000
}

fn default_level() -> f64 {
    0.95
}

fn default_eval_target() -> EvalTarget {
    EvalTarget::Validation
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            bootstrap_b: default_bootstrap_b(),
            level: default_level(),
            stratification_threshold: 0.0,
            eval_split: default_eval_target(),
        }
    }
}

/// One experiment, fully described: load the config from JSON, optionally
/// override a few fields from the command line, validate, run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSettings,
    #[serde(default)]
    pub split: SplitSettings,
    pub features: FeatureSettings,
    pub model: ModelSettings,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    /// Master seed; all per-stage seeds derive from it.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Rules for the report preprocessing flow.
    #[serde(default)]
    pub report_rules: ReportsConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, PipelineError> {
        let bytes = std::fs::read(path)?;
        let config: ExperimentConfig = serde_json::from_slice(&bytes)?;
        Ok(config)
    }

    /// Checks internal consistency without touching the filesystem.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.features.blocks.is_empty() {
            return Err(PipelineError::BadConfig(
                "features.blocks must list at least one block".to_string(),
            ));
        }
        for block in &self.features.blocks {
            if !self.data.feature_blocks.contains_key(block) {
                return Err(PipelineError::UnknownBlock(block.clone()));
            }
        }
        if let Some(block) = &self.features.selection_block {
            if !self.features.blocks.contains(block) {
                return Err(PipelineError::BadConfig(format!(
                    "selection_block `{block}` is not among the fused blocks"
                )));
            }
        }
        if let ThresholdSpec::Below(t) = self.features.correlation_threshold {
            if !t.is_finite() || t <= 0.0 {
                return Err(PipelineError::BadConfig(format!(
                    "correlation_threshold must be positive and finite, got {t}"
                )));
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(PipelineError::BadConfig(format!(
                "split.train_fraction must lie in (0, 1), got {}",
                self.split.train_fraction
            )));
        }
        if !self.data.horizon_months.is_finite() || self.data.horizon_months <= 0.0 {
            return Err(PipelineError::BadConfig(format!(
                "data.horizon_months must be positive, got {}",
                self.data.horizon_months
            )));
        }
        if self.evaluation.bootstrap_b < 100 {
            return Err(PipelineError::BadConfig(format!(
                "evaluation.bootstrap_b must be at least 100, got {}",
                self.evaluation.bootstrap_b
            )));
        }
        if !(self.evaluation.level > 0.0 && self.evaluation.level < 1.0) {
            return Err(PipelineError::BadConfig(format!(
                "evaluation.level must lie in (0, 1), got {}",
                self.evaluation.level
            )));
        }
        if !self.evaluation.stratification_threshold.is_finite() {
            return Err(PipelineError::BadConfig(
                "evaluation.stratification_threshold must be finite".to_string(),
            ));
        }
        let probe = MlpConfig {
            input_dim: 1,
            hidden_dims: self.model.mlp.hidden_dims.clone(),
            dropout_rate: self.model.mlp.dropout_rate,
            batchnorm: self.model.mlp.batchnorm,
            seed: 0,
        };
        probe
            .validate()
            .map_err(|e| PipelineError::BadConfig(e.to_string()))?;
        self.model
            .train
            .validate()
            .map_err(|e| PipelineError::BadConfig(e.to_string()))?;
        self.report_rules
            .validate()
            .map_err(|e| PipelineError::BadConfig(e.to_string()))?;
        Ok(())
    }
}

/// Per-stage seeds derived from the master seed and echoed into every
/// artifact so a run can be reproduced from its outputs alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub split: u64,
    pub model: u64,
    pub train: u64,
    pub bootstrap: u64,
}

impl SeedPlan {
    pub fn from_master(master: u64) -> SeedPlan {
        SeedPlan {
            master,
            split: master,
            model: master.wrapping_add(1),
            train: master.wrapping_add(2),
            bootstrap: master.wrapping_add(3),
        }
    }
}

/// The trained model, tagged by family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelArtifact {
    LinearCox { model: LinearCoxModel },
    Mlp { model: MlpModel },
}

impl ModelArtifact {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelArtifact::LinearCox { .. } => ModelFamily::LinearCox,
            ModelArtifact::Mlp { .. } => ModelFamily::Mlp,
        }
    }
}

/// Everything needed to score new data exactly as training did: the split
/// recipe, per-block standardizers, the selection mask, the fused column
/// order, and the model itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineCheckpoint {
    pub seeds: SeedPlan,
    pub horizon_months: f64,
    pub train_fraction: f64,
    pub external_site: Option<Site>,
    pub blocks: Vec<String>,
    pub standardizers: BTreeMap<String, StandardizationParams>,
    pub selection_block: Option<String>,
    pub selection: Option<SelectionMask>,
    pub columns: Vec<String>,
    pub stratification_threshold: f64,
    pub model: ModelArtifact,
}

impl PipelineCheckpoint {
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<PipelineCheckpoint, PipelineError> {
        let bytes = std::fs::read(path)?;
        let checkpoint: PipelineCheckpoint = serde_json::from_slice(&bytes)?;
        checkpoint.validate()?;
        Ok(checkpoint)
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.blocks.is_empty() {
            return Err(PipelineError::BadCheckpoint(
                "no feature blocks recorded".to_string(),
            ));
        }
        for block in &self.blocks {
            if !self.standardizers.contains_key(block) {
                return Err(PipelineError::BadCheckpoint(format!(
                    "block `{block}` has no stored standardizer"
                )));
            }
        }
        if let Some(block) = &self.selection_block {
            if !self.blocks.contains(block) {
                return Err(PipelineError::BadCheckpoint(format!(
                    "selection block `{block}` is not among the stored blocks"
                )));
            }
        }
        if self.columns.is_empty() {
            return Err(PipelineError::BadCheckpoint(
                "no fused columns recorded".to_string(),
            ));
        }
        Ok(())
    }
}

/// Subject or sample counts per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Metrics file written by [`run_train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub seeds: SeedPlan,
    pub model_family: ModelFamily,
    pub blocks: Vec<String>,
    pub input_dim: usize,
    pub retained_features: usize,
    pub subjects: SplitSizes,
    pub samples: SplitSizes,
    pub internal: CIndexResult,
    pub summary_row: String,
}

/// In-memory result of [`run_train`], with the paths it wrote.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PipelineCheckpoint,
    pub history: Option<TrainHistory>,
    pub metrics: TrainMetrics,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub history_path: Option<PathBuf>,
}

/// Metrics file written by [`run_eval`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub seeds: SeedPlan,
    pub target: EvalTarget,
    pub label: String,
    pub samples: usize,
    pub c_index: CIndexResult,
    pub high_risk: usize,
    pub low_risk: usize,
    /// `None` when stratification put every sample on one side.
    pub log_rank: Option<LogRankResult>,
    pub summary_row: String,
}

/// In-memory result of [`run_eval`], with the paths it wrote.
#[derive(Debug, Clone)]
pub struct EvalArtifacts {
    pub metrics: EvalMetrics,
    pub metrics_path: PathBuf,
    pub row_path: PathBuf,
    pub km_path: PathBuf,
}

/// What a sweep runs over: correlation thresholds on the selection block,
/// or block combinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AblationSweep {
    Thresholds { values: Vec<ThresholdSpec> },
    Sections { combinations: Vec<Vec<String>> },
}

impl AblationSweep {
    /// Thresholds 0.1 through 0.9 plus the keep-everything run.
    pub fn standard_thresholds() -> AblationSweep {
        let mut values: Vec<ThresholdSpec> = (1..=9)
            .map(|i| ThresholdSpec::Below(i as f64 / 10.0))
            .collect();
        values.push(ThresholdSpec::All);
        AblationSweep::Thresholds { values }
    }

    /// The ten standard section combinations.
    pub fn standard_sections() -> AblationSweep {
        AblationSweep::Sections {
            combinations: SECTION_COMBINATIONS
                .iter()
                .map(|combo| combo.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }

    fn len(&self) -> usize {
        match self {
            AblationSweep::Thresholds { values } => values.len(),
            AblationSweep::Sections { combinations } => combinations.len(),
        }
    }
}

/// One sweep point's outcome. A failed sub-run records its error message
/// and leaves the metric cells empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub n_features: Option<usize>,
    pub internal: Option<CIndexResult>,
    pub external: Option<CIndexResult>,
    /// For threshold rows: whether the retained set passed the post-hoc
    /// pairwise-correlation re-check.
    pub pairwise_verified: Option<bool>,
    pub error: Option<String>,
}

/// Result of [`run_ablate`], with the table paths it wrote.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub csv_path: PathBuf,
    pub md_path: PathBuf,
}

/// Per-category sentence statistics from [`run_sections`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: Category,
    pub sentences: usize,
    pub placeholders: usize,
}

/// Result of [`run_sections`].
#[derive(Debug, Clone, PartialEq)]
pub struct SectionsSummary {
    pub n_reports: usize,
    pub bundle_path: PathBuf,
    pub categories: Vec<CategorySummary>,
}

impl SectionsSummary {
    pub fn placeholder_rate(&self, category: Category) -> f64 {
        let row = self
            .categories
            .iter()
            .find(|c| c.category == category)
            .expect("summary covers every category");
        if self.n_reports == 0 {
            0.0
        } else {
            row.placeholders as f64 / self.n_reports as f64
        }
    }
}

/// Result of [`run_simulate`].
#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub paths: SimPaths,
    pub n: usize,
    pub events: usize,
    pub censoring_rate: f64,
    pub oracle_c_index: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fsio::write_atomic(path, &bytes)?;
    Ok(())
}

struct Prepared {
    cohort: Cohort,
    assignment: SplitAssignment,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    test_idx: Vec<usize>,
    fused: FeatureTable,
    standardizers: BTreeMap<String, StandardizationParams>,
    selection: Option<SelectionMask>,
}

fn gather(values: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| values[i]).collect()
}

fn gather_bool(values: &[bool], idx: &[usize]) -> Vec<bool> {
    idx.iter().map(|&i| values[i]).collect()
}

fn subject_ids(cohort: &Cohort, idx: &[usize]) -> Vec<String> {
    idx.iter()
        .map(|&i| cohort.records()[i].subject_id.clone())
        .collect()
}

/// Load, split, standardize, select, fuse.
fn prepare(config: &ExperimentConfig, seeds: &SeedPlan) -> Result<Prepared, PipelineError> {
    let cohort = load_cohort(&config.data.cohort, config.data.horizon_months)?;
    let assignment = split_by_subject(
        &cohort,
        config.split.train_fraction,
        seeds.split,
        config.split.external_site,
    )?;
    let train_idx = cohort.indices_for(&assignment, Split::Train);
    let val_idx = cohort.indices_for(&assignment, Split::Validation);
    let test_idx = cohort.indices_for(&assignment, Split::Test);
    if train_idx.is_empty() {
        return Err(PipelineError::EmptySplit("train".to_string()));
    }
    if val_idx.is_empty() {
        return Err(PipelineError::EmptySplit("validation".to_string()));
    }

    let ids = cohort.sample_ids();
    let mut standardizers = BTreeMap::new();
    let mut selection = None;
    let mut prepared_blocks: Vec<FeatureTable> = Vec::new();
    for block in &config.features.blocks {
        let path = config
            .data
            .feature_blocks
            .get(block)
            .ok_or_else(|| PipelineError::UnknownBlock(block.clone()))?;
        let table = load_feature_table(path, block)?.align_to(&ids)?;
        let params = fit_standardizer(&table, &train_idx)?;
        let mut table = apply_standardizer(&table, &params)?;
        standardizers.insert(block.clone(), params);
        if config.features.selection_block.as_ref() == Some(block) {
            if let ThresholdSpec::Below(t) = config.features.correlation_threshold {
                let mask = select_by_correlation(&table, &train_idx, t)?;
                table = table.select_columns(&mask.retained)?;
                selection = Some(mask);
            }
        }
        prepared_blocks.push(table);
    }
    let refs: Vec<&FeatureTable> = prepared_blocks.iter().collect();
    let fused = fuse_concat(&refs)?;

    Ok(Prepared {
        cohort,
        assignment,
        train_idx,
        val_idx,
        test_idx,
        fused,
        standardizers,
        selection,
    })
}

fn fit_model(
    config: &ExperimentConfig,
    seeds: &SeedPlan,
    prep: &Prepared,
) -> Result<(ModelArtifact, Option<TrainHistory>), PipelineError> {
    let times = prep.cohort.times();
    let events = prep.cohort.events();
    let train_table = prep.fused.take_rows(&prep.train_idx)?;
    let t_train = gather(&times, &prep.train_idx);
    let e_train = gather_bool(&events, &prep.train_idx);

    match config.model.family {
        ModelFamily::LinearCox => {
            let model = fit_linear_coxph(&train_table, &t_train, &e_train, COX_TOL, COX_MAX_ITER)?;
            Ok((ModelArtifact::LinearCox { model }, None))
        }
        ModelFamily::Mlp => {
            let val_table = prep.fused.take_rows(&prep.val_idx)?;
            let t_val = gather(&times, &prep.val_idx);
            let e_val = gather_bool(&events, &prep.val_idx);
            let mlp_config = MlpConfig {
                input_dim: prep.fused.n_cols(),
                hidden_dims: config.model.mlp.hidden_dims.clone(),
                dropout_rate: config.model.mlp.dropout_rate,
                batchnorm: config.model.mlp.batchnorm,
                seed: seeds.model,
            };
            let model = build_mlp(mlp_config)?;
            let mut tc = config.model.train.clone();
            tc.seed = seeds.train;
            let (model, history) = train(
                model,
                train_table.values(),
                &t_train,
                &e_train,
                val_table.values(),
                &t_val,
                &e_val,
                &tc,
            )?;
            Ok((ModelArtifact::Mlp { model }, Some(history)))
        }
    }
}

fn predict_scores(
    artifact: &ModelArtifact,
    table: &FeatureTable,
) -> Result<Vec<f64>, PipelineError> {
    match artifact {
        ModelArtifact::LinearCox { model } => Ok(predict_linear_risk(model, table)?),
        ModelArtifact::Mlp { model } => Ok(model.predict_risk(table.values())?),
    }
}

fn concordance_on(
    cohort: &Cohort,
    fused: &FeatureTable,
    artifact: &ModelArtifact,
    idx: &[usize],
    b: usize,
    bootstrap_seed: u64,
    level: f64,
) -> Result<CIndexResult, PipelineError> {
    let table = fused.take_rows(idx)?;
    let scores = predict_scores(artifact, &table)?;
    let times = gather(&cohort.times(), idx);
    let events = gather_bool(&cohort.events(), idx);
    let subjects = subject_ids(cohort, idx);
    Ok(concordance_with_ci(
        &times,
        &events,
        &scores,
        b,
        bootstrap_seed,
        level,
        BootstrapMode::Subjects(&subjects),
    )?)
}

fn run_label(family: ModelFamily, blocks: &[String], target: EvalTarget) -> String {
    format!("{family}: {} [{target}]", blocks.join("+"))
}

/// Train a model per the config and evaluate it on the internal validation
/// split. Writes `checkpoint.json`, `train_metrics.json`, and (for the MLP
/// family) `history.json` into the output directory.
pub fn run_train(config: &ExperimentConfig) -> Result<TrainArtifacts, PipelineError> {
    config.validate()?;
    let seeds = SeedPlan::from_master(config.seed);
    let prep = prepare(config, &seeds)?;
    let input_dim = prep.fused.n_cols();
    log::info!(
        "fused {} block(s) {:?} into input_dim = {input_dim}",
        config.features.blocks.len(),
        config.features.blocks
    );

    let (artifact, history) = fit_model(config, &seeds, &prep)?;
    let internal = concordance_on(
        &prep.cohort,
        &prep.fused,
        &artifact,
        &prep.val_idx,
        config.evaluation.bootstrap_b,
        seeds.bootstrap,
        config.evaluation.level,
    )?;

    let checkpoint = PipelineCheckpoint {
        seeds,
        horizon_months: config.data.horizon_months,
        train_fraction: config.split.train_fraction,
        external_site: config.split.external_site,
        blocks: config.features.blocks.clone(),
        standardizers: prep.standardizers.clone(),
        selection_block: if prep.selection.is_some() {
            config.features.selection_block.clone()
        } else {
            None
        },
        selection: prep.selection.clone(),
        columns: prep.fused.qualified_names(),
        stratification_threshold: config.evaluation.stratification_threshold,
        model: artifact,
    };

    let subject_counts = crate::cohort::split_counts(&prep.assignment);
    let label = run_label(
        config.model.family,
        &config.features.blocks,
        EvalTarget::Validation,
    );
    let metrics = TrainMetrics {
        seeds,
        model_family: config.model.family,
        blocks: config.features.blocks.clone(),
        input_dim,
        retained_features: checkpoint
            .selection
            .as_ref()
            .map_or(input_dim, |m| m.retained.len()),
        subjects: SplitSizes {
            train: subject_counts.0,
            validation: subject_counts.1,
            test: subject_counts.2,
        },
        samples: SplitSizes {
            train: prep.train_idx.len(),
            validation: prep.val_idx.len(),
            test: prep.test_idx.len(),
        },
        internal: internal.clone(),
        summary_row: format!("| {label} | {} |", internal.formatted()),
    };

    std::fs::create_dir_all(&config.output_dir)?;
    let checkpoint_path = config.output_dir.join("checkpoint.json");
    checkpoint.save(&checkpoint_path)?;
    let metrics_path = config.output_dir.join("train_metrics.json");
    write_json(&metrics_path, &metrics)?;
    let history_path = match &history {
        Some(h) => {
            let p = config.output_dir.join("history.json");
            write_json(&p, h)?;
            Some(p)
        }
        None => None,
    };

    Ok(TrainArtifacts {
        checkpoint,
        history,
        metrics,
        checkpoint_path,
        metrics_path,
        history_path,
    })
}

fn prepare_eval(
    config: &ExperimentConfig,
    checkpoint: &PipelineCheckpoint,
) -> Result<(Cohort, FeatureTable), PipelineError> {
    let cohort = load_cohort(&config.data.cohort, checkpoint.horizon_months)?;
    let ids = cohort.sample_ids();
    let mut tables: Vec<FeatureTable> = Vec::new();
    for block in &checkpoint.blocks {
        let path = config
            .data
            .feature_blocks
            .get(block)
            .ok_or_else(|| PipelineError::UnknownBlock(block.clone()))?;
        let table = load_feature_table(path, block)?.align_to(&ids)?;
        let params = checkpoint.standardizers.get(block).ok_or_else(|| {
            PipelineError::BadCheckpoint(format!("no standardizer for `{block}`"))
        })?;
        let mut table = apply_standardizer(&table, params)?;
        if checkpoint.selection_block.as_ref() == Some(block) {
            if let Some(mask) = &checkpoint.selection {
                table = table.select_columns(&mask.retained)?;
            }
        }
        tables.push(table);
    }
    let refs: Vec<&FeatureTable> = tables.iter().collect();
    let fused = fuse_concat(&refs)?;
    let names = fused.qualified_names();
    if names != checkpoint.columns {
        let mismatch = checkpoint.columns.iter().zip(&names).find(|(a, b)| a != b);
        let (expected, found) = match mismatch {
            Some((a, b)) => (format!("`{a}`"), format!("`{b}`")),
            None => (
                format!("{} columns", checkpoint.columns.len()),
                format!("{} columns", names.len()),
            ),
        };
        return Err(PipelineError::ColumnMismatch { expected, found });
    }
    Ok((cohort, fused))
}

fn target_indices(
    cohort: &Cohort,
    checkpoint: &PipelineCheckpoint,
    target: EvalTarget,
) -> Result<Vec<usize>, PipelineError> {
    let indices = match target {
        EvalTarget::All => (0..cohort.len()).collect(),
        EvalTarget::Validation | EvalTarget::Test => {
            let assignment = split_by_subject(
                cohort,
                checkpoint.train_fraction,
                checkpoint.seeds.split,
                checkpoint.external_site,
            )?;
            let split = if target == EvalTarget::Validation {
                Split::Validation
            } else {
                Split::Test
            };
            cohort.indices_for(&assignment, split)
        }
    };
    if indices.is_empty() {
        return Err(PipelineError::EmptySplit(target.to_string()));
    }
    Ok(indices)
}

/// Score a saved checkpoint on the configured evaluation split: C-index
/// with bootstrap CI, risk stratification at the stored threshold, one
/// Kaplan-Meier curve per group, and a log-rank test when both groups are
/// populated. Writes `eval_metrics.json`, `eval_row.md`, and `km.csv`.
pub fn run_eval(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
) -> Result<EvalArtifacts, PipelineError> {
    config.validate()?;
    let checkpoint = PipelineCheckpoint::load(checkpoint_path)?;
    let target = config.evaluation.eval_split;
    let (cohort, fused) = prepare_eval(config, &checkpoint)?;
    let idx = target_indices(&cohort, &checkpoint, target)?;

    let table = fused.take_rows(&idx)?;
    let scores = predict_scores(&checkpoint.model, &table)?;
    let times = gather(&cohort.times(), &idx);
    let events = gather_bool(&cohort.events(), &idx);
    let subjects = subject_ids(&cohort, &idx);

    let c_index = concordance_with_ci(
        &times,
        &events,
        &scores,
        config.evaluation.bootstrap_b,
        checkpoint.seeds.bootstrap,
        config.evaluation.level,
        BootstrapMode::Subjects(&subjects),
    )?;

    let shifted: Vec<f64> = scores
        .iter()
        .map(|s| s - checkpoint.stratification_threshold)
        .collect();
    let groups = stratify(&shifted)?;
    let high = groups.high_indices();
    let low = groups.low_indices();
    let log_rank = if high.is_empty() || low.is_empty() {
        None
    } else {
        Some(log_rank_test(&groups, &times, &events)?)
    };

    let mut curves: Vec<(String, crate::metrics::KmCurve)> = Vec::new();
    for (name, members) in [("high", &high), ("low", &low)] {
        if !members.is_empty() {
            let curve = kaplan_meier(&gather(&times, members), &gather_bool(&events, members))?;
            curves.push((name.to_string(), curve));
        }
    }
    std::fs::create_dir_all(&config.output_dir)?;
    let km_path = config.output_dir.join("km.csv");
    km_export(&curves, &km_path)?;

    let label = run_label(checkpoint.model.family(), &checkpoint.blocks, target);
    let p_text = log_rank
        .as_ref()
        .map_or("not applicable".to_string(), |lr| lr.formatted_p());
    let summary_row = format!("| {label} | {} | {p_text} |", c_index.formatted());
    let metrics = EvalMetrics {
        seeds: checkpoint.seeds,
        target,
        label,
        samples: idx.len(),
        c_index,
        high_risk: high.len(),
        low_risk: low.len(),
        log_rank,
        summary_row: summary_row.clone(),
    };

    let metrics_path = config.output_dir.join("eval_metrics.json");
    write_json(&metrics_path, &metrics)?;
    let row_path = config.output_dir.join("eval_row.md");
    let table_text = format!(
        "| configuration | c-index (95% CI) | log-rank p |\n| --- | --- | --- |\n{summary_row}\n"
    );
    fsio::write_atomic(&row_path, table_text.as_bytes())?;

    Ok(EvalArtifacts {
        metrics,
        metrics_path,
        row_path,
        km_path,
    })
}

/// Export Kaplan-Meier curves for a checkpoint's risk groups without the
/// rest of the evaluation. Writes `km.csv` into the output directory.
pub fn run_km_export(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
) -> Result<PathBuf, PipelineError> {
    config.validate()?;
    let checkpoint = PipelineCheckpoint::load(checkpoint_path)?;
    let target = config.evaluation.eval_split;
    let (cohort, fused) = prepare_eval(config, &checkpoint)?;
    let idx = target_indices(&cohort, &checkpoint, target)?;
    let table = fused.take_rows(&idx)?;
    let scores = predict_scores(&checkpoint.model, &table)?;
    let times = gather(&cohort.times(), &idx);
    let events = gather_bool(&cohort.events(), &idx);
    let shifted: Vec<f64> = scores
        .iter()
        .map(|s| s - checkpoint.stratification_threshold)
        .collect();
    let groups = stratify(&shifted)?;
    let mut curves: Vec<(String, crate::metrics::KmCurve)> = Vec::new();
    for (name, members) in [
        ("high", &groups.high_indices()),
        ("low", &groups.low_indices()),
    ] {
        if !members.is_empty() {
            let curve = kaplan_meier(&gather(&times, members), &gather_bool(&events, members))?;
            curves.push((name.to_string(), curve));
        }
    }
    std::fs::create_dir_all(&config.output_dir)?;
    let km_path = config.output_dir.join("km.csv");
    km_export(&curves, &km_path)?;
    Ok(km_path)
}

/// Verify that every retained pair of columns correlates below the
/// threshold on the given rows.
fn verify_pairwise(table: &FeatureTable, rows: &[usize], threshold: f64) -> bool {
    let sub = match table.take_rows(rows) {
        Ok(s) => s,
        Err(_) => return false,
    };
    let values = sub.values();
    for a in 0..values.ncols() {
        for b in (a + 1)..values.ncols() {
            if pearson(values.column(a), values.column(b)).abs() >= threshold {
                return false;
            }
        }
    }
    true
}

fn sweep_points(
    config: &ExperimentConfig,
    sweep: &AblationSweep,
) -> Result<Vec<(String, ExperimentConfig)>, PipelineError> {
    if sweep.len() == 0 {
        return Err(PipelineError::BadConfig("sweep has no points".to_string()));
    }
    let mut points = Vec::new();
    match sweep {
        AblationSweep::Thresholds { values } => {
            if config.features.selection_block.is_none() {
                return Err(PipelineError::BadConfig(
                    "threshold sweeps need features.selection_block".to_string(),
                ));
            }
            for value in values {
                let mut sub = config.clone();
                sub.features.correlation_threshold = *value;
                let label = match value {
                    ThresholdSpec::All => "all features".to_string(),
                    ThresholdSpec::Below(t) => format!("threshold < {t}"),
                };
                points.push((label, sub));
            }
        }
        AblationSweep::Sections { combinations } => {
            for combo in combinations {
                if combo.is_empty() {
                    return Err(PipelineError::BadConfig(
                        "a section combination is empty".to_string(),
                    ));
                }
                let mut sub = config.clone();
                sub.features.blocks = combo.clone();
                sub.features.selection_block = None;
                sub.features.correlation_threshold = ThresholdSpec::All;
                points.push((combo.join(", "), sub));
            }
        }
    }
    Ok(points)
}

fn run_sweep_point(config: &ExperimentConfig) -> Result<AblationRow, PipelineError> {
    config.validate()?;
    let seeds = SeedPlan::from_master(config.seed);
    let prep = prepare(config, &seeds)?;
    let (artifact, _history) = fit_model(config, &seeds, &prep)?;

    let internal = concordance_on(
        &prep.cohort,
        &prep.fused,
        &artifact,
        &prep.val_idx,
        config.evaluation.bootstrap_b,
        seeds.bootstrap,
        config.evaluation.level,
    )?;
    let external = if prep.test_idx.is_empty() {
        None
    } else {
        Some(concordance_on(
            &prep.cohort,
            &prep.fused,
            &artifact,
            &prep.test_idx,
            config.evaluation.bootstrap_b,
            seeds.bootstrap,
            config.evaluation.level,
        )?)
    };

    let n_features = prep
        .selection
        .as_ref()
        .map_or(prep.fused.n_cols(), |m| m.retained.len());
    let pairwise_verified = match (&prep.selection, &config.features.selection_block) {
        (Some(mask), Some(block)) => {
            let block_table = prep.fused.block(block)?;
            Some(verify_pairwise(
                &block_table,
                &prep.train_idx,
                mask.threshold,
            ))
        }
        _ => None,
    };

    Ok(AblationRow {
        label: String::new(),
        n_features: Some(n_features),
        internal: Some(internal),
        external,
        pairwise_verified,
        error: None,
    })
}

fn format_cell(result: &Option<CIndexResult>) -> String {
    result.as_ref().map_or("-".to_string(), |c| c.formatted())
}

fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "| configuration | features | internal | external |\n| --- | --- | --- | --- |\n",
    );
    for row in rows {
        let features = row.n_features.map_or("-".to_string(), |n| n.to_string());
        let (internal, external) = match &row.error {
            Some(msg) => (format!("error: {msg}"), "-".to_string()),
            None => (format_cell(&row.internal), format_cell(&row.external)),
        };
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            row.label, features, internal, external
        ));
    }
    out
}

fn ablation_csv(rows: &[AblationRow]) -> Result<Vec<u8>, PipelineError> {
    let mut bytes = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        w.write_record([
            "label",
            "n_features",
            "internal_value",
            "internal_lower",
            "internal_upper",
            "external_value",
            "external_lower",
            "external_upper",
            "pairwise_verified",
            "error",
        ])?;
        for row in rows {
            let tri = |c: &Option<CIndexResult>| -> [String; 3] {
                match c {
                    Some(r) => {
                        let (lo, hi) = r.ci.as_ref().map_or((String::new(), String::new()), |ci| {
                            (ci.lower.to_string(), ci.upper.to_string())
                        });
                        [r.value.to_string(), lo, hi]
                    }
                    None => [String::new(), String::new(), String::new()],
                }
            };
            let [iv, il, iu] = tri(&row.internal);
            let [ev, el, eu] = tri(&row.external);
            w.write_record([
                row.label.as_str(),
                &row.n_features.map_or(String::new(), |n| n.to_string()),
                &iv,
                &il,
                &iu,
                &ev,
                &el,
                &eu,
                &row.pairwise_verified
                    .map_or(String::new(), |v| v.to_string()),
                row.error.as_deref().unwrap_or(""),
            ])?;
        }
        w.flush()?;
    }
    Ok(bytes)
}

/// Run the full train-and-evaluate flow once per sweep point, sharing the
/// split (every sub-run derives it from the same master seed), and emit
/// the combined table as CSV and markdown (`ablation.csv`, `ablation.md`).
/// A failing point becomes an error row; the sweep continues.
pub fn run_ablate(
    config: &ExperimentConfig,
    sweep: &AblationSweep,
) -> Result<AblationReport, PipelineError> {
    config.validate()?;
    let points = sweep_points(config, sweep)?;
    let mut rows = Vec::with_capacity(points.len());
    for (label, sub) in points {
        let row = match run_sweep_point(&sub) {
            Ok(mut row) => {
                row.label = label;
                row
            }
            Err(e) => AblationRow {
                label,
                n_features: None,
                internal: None,
                external: None,
                pairwise_verified: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }

    std::fs::create_dir_all(&config.output_dir)?;
    let csv_path = config.output_dir.join("ablation.csv");
    fsio::write_atomic(&csv_path, &ablation_csv(&rows)?)?;
    let md_path = config.output_dir.join("ablation.md");
    fsio::write_atomic(&md_path, ablation_markdown(&rows).as_bytes())?;

    Ok(AblationReport {
        rows,
        csv_path,
        md_path,
    })
}

/// Run the report preprocessing chain over the configured corpus and write
/// `sentence_bundles.jsonl` with all four categories.
pub fn run_sections(config: &ExperimentConfig) -> Result<SectionsSummary, PipelineError> {
    config.validate()?;
    let path = config.data.reports.as_ref().ok_or_else(|| {
        PipelineError::BadConfig("data.reports path is required for sections".to_string())
    })?;
    let extension = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let docs: Vec<ReportDocument> = match extension.as_str() {
        "jsonl" | "ndjson" => load_reports_jsonl(path)?,
        "csv" => load_reports_csv(path)?,
        other => {
            return Err(PipelineError::BadConfig(format!(
                "unsupported report corpus extension `{other}` (use csv or jsonl)"
            )))
        }
    };
    if docs.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let processed = process_corpus(&docs, &config.report_rules)?;

    std::fs::create_dir_all(&config.output_dir)?;
    let bundle_path = config.output_dir.join("sentence_bundles.jsonl");
    export_sentence_bundles(&processed, &Category::ALL, &bundle_path)?;

    let categories = Category::ALL
        .into_iter()
        .map(|category| CategorySummary {
            category,
            sentences: processed.iter().map(|r| r.sentences(category).len()).sum(),
            placeholders: processed
                .iter()
                .filter(|r| r.is_placeholder(category))
                .count(),
        })
        .collect();

    Ok(SectionsSummary {
        n_reports: processed.len(),
        bundle_path,
        categories,
    })
}

/// Generate a synthetic cohort and write its CSVs plus a spec echo into
/// the output directory.
pub fn run_simulate(
    spec: &SyntheticSpec,
    out_dir: &Path,
) -> Result<SimulateSummary, PipelineError> {
    let sc = generate(spec)?;
    let paths = write_synthetic(&sc, out_dir)?;
    let events = sc.cohort.events().iter().filter(|e| **e).count();
    let oracle = oracle_metrics(&sc)?;
    Ok(SimulateSummary {
        paths,
        n: sc.cohort.len(),
        events,
        censoring_rate: sc.cohort.censorship_rate(),
        oracle_c_index: oracle.value,
    })
}
