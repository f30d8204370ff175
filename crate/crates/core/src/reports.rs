//! Radiology-report preprocessing: text cleanup, section segmentation,
//! pancreas-sentence extraction, placeholder filling, and JSONL export of
//! per-category sentence bundles.
//!
//! Reports move through a fixed chain: [`clean_report`] normalizes raw text,
//! [`segment_sections`] routes sentences into indications / findings /
//! impressions, [`extract_pancreas_sentences`] copies organ-specific
//! sentences into a derived fourth category, and [`apply_placeholders`]
//! guarantees every category is non-empty. [`process_report`] runs the whole
//! chain; [`process_corpus`] does so for a batch of documents in parallel.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsio;
use crate::parallel;

/// Failure modes for report loading, configuration, and export.
#[derive(Debug, Error)]
pub enum ReportsError {
    /// A document arrived with no text at all.
    #[error("report `{report_id}` has empty text")]
    EmptyRawText { report_id: String },
    /// Export was asked to write zero categories.
    #[error("no categories requested for export")]
    NoCategories,
    /// A configured signature pattern is not a valid regular expression.
    #[error("invalid signature pattern `{pattern}`: {source}")]
    BadPattern {
        pattern: String,
        source: Box<regex::Error>,
    },
    /// A header lexicon entry is blank.
    #[error("header lexicon entry is empty")]
    EmptyHeader,
    /// A pancreas stem entry is blank (it would match every sentence).
    #[error("pancreas stem entry is empty")]
    EmptyStem,
    /// Headers may only route to segmented categories, not the derived one.
    #[error("header `{0}` targets the derived pancreas category")]
    PancreasHeader(String),
    /// A category name outside the fixed set of four.
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    /// The input table lacks a required column.
    #[error("column `{0}` is missing")]
    MissingColumn(&'static str),
    /// A JSONL line failed to parse.
    #[error("line {line} is not valid JSON")]
    JsonLine {
        line: usize,
        source: serde_json::Error,
    },
    #[error("i/o failure")]
    Io(#[from] std::io::Error),
    #[error("csv failure")]
    Csv(#[from] csv::Error),
    #[error("encoding failed")]
    Json(#[from] serde_json::Error),
}

/// The four report categories. The first three are segmented directly from
/// headers; `Pancreas` is derived by stem matching over the other three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Indications,
    Findings,
    Impressions,
    Pancreas,
}

impl Category {
    /// Canonical order used for iteration and export key order.
    pub const ALL: [Category; 4] = [
        Category::Indications,
        Category::Findings,
        Category::Impressions,
        Category::Pancreas,
    ];

    /// The three categories filled by header segmentation.
    pub const SEGMENTED: [Category; 3] = [
        Category::Indications,
        Category::Findings,
        Category::Impressions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Indications => "indications",
            Category::Findings => "findings",
            Category::Impressions => "impressions",
            Category::Pancreas => "pancreas",
        }
    }

    /// The sentence inserted when a category ends up empty.
    pub fn placeholder(self) -> &'static str {
        match self {
            Category::Indications => "No recorded indications.",
            Category::Findings => "No significant findings noted.",
            Category::Impressions => "No impressions recorded.",
            Category::Pancreas => "No pancreatic findings noted.",
        }
    }

    fn index(self) -> usize {
        match self {
            Category::Indications => 0,
            Category::Findings => 1,
            Category::Impressions => 2,
            Category::Pancreas => 3,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = ReportsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "indications" => Ok(Category::Indications),
            "findings" => Ok(Category::Findings),
            "impressions" => Ok(Category::Impressions),
            "pancreas" => Ok(Category::Pancreas),
            other => Err(ReportsError::UnknownCategory(other.to_string())),
        }
    }
}

/// One raw radiology report tied to a cohort sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub report_id: String,
    pub sample_id: String,
    #[serde(rename = "text")]
    pub raw_text: String,
}

impl ReportDocument {
    pub fn new(
        report_id: impl Into<String>,
        sample_id: impl Into<String>,
        raw_text: impl Into<String>,
    ) -> Result<Self, ReportsError> {
        let doc = ReportDocument {
            report_id: report_id.into(),
            sample_id: sample_id.into(),
            raw_text: raw_text.into(),
        };
        doc.validate()?;
        Ok(doc)
    }

    fn validate(&self) -> Result<(), ReportsError> {
        if self.raw_text.is_empty() {
            return Err(ReportsError::EmptyRawText {
                report_id: self.report_id.clone(),
            });
        }
        Ok(())
    }
}

/// Routes one header phrase to a segmented category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderRule {
    pub header: String,
    pub category: Category,
}

impl HeaderRule {
    fn new(header: &str, category: Category) -> Self {
        HeaderRule {
            header: header.to_string(),
            category,
        }
    }
}

/// Tunable pieces of the preprocessing chain. Every field has a default, so
/// `serde_json::from_str::<ReportsConfig>("{}")` yields the stock setup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportsConfig {
    /// Header phrases and the category each one opens.
    #[serde(default = "default_header_lexicon")]
    pub header_lexicon: Vec<HeaderRule>,
    /// Line-level regexes; any matching line is dropped during cleanup.
    #[serde(default = "default_signature_patterns")]
    pub signature_patterns: Vec<String>,
    /// Lowercase substrings that mark a sentence as pancreas-related.
    #[serde(default = "default_pancreas_stems")]
    pub pancreas_stems: Vec<String>,
    /// Tokens whose trailing period never ends a sentence.
    #[serde(default = "default_abbreviations")]
    pub abbreviations: Vec<String>,
}

impl Default for ReportsConfig {
    fn default() -> Self {
        ReportsConfig {
            header_lexicon: default_header_lexicon(),
            signature_patterns: default_signature_patterns(),
            pancreas_stems: default_pancreas_stems(),
            abbreviations: default_abbreviations(),
        }
    }
}

impl ReportsConfig {
    /// Checks that the configuration is internally usable: signature patterns
    /// compile, no header or stem is blank, and no header routes to the
    /// derived pancreas category.
    pub fn validate(&self) -> Result<(), ReportsError> {
        compile_signatures(self)?;
        for rule in &self.header_lexicon {
            if rule.header.trim().is_empty() {
                return Err(ReportsError::EmptyHeader);
            }
            if rule.category == Category::Pancreas {
                return Err(ReportsError::PancreasHeader(rule.header.clone()));
            }
        }
        if self.pancreas_stems.iter().any(|s| s.is_empty()) {
            return Err(ReportsError::EmptyStem);
        }
        Ok(())
    }
}

fn default_header_lexicon() -> Vec<HeaderRule> {
    vec![
        HeaderRule::new("INDICATION", Category::Indications),
        HeaderRule::new("CLINICAL INDICATION", Category::Indications),
        HeaderRule::new("HISTORY", Category::Indications),
        HeaderRule::new("FINDINGS", Category::Findings),
        HeaderRule::new("IMPRESSION", Category::Impressions),
    ]
}

fn default_signature_patterns() -> Vec<String> {
    vec![
        r"(?i)^electronically signed".to_string(),
        r"(?i)^dictated by\b".to_string(),
        r"(?i)^signed by\b".to_string(),
        r"^\d{1,2}/\d{1,2}/\d{2,4}$".to_string(),
        r"^\d{4}-\d{2}-\d{2}$".to_string(),
    ]
}

fn default_pancreas_stems() -> Vec<String> {
    vec!["pancrea".to_string()]
}

fn default_abbreviations() -> Vec<String> {
    vec![
        "Dr.".to_string(),
        "cm.".to_string(),
        "e.g.".to_string(),
        "vs.".to_string(),
    ]
}

/// A report split into the four categories, each an ordered sentence list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionedReport {
    pub report_id: String,
    pub sample_id: String,
    sections: [Vec<String>; 4],
    placeholder_flags: [bool; 4],
}

impl SectionedReport {
    fn empty(report_id: String, sample_id: String) -> Self {
        SectionedReport {
            report_id,
            sample_id,
            sections: [Vec::new(), Vec::new(), Vec::new(), Vec::new()],
            placeholder_flags: [false; 4],
        }
    }

    /// Sentences of one category, in segmentation order.
    pub fn sentences(&self, category: Category) -> &[String] {
        &self.sections[category.index()]
    }

    /// True when the category's content is a synthetic placeholder rather
    /// than text from the report.
    pub fn is_placeholder(&self, category: Category) -> bool {
        self.placeholder_flags[category.index()]
    }

    fn set(&mut self, category: Category, sentences: Vec<String>) {
        self.sections[category.index()] = sentences;
    }
}

/// Normalizes raw report text: non-ASCII characters are transliterated when
/// a one-character equivalent exists and dropped otherwise, lines matching a
/// signature pattern are removed, and whitespace runs collapse to single
/// spaces. The result may be empty. Errs only when the configured signature
/// patterns do not compile.
///
/// The output is a fixpoint: cleaning a cleaned string returns it unchanged.
pub fn clean_report(raw: &str, config: &ReportsConfig) -> Result<String, ReportsError> {
    let signatures = compile_signatures(config)?;
    Ok(clean_with(raw, &signatures))
}

fn compile_signatures(config: &ReportsConfig) -> Result<Vec<Regex>, ReportsError> {
    config
        .signature_patterns
        .iter()
        .map(|pattern| {
            Regex::new(pattern).map_err(|source| ReportsError::BadPattern {
                pattern: pattern.clone(),
                source: Box::new(source),
            })
        })
        .collect()
}

fn clean_with(raw: &str, signatures: &[Regex]) -> String {
    // Joining kept lines can expose a signature phrase that was split across
    // a line break, so the pass repeats until the text stops changing. The
    // first pass leaves a single line, so this settles within three rounds.
    let mut current = clean_pass(raw, signatures);
    loop {
        let next = clean_pass(&current, signatures);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn clean_pass(raw: &str, signatures: &[Regex]) -> String {
    let ascii: String = raw.chars().filter_map(transliterate).collect();
    let mut kept: Vec<String> = Vec::new();
    for line in ascii.split('\n') {
        let normalized = line.split_whitespace().collect::<Vec<_>>().join(" ");
        if normalized.is_empty() {
            continue;
        }
        if signatures.iter().any(|re| re.is_match(&normalized)) {
            continue;
        }
        kept.push(normalized);
    }
    kept.join(" ")
}

/// Maps a character to its ASCII form: identity for ASCII, a single-character
/// equivalent where one exists, `None` (dropped) otherwise.
fn transliterate(c: char) -> Option<char> {
    if c.is_ascii() {
        return Some(c);
    }
    let mapped = match c {
        'á' | 'à' | 'â' | 'ä' | 'ã' | 'å' => 'a',
        'Á' | 'À' | 'Â' | 'Ä' | 'Ã' | 'Å' => 'A',
        'ç' => 'c',
        'Ç' => 'C',
        'é' | 'è' | 'ê' | 'ë' => 'e',
        'É' | 'È' | 'Ê' | 'Ë' => 'E',
        'í' | 'ì' | 'î' | 'ï' => 'i',
        'Í' | 'Ì' | 'Î' | 'Ï' => 'I',
        'ñ' => 'n',
        'Ñ' => 'N',
        'ó' | 'ò' | 'ô' | 'ö' | 'õ' => 'o',
        'Ó' | 'Ò' | 'Ô' | 'Ö' | 'Õ' => 'O',
        'ú' | 'ù' | 'û' | 'ü' => 'u',
        'Ú' | 'Ù' | 'Û' | 'Ü' => 'U',
        'ý' | 'ÿ' => 'y',
        'Ý' => 'Y',
        'µ' => 'u',
        '×' => 'x',
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{2032}' => '\'',
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{2033}' => '"',
        '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2015}'
        | '\u{2212}' => '-',
        '\u{00A0}'
        | '\u{2000}'..='\u{200A}'
        | '\u{2028}'
        | '\u{2029}'
        | '\u{202F}'
        | '\u{3000}' => ' ',
        _ => return None,
    };
    Some(mapped)
}

struct HeaderMatcher {
    regex: Option<Regex>,
    entries: Vec<(String, Category)>,
}

impl HeaderMatcher {
    fn build(config: &ReportsConfig) -> Self {
        let entries: Vec<(String, Category)> = config
            .header_lexicon
            .iter()
            .filter(|rule| !rule.header.trim().is_empty())
            .map(|rule| (rule.header.trim().to_ascii_lowercase(), rule.category))
            .collect();
        if entries.is_empty() {
            return HeaderMatcher {
                regex: None,
                entries,
            };
        }
        // Longest phrase first so overlapping entries resolve to the most
        // specific one under the regex engine's first-match alternation.
        let mut phrases: Vec<&str> = entries.iter().map(|(h, _)| h.as_str()).collect();
        phrases.sort_by_key(|h| std::cmp::Reverse(h.len()));
        phrases.dedup();
        let alternation = phrases
            .iter()
            .map(|h| regex::escape(h))
            .collect::<Vec<_>>()
            .join("|");
        let pattern = format!(r"(?i)\b({alternation})s?\s*:");
        let regex = Regex::new(&pattern).expect("escaped header literals always compile");
        HeaderMatcher {
            regex: Some(regex),
            entries,
        }
    }

    fn category_of(&self, captured: &str) -> Option<Category> {
        let lowered = captured.to_ascii_lowercase();
        self.entries
            .iter()
            .find(|(header, _)| *header == lowered)
            .map(|(_, category)| *category)
    }
}

/// Splits cleaned report text into the three segmented categories. Text
/// before the first recognized header, and all text when no header appears,
/// lands in findings. Each category keeps its sentences in reading order
/// with exact duplicates removed (first occurrence wins). The pancreas
/// category is left empty; see [`extract_pancreas_sentences`].
pub fn segment_sections(doc: &ReportDocument, config: &ReportsConfig) -> SectionedReport {
    let matcher = HeaderMatcher::build(config);
    segment_with(doc, config, &matcher)
}

fn segment_with(
    doc: &ReportDocument,
    config: &ReportsConfig,
    matcher: &HeaderMatcher,
) -> SectionedReport {
    let text = doc.raw_text.as_str();
    let mut sectioned = SectionedReport::empty(doc.report_id.clone(), doc.sample_id.clone());

    let mut segments: Vec<(Category, &str)> = Vec::new();
    match &matcher.regex {
        Some(regex) => {
            let captures: Vec<(usize, usize, Category)> = regex
                .captures_iter(text)
                .filter_map(|cap| {
                    let all = cap.get(0).expect("match always has a full span");
                    let name = cap.get(1).expect("header group is not optional");
                    matcher
                        .category_of(name.as_str())
                        .map(|category| (all.start(), all.end(), category))
                })
                .collect();
            let first_start = captures.first().map_or(text.len(), |(s, _, _)| *s);
            segments.push((Category::Findings, &text[..first_start]));
            for (i, (_, end, category)) in captures.iter().enumerate() {
                let next_start = captures.get(i + 1).map_or(text.len(), |(s, _, _)| *s);
                segments.push((*category, &text[*end..next_start]));
            }
        }
        None => segments.push((Category::Findings, text)),
    }

    for (category, segment) in segments {
        for sentence in split_sentences(segment, &config.abbreviations) {
            sectioned.sections[category.index()].push(sentence);
        }
    }
    for category in Category::SEGMENTED {
        let deduped =
            dedup_preserving_first(std::mem::take(&mut sectioned.sections[category.index()]));
        sectioned.set(category, deduped);
    }
    sectioned
}

/// Splits text into sentences at periods and semicolons. A period between
/// two digits (a decimal point) or closing a configured abbreviation does
/// not end a sentence. Each sentence keeps its terminal punctuation and is
/// trimmed of surrounding whitespace; trailing text without punctuation
/// becomes a final sentence.
fn split_sentences(text: &str, abbreviations: &[String]) -> Vec<String> {
    let lowered_abbrevs: Vec<String> = abbreviations
        .iter()
        .map(|a| a.to_ascii_lowercase())
        .collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    for (i, ch) in text.char_indices() {
        if ch != '.' && ch != ';' {
            continue;
        }
        let end = i + 1;
        if ch == '.' {
            let prev_digit = text[..i]
                .chars()
                .next_back()
                .is_some_and(|c| c.is_ascii_digit());
            let next_digit = text[end..]
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_digit());
            if prev_digit && next_digit {
                continue;
            }
            let token = text[start..end]
                .split_whitespace()
                .next_back()
                .unwrap_or("")
                .to_ascii_lowercase();
            if !token.is_empty()
                && lowered_abbrevs
                    .iter()
                    .any(|abbrev| *abbrev == token || abbrev.starts_with(&token))
            {
                continue;
            }
        }
        let sentence = text[start..end].trim();
        if !sentence.is_empty() {
            sentences.push(sentence.to_string());
        }
        start = end;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

fn dedup_preserving_first(sentences: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    sentences
        .into_iter()
        .filter(|s| seen.insert(s.clone()))
        .collect()
}

/// Rebuilds the pancreas category: every sentence from the three segmented
/// categories whose lowercase form contains a configured stem is copied in,
/// in category order, with cross-category duplicates kept once. The source
/// sections are untouched.
pub fn extract_pancreas_sentences(
    sectioned: &SectionedReport,
    config: &ReportsConfig,
) -> SectionedReport {
    let mut out = sectioned.clone();
    let mut matched: Vec<String> = Vec::new();
    for category in Category::SEGMENTED {
        for sentence in sectioned.sentences(category) {
            let lowered = sentence.to_ascii_lowercase();
            if config
                .pancreas_stems
                .iter()
                .any(|stem| !stem.is_empty() && lowered.contains(&stem.to_ascii_lowercase()))
            {
                matched.push(sentence.clone());
            }
        }
    }
    out.set(Category::Pancreas, dedup_preserving_first(matched));
    out.placeholder_flags[Category::Pancreas.index()] = false;
    out
}

/// Fills every empty category with its fixed placeholder sentence and marks
/// the placeholder flag. Non-empty categories pass through unchanged, so the
/// result never has an empty category.
pub fn apply_placeholders(sectioned: &SectionedReport) -> SectionedReport {
    let mut out = sectioned.clone();
    for category in Category::ALL {
        if out.sentences(category).is_empty() {
            out.set(category, vec![category.placeholder().to_string()]);
            out.placeholder_flags[category.index()] = true;
        }
    }
    out
}

/// Runs the full chain for one document: clean, segment, extract pancreas
/// sentences, fill placeholders. Errs only on an invalid configuration.
pub fn process_report(
    doc: &ReportDocument,
    config: &ReportsConfig,
) -> Result<SectionedReport, ReportsError> {
    let signatures = compile_signatures(config)?;
    let matcher = HeaderMatcher::build(config);
    Ok(process_with(doc, config, &signatures, &matcher))
}

fn process_with(
    doc: &ReportDocument,
    config: &ReportsConfig,
    signatures: &[Regex],
    matcher: &HeaderMatcher,
) -> SectionedReport {
    let cleaned = ReportDocument {
        report_id: doc.report_id.clone(),
        sample_id: doc.sample_id.clone(),
        raw_text: clean_with(&doc.raw_text, signatures),
    };
    let sectioned = segment_with(&cleaned, config, matcher);
    let sectioned = extract_pancreas_sentences(&sectioned, config);
    apply_placeholders(&sectioned)
}

/// Processes every document through the full chain. Documents are handled
/// independently, so the batch runs in parallel with output order matching
/// input order.
pub fn process_corpus(
    docs: &[ReportDocument],
    config: &ReportsConfig,
) -> Result<Vec<SectionedReport>, ReportsError> {
    let signatures = compile_signatures(config)?;
    let matcher = HeaderMatcher::build(config);
    Ok(parallel::map_indexed(docs.len(), |i| {
        process_with(&docs[i], config, &signatures, &matcher)
    }))
}

/// Writes one JSONL record per report containing `report_id`, `sample_id`,
/// and the requested categories as sentence arrays, in canonical category
/// order regardless of how `categories` is ordered. The write is atomic and
/// byte-stable across repeated calls with equal inputs.
pub fn export_sentence_bundles(
    reports: &[SectionedReport],
    categories: &[Category],
    path: &Path,
) -> Result<(), ReportsError> {
    if categories.is_empty() {
        return Err(ReportsError::NoCategories);
    }
    let wanted: Vec<Category> = Category::ALL
        .into_iter()
        .filter(|c| categories.contains(c))
        .collect();
    let mut buf = Vec::new();
    for report in reports {
        let mut record = serde_json::Map::new();
        record.insert(
            "report_id".to_string(),
            serde_json::Value::String(report.report_id.clone()),
        );
        record.insert(
            "sample_id".to_string(),
            serde_json::Value::String(report.sample_id.clone()),
        );
        for category in &wanted {
            let sentences = report
                .sentences(*category)
                .iter()
                .map(|s| serde_json::Value::String(s.clone()))
                .collect();
            record.insert(
                category.name().to_string(),
                serde_json::Value::Array(sentences),
            );
        }
        serde_json::to_writer(&mut buf, &serde_json::Value::Object(record))?;
        buf.push(b'\n');
    }
    fsio::write_atomic(path, &buf)?;
    Ok(())
}

/// Loads documents from a CSV file with `report_id`, `sample_id`, and `text`
/// columns (any column order, extra columns ignored).
pub fn load_reports_csv(path: &Path) -> Result<Vec<ReportDocument>, ReportsError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &'static str| -> Result<usize, ReportsError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(ReportsError::MissingColumn(name))
    };
    let report_col = col("report_id")?;
    let sample_col = col("sample_id")?;
    let text_col = col("text")?;
    let mut docs = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |idx: usize| record.get(idx).unwrap_or("").to_string();
        docs.push(ReportDocument::new(
            field(report_col),
            field(sample_col),
            field(text_col),
        )?);
    }
    Ok(docs)
}

/// Loads documents from a JSONL file of `{report_id, sample_id, text}`
/// records; blank lines are skipped.
pub fn load_reports_jsonl(path: &Path) -> Result<Vec<ReportDocument>, ReportsError> {
    let content = std::fs::read_to_string(path)?;
    let mut docs = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: ReportDocument =
            serde_json::from_str(line).map_err(|source| ReportsError::JsonLine {
                line: idx + 1,
                source,
            })?;
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}
