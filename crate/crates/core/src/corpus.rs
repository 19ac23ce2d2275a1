//! Annotation data model: record ingestion, rating normalization,
//! feedback-based filtering, and model-input assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

/// Separator inserted between the five input slots (question, reference,
/// rationale, transcript, candidate).
pub const DEFAULT_SEPARATOR: &str = "\n###\n";

/// Boundary clip for normalized ratings: raw 1 and 5 map to exactly 0 and 1,
/// where the Beta log-density is −∞ for α,β > 1; clipping keeps the
/// likelihood finite while preserving ordering.
pub const RATING_EPS: f64 = 0.001;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate instance_id `{0}`")]
    DuplicateInstance(String),
    #[error("duplicate (question_id, lalm_id) pair (`{0}`, `{1}`)")]
    DuplicatePair(String, String),
    #[error("annotation references unknown instance_id `{0}`")]
    DanglingInstance(String),
    #[error("rating {0} out of range 1..=5")]
    RatingOutOfRange(i64),
    #[error("rating set for `{0}` is empty")]
    EmptyRatingSet(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Benchmark the question was drawn from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Benchmark {
    Mmau,
    Mmar,
    Other(String),
}

impl From<String> for Benchmark {
    fn from(s: String) -> Self {
        match s.as_str() {
            "MMAU" => Benchmark::Mmau,
            "MMAR" => Benchmark::Mmar,
            _ => Benchmark::Other(s),
        }
    }
}

impl From<Benchmark> for String {
    fn from(b: Benchmark) -> String {
        match b {
            Benchmark::Mmau => "MMAU".into(),
            Benchmark::Mmar => "MMAR".into(),
            Benchmark::Other(tag) => tag,
        }
    }
}

/// Audio modality of the underlying clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Speech,
    Sound,
    Music,
    Mixed,
}

/// One (question, candidate-answer) pair with the text fields the model
/// consumes and the identity metadata splitting relies on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub instance_id: String,
    pub question_id: String,
    pub benchmark: Benchmark,
    pub modality: Modality,
    pub category: String,
    pub lalm_id: String,
    pub question: String,
    pub reference_answer: String,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub transcript: String,
    pub candidate_answer: String,
}

/// Who produced a rating.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Source {
    Human,
    Judge(String),
}

impl TryFrom<String> for Source {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s == "human" {
            return Ok(Source::Human);
        }
        if let Some(id) = s.strip_prefix("judge:") {
            if id.is_empty() {
                return Err("judge source needs an id after `judge:`".into());
            }
            return Ok(Source::Judge(id.to_string()));
        }
        Err(format!("source must be `human` or `judge:<id>`, got `{s}`"))
    }
}

impl From<Source> for String {
    fn from(s: Source) -> String {
        match s {
            Source::Human => "human".into(),
            Source::Judge(id) => format!("judge:{id}"),
        }
    }
}

/// Annotator feedback codes: incomplete question (Q), incorrect reference
/// answer (A), bad rationale (R), unable to judge (U), technical error (E).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeedbackCode {
    Q,
    A,
    R,
    U,
    E,
}

/// One rater's judgment of one instance: a 1–5 rating, feedback codes, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub instance_id: String,
    pub rater_id: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub feedback: BTreeSet<FeedbackCode>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub comment: String,
}

/// The multiset of ratings attached to one instance, raw and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingSet {
    pub instance_id: String,
    pub raw_ratings: Vec<u8>,
    pub normalized: Vec<f64>,
}

impl RatingSet {
    pub fn from_raw(instance_id: impl Into<String>, raw_ratings: Vec<u8>) -> Result<Self, CorpusError> {
        let instance_id = instance_id.into();
        if raw_ratings.is_empty() {
            return Err(CorpusError::EmptyRatingSet(instance_id));
        }
        let normalized = raw_ratings
            .iter()
            .map(|&r| normalize_rating(r))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { instance_id, raw_ratings, normalized })
    }
}

/// Which instances survive annotator feedback.
///
/// `exclude_codes` removes whole instances (and, with `question_level`, every
/// sibling instance of the same question). `drop_codes` removes only the
/// flagged rater's rating, keeping the instance; this is how
/// unable-to-judge (U) and technical-error (E) reports are handled by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub exclude_codes: BTreeSet<FeedbackCode>,
    pub question_level: bool,
    pub min_ratings: usize,
    pub drop_codes: BTreeSet<FeedbackCode>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            exclude_codes: BTreeSet::from([FeedbackCode::Q, FeedbackCode::R, FeedbackCode::A]),
            question_level: true,
            min_ratings: 1,
            drop_codes: BTreeSet::from([FeedbackCode::U, FeedbackCode::E]),
        }
    }
}

/// A malformed line, reported without aborting the parse.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    pub warnings: Vec<String>,
    pub line_errors: Vec<LineError>,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCorpus {
    pub instances: Vec<EvalInstance>,
    pub annotations: Vec<AnnotationRecord>,
    pub report: ParseReport,
}

const INSTANCE_KEYS: [&str; 11] = [
    "instance_id",
    "question_id",
    "benchmark",
    "modality",
    "category",
    "lalm_id",
    "question",
    "reference_answer",
    "rationale",
    "transcript",
    "candidate_answer",
];

const ANNOTATION_KEYS: [&str; 6] =
    ["instance_id", "rater_id", "source", "rating", "feedback", "comment"];

/// Parses a line-delimited stream of instance and annotation objects (either
/// kind may appear; annotation lines are recognized by their `rater_id` key).
///
/// Malformed lines are collected as per-line errors and skipped; unknown keys
/// are ignored with a warning. Duplicate `instance_id` or (question_id,
/// lalm_id) pairs abort with a corpus error. Order is preserved.
pub fn parse_records(reader: impl BufRead) -> Result<ParsedCorpus, CorpusError> {
    let mut out = ParsedCorpus::default();
    let mut seen_ids = BTreeSet::new();
    let mut seen_pairs = BTreeSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                out.report.line_errors.push(LineError { line: lineno, message: format!("invalid record: {e}") });
                continue;
            }
        };
        let Some(obj) = value.as_object() else {
            out.report
                .line_errors
                .push(LineError { line: lineno, message: "record is not an object".into() });
            continue;
        };

        // A lone "provenance" object is file metadata, not a record.
        if obj.len() == 1 && obj.contains_key("provenance") {
            continue;
        }

        let is_annotation = obj.contains_key("rater_id");
        let known: &[&str] = if is_annotation { &ANNOTATION_KEYS } else { &INSTANCE_KEYS };
        for key in obj.keys() {
            if !known.contains(&key.as_str()) {
                out.report.warnings.push(format!("line {lineno}: unknown key `{key}` ignored"));
            }
        }

        if is_annotation {
            match parse_annotation(&value) {
                Ok(rec) => out.annotations.push(rec),
                Err(message) => out.report.line_errors.push(LineError { line: lineno, message }),
            }
        } else {
            match parse_instance(&value) {
                Ok(inst) => {
                    if !seen_ids.insert(inst.instance_id.clone()) {
                        return Err(CorpusError::DuplicateInstance(inst.instance_id));
                    }
                    let pair = (inst.question_id.clone(), inst.lalm_id.clone());
                    if !seen_pairs.insert(pair.clone()) {
                        return Err(CorpusError::DuplicatePair(pair.0, pair.1));
                    }
                    out.instances.push(inst);
                }
                Err(message) => out.report.line_errors.push(LineError { line: lineno, message }),
            }
        }
    }
    Ok(out)
}

fn parse_instance(value: &serde_json::Value) -> Result<EvalInstance, String> {
    let inst: EvalInstance = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
    for (field, text) in [
        ("question", &inst.question),
        ("reference_answer", &inst.reference_answer),
        ("candidate_answer", &inst.candidate_answer),
    ] {
        if text.is_empty() {
            return Err(format!("required field `{field}` is empty"));
        }
    }
    Ok(inst)
}

fn parse_annotation(value: &serde_json::Value) -> Result<AnnotationRecord, String> {
    if let Some(r) = value.get("rating") {
        // Validate before typed deserialization so out-of-range integers get a
        // domain message rather than a u8 conversion error.
        let r = r.as_i64().ok_or("rating must be an integer")?;
        if !(1..=5).contains(&r) {
            return Err(format!("rating {r} out of range 1..=5"));
        }
    }
    let rec: AnnotationRecord = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
    if rec.rating.is_none() && rec.feedback.is_empty() {
        return Err("record carries neither a rating nor feedback".into());
    }
    Ok(rec)
}

/// Serializes instances and annotations back to the line format
/// `parse_records` reads. Inverse of parsing for well-formed corpora.
pub fn write_records(
    instances: &[EvalInstance],
    annotations: &[AnnotationRecord],
    mut writer: impl std::io::Write,
) -> Result<(), CorpusError> {
    for inst in instances {
        serde_json::to_writer(&mut writer, inst).map_err(std::io::Error::from)?;
        writeln!(writer)?;
    }
    for rec in annotations {
        serde_json::to_writer(&mut writer, rec).map_err(std::io::Error::from)?;
        writeln!(writer)?;
    }
    Ok(())
}

/// Maps a raw 1–5 rating to (raw−1)/4 clipped to [0.001, 0.999].
pub fn normalize_rating(raw: u8) -> Result<f64, CorpusError> {
    if !(1..=5).contains(&raw) {
        return Err(CorpusError::RatingOutOfRange(raw as i64));
    }
    let y = (raw as f64 - 1.0) / 4.0;
    Ok(y.clamp(RATING_EPS, 1.0 - RATING_EPS))
}

/// Mean and unbiased sample variance on the raw 1–5 scale. Variance is absent
/// for a single rating.
pub fn rating_stats(rs: &RatingSet) -> Result<(f64, Option<f64>), CorpusError> {
    raw_stats(&rs.instance_id, rs.raw_ratings.iter().map(|&r| r as f64))
}

/// Mean and unbiased sample variance of the normalized ratings.
pub fn rating_stats_normalized(rs: &RatingSet) -> Result<(f64, Option<f64>), CorpusError> {
    raw_stats(&rs.instance_id, rs.normalized.iter().copied())
}

fn raw_stats(
    id: &str,
    values: impl Iterator<Item = f64> + Clone,
) -> Result<(f64, Option<f64>), CorpusError> {
    let n = values.clone().count();
    if n == 0 {
        return Err(CorpusError::EmptyRatingSet(id.to_string()));
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return Ok((mean, None));
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, Some(ss / (n - 1) as f64)))
}

/// Builds per-instance rating sets from annotation records. Feedback-only
/// records carry no rating and never enter a set; records flagged with a
/// `drop_codes` code contribute no rating either.
pub fn collect_rating_sets(
    records: &[AnnotationRecord],
    policy: &FilterPolicy,
) -> BTreeMap<String, RatingSet> {
    let mut raw: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for rec in records {
        let Some(r) = rec.rating else { continue };
        if rec.feedback.intersection(&policy.drop_codes).next().is_some() {
            continue;
        }
        raw.entry(rec.instance_id.clone()).or_default().push(r);
    }
    raw.into_iter()
        .map(|(id, ratings)| {
            let rs = RatingSet::from_raw(id.clone(), ratings).expect("nonempty by construction");
            (id, rs)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterReport {
    /// How many records carry each feedback code.
    pub code_counts: BTreeMap<FeedbackCode, usize>,
    pub excluded_by_flag: usize,
    pub excluded_by_propagation: usize,
    pub excluded_by_min_ratings: usize,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub valid: BTreeSet<String>,
    pub excluded: BTreeSet<String>,
    pub report: FilterReport,
}

/// Partitions instance ids into valid and excluded under `policy`.
///
/// An instance is excluded iff any of its records carries an
/// `exclude_codes` code, or (`question_level`) a sibling instance of the same
/// question is so flagged, or its surviving rating count is below
/// `min_ratings`. Every record must reference a known instance.
pub fn filter_flagged(
    records: &[AnnotationRecord],
    instances: &[EvalInstance],
    policy: &FilterPolicy,
) -> Result<FilterOutcome, CorpusError> {
    let by_id: BTreeMap<&str, &EvalInstance> =
        instances.iter().map(|i| (i.instance_id.as_str(), i)).collect();
    for rec in records {
        if !by_id.contains_key(rec.instance_id.as_str()) {
            return Err(CorpusError::DanglingInstance(rec.instance_id.clone()));
        }
    }

    let mut report = FilterReport::default();
    for rec in records {
        for code in &rec.feedback {
            *report.code_counts.entry(*code).or_insert(0) += 1;
        }
    }

    let mut flagged: BTreeSet<String> = BTreeSet::new();
    for rec in records {
        if rec.feedback.intersection(&policy.exclude_codes).next().is_some() {
            flagged.insert(rec.instance_id.clone());
        }
    }
    report.excluded_by_flag = flagged.len();

    let mut excluded = flagged.clone();
    if policy.question_level {
        let flagged_questions: BTreeSet<&str> =
            flagged.iter().map(|id| by_id[id.as_str()].question_id.as_str()).collect();
        for inst in instances {
            if flagged_questions.contains(inst.question_id.as_str())
                && excluded.insert(inst.instance_id.clone())
            {
                report.excluded_by_propagation += 1;
            }
        }
    }

    let rating_sets = collect_rating_sets(records, policy);
    for inst in instances {
        if excluded.contains(&inst.instance_id) {
            continue;
        }
        let count = rating_sets.get(&inst.instance_id).map_or(0, |rs| rs.raw_ratings.len());
        if count < policy.min_ratings {
            excluded.insert(inst.instance_id.clone());
            report.excluded_by_min_ratings += 1;
        }
    }

    let valid = instances
        .iter()
        .map(|i| i.instance_id.clone())
        .filter(|id| !excluded.contains(id))
        .collect();
    Ok(FilterOutcome { valid, excluded, report })
}

/// Concatenates the five input slots (question, reference answer, rationale,
/// transcript, candidate answer) with `sep` between every pair. Disabled or
/// empty fields leave an empty slot, so slot positions never shift.
pub fn assemble_input(
    inst: &EvalInstance,
    sep: &str,
    include_transcript: bool,
    include_question: bool,
    include_rationale: bool,
) -> String {
    let pick = |on: bool, text: &str| if on { text.to_string() } else { String::new() };
    [
        pick(include_question, &inst.question),
        inst.reference_answer.clone(),
        pick(include_rationale, &inst.rationale),
        pick(include_transcript, &inst.transcript),
        inst.candidate_answer.clone(),
    ]
    .join(sep)
}
