//! Reading, validating and joining annotation, prediction and vocabulary
//! files. Record formats are documented in `FORMATS.md` at the repository
//! root.
//!
//! Lenient mode skips malformed lines and counts them; strict mode fails on
//! the first one with its line number.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    prediction_entropy, AnnotationRecord, AnswerDistribution, AnswerVocabulary, EntropyFeature,
    ModelError, Payload, PredictionRecord,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: file not found", .0.display())]
    FileNotFound(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {reason}", path.display())]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{}:{line}: distribution payload needs a vocabulary", path.display())]
    VocabularyRequired { path: PathBuf, line: usize },
    #[error("{}: {source}", path.display())]
    Vocabulary {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("role {0} is not resolved to exactly one model")]
    RoleUnresolved(Role),
    #[error("model {model_id:?} is registered twice")]
    DuplicateModel { model_id: String },
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            IngestError::FileNotFound(path.to_path_buf())
        } else {
            IngestError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

/// Counters for everything dropped or missing during ingestion and joining.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warnings {
    pub skipped_malformed: usize,
    pub duplicate_record: usize,
    /// Prediction whose question has no annotation.
    pub orphan_prediction: usize,
    /// Question lacking a prediction needed by a feature or histogram.
    pub missing_prediction: usize,
    /// Assigned question without a usable annotation.
    pub missing_annotation: usize,
}

impl Warnings {
    pub fn merge(&mut self, other: &Warnings) {
        self.skipped_malformed += other.skipped_malformed;
        self.duplicate_record += other.duplicate_record;
        self.orphan_prediction += other.orphan_prediction;
        self.missing_prediction += other.missing_prediction;
        self.missing_annotation += other.missing_annotation;
    }

    pub fn total(&self) -> usize {
        self.skipped_malformed
            + self.duplicate_record
            + self.orphan_prediction
            + self.missing_prediction
            + self.missing_annotation
    }
}

impl fmt::Display for Warnings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "skipped_malformed={} duplicate_record={} orphan_prediction={} missing_prediction={} missing_annotation={}",
            self.skipped_malformed,
            self.duplicate_record,
            self.orphan_prediction,
            self.missing_prediction,
            self.missing_annotation
        )
    }
}

/// Records accepted from one file plus the bookkeeping needed to account for
/// every line.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub lines: usize,
    pub warnings: Warnings,
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| IngestError::io(path, e))
}

enum LineOutcome<T> {
    Accept(T),
    Duplicate,
}

fn read_lines<T>(
    path: &Path,
    strict: bool,
    mut parse: impl FnMut(usize, &str) -> Result<LineOutcome<T>, IngestError>,
) -> Result<Loaded<T>, IngestError> {
    let reader = open(path)?;
    let mut out = Loaded {
        records: Vec::new(),
        lines: 0,
        warnings: Warnings::default(),
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        let lineno = i + 1;
        out.lines += 1;
        match parse(lineno, &line) {
            Ok(LineOutcome::Accept(r)) => out.records.push(r),
            Ok(LineOutcome::Duplicate) => {
                if strict {
                    return Err(IngestError::MalformedRecord {
                        path: path.to_path_buf(),
                        line: lineno,
                        reason: "duplicate record".into(),
                    });
                }
                out.warnings.duplicate_record += 1;
            }
            Err(IngestError::MalformedRecord { .. }) if !strict => {
                out.warnings.skipped_malformed += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedRecord {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Reads a line-delimited annotation file. Duplicate question ids keep the
/// first occurrence.
pub fn load_annotations(
    path: &Path,
    strict: bool,
) -> Result<Loaded<AnnotationRecord>, IngestError> {
    let mut seen = BTreeSet::new();
    read_lines(path, strict, |line, text| {
        let record: AnnotationRecord =
            serde_json::from_str(text).map_err(|e| malformed(path, line, e.to_string()))?;
        record
            .validate()
            .map_err(|e| malformed(path, line, e.to_string()))?;
        if seen.insert(record.question_id) {
            Ok(LineOutcome::Accept(record))
        } else {
            Ok(LineOutcome::Duplicate)
        }
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionLine {
    question_id: u64,
    model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distribution: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    top_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    top_prob: Option<f64>,
}

impl From<&PredictionRecord> for PredictionLine {
    fn from(r: &PredictionRecord) -> Self {
        let mut line = PredictionLine {
            question_id: r.question_id,
            model_id: r.model_id.clone(),
            distribution: None,
            entropy: None,
            top_answer: None,
            top_prob: None,
        };
        match &r.payload {
            Payload::Distribution(d) => line.distribution = Some(d.probs().to_vec()),
            Payload::Summary {
                entropy,
                top_answer,
                top_prob,
            } => {
                line.entropy = Some(*entropy);
                line.top_answer = Some(top_answer.clone());
                line.top_prob = Some(*top_prob);
            }
        }
        line
    }
}

fn parse_prediction(
    path: &Path,
    line: usize,
    text: &str,
    vocab: Option<&AnswerVocabulary>,
) -> Result<PredictionRecord, IngestError> {
    let raw: PredictionLine =
        serde_json::from_str(text).map_err(|e| malformed(path, line, e.to_string()))?;
    let summary_fields = [
        raw.entropy.is_some(),
        raw.top_answer.is_some(),
        raw.top_prob.is_some(),
    ];
    let payload = match (raw.distribution, summary_fields) {
        (Some(probs), [false, false, false]) => {
            let vocab = vocab.ok_or(IngestError::VocabularyRequired {
                path: path.to_path_buf(),
                line,
            })?;
            if probs.len() != vocab.len() {
                return Err(malformed(
                    path,
                    line,
                    format!(
                        "distribution has {} entries, vocabulary has {}",
                        probs.len(),
                        vocab.len()
                    ),
                ));
            }
            Payload::Distribution(
                AnswerDistribution::new(probs).map_err(|e| malformed(path, line, e.to_string()))?,
            )
        }
        (None, [true, true, true]) => {
            let entropy = raw.entropy.unwrap_or_default();
            let top_prob = raw.top_prob.unwrap_or_default();
            if !entropy.is_finite() || entropy < 0.0 {
                return Err(malformed(path, line, format!("invalid entropy {entropy}")));
            }
            if let Some(v) = vocab {
                let max = (v.len() as f64).ln();
                if entropy > max + 1e-9 {
                    return Err(malformed(
                        path,
                        line,
                        format!("entropy {entropy} exceeds ln({}) = {max}", v.len()),
                    ));
                }
            }
            if !(top_prob > 0.0 && top_prob <= 1.0) {
                return Err(malformed(
                    path,
                    line,
                    format!("top_prob {top_prob} outside (0, 1]"),
                ));
            }
            Payload::Summary {
                entropy,
                top_answer: raw.top_answer.unwrap_or_default(),
                top_prob,
            }
        }
        (Some(_), _) => {
            return Err(malformed(
                path,
                line,
                "both distribution and summary fields present",
            ))
        }
        (None, _) => {
            return Err(malformed(
                path,
                line,
                "expected either distribution or entropy, top_answer and top_prob",
            ))
        }
    };
    Ok(PredictionRecord {
        question_id: raw.question_id,
        model_id: raw.model_id,
        payload,
    })
}

/// Reads one model's prediction file. With `model_id` given every row must
/// carry that id; otherwise the first row fixes it.
pub fn load_predictions(
    path: &Path,
    model_id: Option<&str>,
    vocab: Option<&AnswerVocabulary>,
    strict: bool,
) -> Result<Loaded<PredictionRecord>, IngestError> {
    let mut expected = model_id.map(str::to_string);
    let mut seen = BTreeSet::new();
    read_lines(path, strict, |line, text| {
        let record = parse_prediction(path, line, text, vocab)?;
        match &expected {
            Some(id) if *id != record.model_id => {
                return Err(malformed(
                    path,
                    line,
                    format!("model_id {:?}, expected {:?}", record.model_id, id),
                ))
            }
            Some(_) => {}
            None => expected = Some(record.model_id.clone()),
        }
        if seen.insert(record.question_id) {
            Ok(LineOutcome::Accept(record))
        } else {
            Ok(LineOutcome::Duplicate)
        }
    })
}

/// One answer per line, line order is vocabulary index order.
pub fn load_vocabulary(path: &Path) -> Result<AnswerVocabulary, IngestError> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| IngestError::io(path, e))?;
    let answers = text.lines().map(str::to_string).collect();
    AnswerVocabulary::new(answers).map_err(|source| IngestError::Vocabulary {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, IngestError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| IngestError::io(path, e))
}

pub fn write_annotations<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
) -> Result<(), IngestError> {
    let mut w = create(path)?;
    for r in records {
        let line = serde_json::to_string(r).expect("annotation serializes");
        writeln!(w, "{line}").map_err(|e| IngestError::io(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

pub fn write_predictions<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a PredictionRecord>,
) -> Result<(), IngestError> {
    let mut w = create(path)?;
    for r in records {
        let line = serde_json::to_string(&PredictionLine::from(r)).expect("prediction serializes");
        writeln!(w, "{line}").map_err(|e| IngestError::io(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

pub fn write_vocabulary(path: &Path, vocab: &AnswerVocabulary) -> Result<(), IngestError> {
    let mut w = create(path)?;
    for a in vocab.answers() {
        writeln!(w, "{a}").map_err(|e| IngestError::io(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

/// Per-question auxiliary scores from a `question_id,score` CSV with header.
pub fn load_aux_scores(path: &Path) -> Result<BTreeMap<u64, f64>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut scores = BTreeMap::new();
    let mut header_seen = false;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            malformed(path, line, e.to_string())
        })?;
        let lineno = record.position().map_or(0, |p| p.line() as usize);
        if !header_seen {
            if record.iter().ne(["question_id", "score"]) {
                return Err(malformed(path, lineno, "expected header question_id,score"));
            }
            header_seen = true;
            continue;
        }
        if record.len() != 2 {
            return Err(malformed(path, lineno, "expected two columns"));
        }
        let id: u64 = record[0]
            .parse()
            .map_err(|_| malformed(path, lineno, format!("bad question_id {:?}", &record[0])))?;
        let score: f64 = record[1]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| malformed(path, lineno, format!("bad score {:?}", &record[1])))?;
        if scores.insert(id, score).is_some() {
            return Err(malformed(
                path,
                lineno,
                format!("duplicate question_id {id}"),
            ));
        }
    }
    if !header_seen {
        return Err(malformed(path, 1, "expected header question_id,score"));
    }
    Ok(scores)
}

/// SHA-256 of a file's bytes, lowercase hex.
pub fn file_digest(path: &Path) -> Result<String, IngestError> {
    let mut reader = open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader
            .read(&mut buf)
            .map_err(|e| IngestError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    I,
    Q,
    QI,
    Evaluated,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::I => "I",
            Role::Q => "Q",
            Role::QI => "QI",
            Role::Evaluated => "evaluated",
        })
    }
}

/// Which model plays which part in a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub roles: BTreeMap<String, Role>,
}

impl RunConfig {
    pub fn set(&mut self, model_id: impl Into<String>, role: Role) {
        self.roles.insert(model_id.into(), role);
    }

    /// The single model id for a base role.
    pub fn resolve(&self, role: Role) -> Result<&str, IngestError> {
        let mut ids = self
            .roles
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(id, _)| id);
        match (ids.next(), ids.next()) {
            (Some(id), None) => Ok(id),
            _ => Err(IngestError::RoleUnresolved(role)),
        }
    }

    pub fn evaluated(&self) -> Vec<&str> {
        self.roles
            .iter()
            .filter(|(_, r)| **r == Role::Evaluated)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Immutable snapshot of everything ingested for a run.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// `None` for annotation-free flows such as test-split assignment.
    pub annotations: Option<BTreeMap<u64, AnnotationRecord>>,
    /// model id → question id → prediction.
    pub predictions: BTreeMap<String, BTreeMap<u64, PredictionRecord>>,
    pub vocab: Option<AnswerVocabulary>,
    pub warnings: Warnings,
}

impl Dataset {
    pub fn new(
        annotations: Option<Loaded<AnnotationRecord>>,
        vocab: Option<AnswerVocabulary>,
    ) -> Self {
        let mut warnings = Warnings::default();
        let annotations = annotations.map(|loaded| {
            warnings.merge(&loaded.warnings);
            loaded
                .records
                .into_iter()
                .map(|r| (r.question_id, r))
                .collect()
        });
        Self {
            annotations,
            predictions: BTreeMap::new(),
            vocab,
            warnings,
        }
    }

    /// Adds one model's predictions. When annotations are loaded, predictions
    /// for unannotated questions are dropped and counted.
    pub fn add_predictions(
        &mut self,
        model_id: &str,
        loaded: Loaded<PredictionRecord>,
    ) -> Result<(), IngestError> {
        if self.predictions.contains_key(model_id) {
            return Err(IngestError::DuplicateModel {
                model_id: model_id.to_string(),
            });
        }
        self.warnings.merge(&loaded.warnings);
        let mut by_question = BTreeMap::new();
        for r in loaded.records {
            if let Some(ann) = &self.annotations {
                if !ann.contains_key(&r.question_id) {
                    self.warnings.orphan_prediction += 1;
                    continue;
                }
            }
            if by_question.contains_key(&r.question_id) {
                self.warnings.duplicate_record += 1;
                continue;
            }
            by_question.insert(r.question_id, r);
        }
        self.predictions.insert(model_id.to_string(), by_question);
        Ok(())
    }

    pub fn annotation(&self, question_id: u64) -> Option<&AnnotationRecord> {
        self.annotations.as_ref()?.get(&question_id)
    }

    pub fn prediction(&self, model_id: &str, question_id: u64) -> Option<&PredictionRecord> {
        self.predictions.get(model_id)?.get(&question_id)
    }

    pub fn top_answer(&self, model_id: &str, question_id: u64) -> Option<&str> {
        self.prediction(model_id, question_id)?
            .top_answer(self.vocab.as_ref())
    }

    pub fn entropy(&self, model_id: &str, question_id: u64) -> Option<f64> {
        self.prediction(model_id, question_id)
            .map(prediction_entropy)
    }
}

/// Per-question clustering features in question-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Vec<(u64, EntropyFeature)>,
    /// Questions dropped because a base-model prediction was missing.
    pub missing_prediction: usize,
}

/// Builds (H_I, H_Q, H_QI) for every question that has all three base
/// predictions. Questions seen in annotations or any base model but missing
/// one of them are dropped and counted.
pub fn build_features(dataset: &Dataset, roles: &RunConfig) -> Result<FeatureSet, IngestError> {
    let ids = [
        roles.resolve(Role::I)?,
        roles.resolve(Role::Q)?,
        roles.resolve(Role::QI)?,
    ];
    let mut universe: BTreeSet<u64> = BTreeSet::new();
    if let Some(ann) = &dataset.annotations {
        universe.extend(ann.keys().copied());
    }
    for id in ids {
        if let Some(p) = dataset.predictions.get(id) {
            universe.extend(p.keys().copied());
        }
    }
    let mut features = Vec::with_capacity(universe.len());
    let mut missing = 0;
    for q in universe {
        let h: Vec<Option<f64>> = ids.iter().map(|id| dataset.entropy(id, q)).collect();
        match (h[0], h[1], h[2]) {
            (Some(i), Some(qq), Some(qi)) => {
                let f = EntropyFeature::new(i, qq, qi).expect("entropies are validated on load");
                features.push((q, f));
            }
            _ => missing += 1,
        }
    }
    Ok(FeatureSet {
        features,
        missing_prediction: missing,
    })
}

/// One annotated question with whatever evaluated-model answers exist.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinedRow<'a> {
    pub record: &'a AnnotationRecord,
    /// (model id, top answer) for models that predicted this question.
    pub answers: Vec<(String, String)>,
}

/// Annotated questions carrying ground-truth answers, in question-id order.
/// Test-split records without answers are never yielded.
pub fn join_for_evaluation<'a>(dataset: &'a Dataset, models: &[&str]) -> Vec<JoinedRow<'a>> {
    let Some(ann) = &dataset.annotations else {
        return Vec::new();
    };
    ann.values()
        .filter(|r| r.has_answers())
        .map(|record| JoinedRow {
            record,
            answers: models
                .iter()
                .filter_map(|m| {
                    dataset
                        .top_answer(m, record.question_id)
                        .map(|a| (m.to_string(), a.to_string()))
                })
                .collect(),
        })
        .collect()
}
