//! Per-cluster tables, model summaries, unique-answer statistics, overlap
//! histograms, assignment listings and their CSV encodings.
//!
//! Every CSV is byte-stable for fixed input: fixed column order, four
//! fractional digits, rows by ordered cluster or question id, and `n/a` for
//! empty cells. Accuracies are percentages, entropies nats.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::clustering::{ClusterAssignment, ClusterModel, Level};
use crate::io::{join_for_evaluation, Dataset, IngestError, Role, RunConfig, Warnings};
use crate::metrics::{
    accuracy, agreement_stats, overlap_histogram, unique_answer_count, AccuracyMetric,
    MetricsError, OverlapHistogram, PartitionEntropy,
};
use crate::model::{
    gt_entropy, AnnotationRecord, AnswerType, ModelError, Normalization, ANSWERS_PER_QUESTION,
};
use crate::par;
use crate::stats::MeanStd;

pub const EMPTY_CELL: &str = "n/a";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {reason}", path.display())]
    MalformedAssignments {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("evaluated model id {0:?} collides with a base-model label")]
    ReservedLabel(String),
}

impl From<ModelError> for ReportError {
    fn from(e: ModelError) -> Self {
        ReportError::Metrics(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Base,
    Evaluated,
}

/// A model column: its table label and the dataset model id behind it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelColumn {
    pub label: String,
    pub model_id: String,
    pub section: Section,
}

const BASE_LABELS: [(Role, &str); 3] = [(Role::I, "I"), (Role::Q, "Q"), (Role::QI, "QI")];

/// Base models (when all three roles resolve) then evaluated models in id
/// order.
pub fn model_columns(roles: &RunConfig) -> Result<Vec<ModelColumn>, ReportError> {
    let mut cols = Vec::new();
    let base: Option<Vec<&str>> = BASE_LABELS
        .iter()
        .map(|(r, _)| roles.resolve(*r).ok())
        .collect();
    if let Some(ids) = base {
        for ((_, label), id) in BASE_LABELS.iter().zip(ids) {
            cols.push(ModelColumn {
                label: label.to_string(),
                model_id: id.to_string(),
                section: Section::Base,
            });
        }
    }
    for id in roles.evaluated() {
        if BASE_LABELS.iter().any(|(_, l)| *l == id) || id == "GT" {
            return Err(ReportError::ReservedLabel(id.to_string()));
        }
        cols.push(ModelColumn {
            label: id.to_string(),
            model_id: id.to_string(),
            section: Section::Evaluated,
        });
    }
    Ok(cols)
}

fn type_index(t: AnswerType) -> usize {
    match t {
        AnswerType::YesNo => 0,
        AnswerType::Number => 1,
        AnswerType::Other => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterRow {
    pub cluster: usize,
    pub level: Level,
    pub total: usize,
    /// Aligned with [`ClusterTable::models`].
    pub entropy: Vec<Option<MeanStd>>,
    /// Percent, aligned with [`ClusterTable::models`].
    pub accuracy: Vec<Option<MeanStd>>,
    pub gt_entropy: Option<MeanStd>,
    pub unique_answers: Option<MeanStd>,
    /// yes/no, number, other.
    pub type_counts: [usize; 3],
    pub n_agree: usize,
    pub n_disagree: usize,
    /// Aligned with [`ClusterTable::aux_names`].
    pub aux: Vec<Option<MeanStd>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterTable {
    pub models: Vec<ModelColumn>,
    pub aux_names: Vec<String>,
    pub rows: Vec<ClusterRow>,
    pub warnings: Warnings,
}

impl ClusterTable {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.total).sum()
    }
}

/// Inputs shared by the table builders.
pub struct ReportContext<'a> {
    pub dataset: &'a Dataset,
    pub roles: &'a RunConfig,
    pub metric: AccuracyMetric,
    pub normalization: Normalization,
}

/// Per-question values every table draws from.
struct QuestionStats {
    entropy: Vec<Option<f64>>,
    accuracy: Vec<Option<f64>>,
    gt_entropy: f64,
    unique: usize,
    answer_type: AnswerType,
}

fn question_stats(
    ctx: &ReportContext<'_>,
    models: &[ModelColumn],
    record: &AnnotationRecord,
) -> Result<QuestionStats, ReportError> {
    let q = record.question_id;
    let mut entropy = Vec::with_capacity(models.len());
    let mut acc = Vec::with_capacity(models.len());
    for m in models {
        entropy.push(ctx.dataset.entropy(&m.model_id, q));
        acc.push(match ctx.dataset.top_answer(&m.model_id, q) {
            Some(a) => Some(accuracy(ctx.metric, a, record, ctx.normalization)?.value() * 100.0),
            None => None,
        });
    }
    Ok(QuestionStats {
        entropy,
        accuracy: acc,
        gt_entropy: gt_entropy(record, ctx.normalization)?,
        unique: unique_answer_count(record, ctx.normalization)?,
        answer_type: record.answer_type,
    })
}

fn column<F: Fn(&QuestionStats) -> Option<f64>>(stats: &[&QuestionStats], f: F) -> Option<MeanStd> {
    let v: Vec<f64> = stats.iter().filter_map(|s| f(s)).collect();
    MeanStd::of(&v)
}

/// Builds the per-cluster table over assigned questions that carry
/// ground-truth answers. `aux` holds optional named per-question scores.
pub fn build_cluster_table(
    ctx: &ReportContext<'_>,
    model: &ClusterModel,
    assignments: &[ClusterAssignment],
    aux: &BTreeMap<String, BTreeMap<u64, f64>>,
) -> Result<ClusterTable, ReportError> {
    let models = model_columns(ctx.roles)?;
    let mut warnings = Warnings::default();
    let mut members: Vec<Vec<&AnnotationRecord>> = vec![Vec::new(); model.k];
    let mut sorted: Vec<&ClusterAssignment> = assignments.iter().collect();
    sorted.sort_by_key(|a| a.question_id);
    for a in sorted {
        match ctx
            .dataset
            .annotation(a.question_id)
            .filter(|r| r.has_answers())
        {
            Some(r) => members[a.ordered_cluster].push(r),
            None => warnings.missing_annotation += 1,
        }
    }

    let rows = par::map_range(model.k, |c| -> Result<ClusterRow, ReportError> {
        let stats: Vec<QuestionStats> = members[c]
            .iter()
            .map(|r| question_stats(ctx, &models, r))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&QuestionStats> = stats.iter().collect();
        let mut type_counts = [0usize; 3];
        for s in &stats {
            type_counts[type_index(s.answer_type)] += 1;
        }
        let n_agree = stats.iter().filter(|s| s.unique == 1).count();
        let aux_cols = aux
            .values()
            .map(|scores| {
                let v: Vec<f64> = members[c]
                    .iter()
                    .filter_map(|r| scores.get(&r.question_id).copied())
                    .collect();
                MeanStd::of(&v)
            })
            .collect();
        Ok(ClusterRow {
            cluster: c,
            level: model.levels[c],
            total: stats.len(),
            entropy: (0..models.len())
                .map(|i| column(&refs, |s| s.entropy[i]))
                .collect(),
            accuracy: (0..models.len())
                .map(|i| column(&refs, |s| s.accuracy[i]))
                .collect(),
            gt_entropy: column(&refs, |s| Some(s.gt_entropy)),
            unique_answers: column(&refs, |s| Some(s.unique as f64)),
            type_counts,
            n_agree,
            n_disagree: stats.len() - n_agree,
            aux: aux_cols,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    Ok(ClusterTable {
        models,
        aux_names: aux.keys().cloned().collect(),
        rows,
        warnings,
    })
}

pub const SUMMARY_GROUPS: [&str; 4] = ["overall", "yes/no", "number", "other"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    /// Model label, or `GT` for the ground-truth entropy row.
    pub label: String,
    pub section: &'static str,
    /// Indexed like [`SUMMARY_GROUPS`].
    pub accuracy: [Option<MeanStd>; 4],
    pub entropy: [Option<MeanStd>; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub rows: Vec<SummaryRow>,
}

fn grouped<F: Fn(&QuestionStats) -> Option<f64>>(
    stats: &[QuestionStats],
    f: F,
) -> [Option<MeanStd>; 4] {
    let all: Vec<&QuestionStats> = stats.iter().collect();
    let by = |t: AnswerType| -> Vec<&QuestionStats> {
        stats.iter().filter(|s| s.answer_type == t).collect()
    };
    [
        column(&all, &f),
        column(&by(AnswerType::YesNo), &f),
        column(&by(AnswerType::Number), &f),
        column(&by(AnswerType::Other), &f),
    ]
}

/// Overall and per-answer-type accuracy and entropy of every model over all
/// annotated questions with answers, plus a ground-truth entropy row.
pub fn build_model_summary(ctx: &ReportContext<'_>) -> Result<ModelSummary, ReportError> {
    let models = model_columns(ctx.roles)?;
    let rows = join_for_evaluation(ctx.dataset, &[]);
    let stats: Vec<QuestionStats> = par::map(&rows, |row| question_stats(ctx, &models, row.record))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let mut out: Vec<SummaryRow> = models
        .iter()
        .enumerate()
        .map(|(i, m)| SummaryRow {
            label: m.label.clone(),
            section: match m.section {
                Section::Base => "base",
                Section::Evaluated => "evaluated",
            },
            accuracy: grouped(&stats, |s| s.accuracy[i]),
            entropy: grouped(&stats, |s| s.entropy[i]),
        })
        .collect();
    out.push(SummaryRow {
        label: "GT".into(),
        section: "gt",
        accuracy: [None; 4],
        entropy: grouped(&stats, |s| Some(s.gt_entropy)),
    });
    Ok(ModelSummary { rows: out })
}

/// Unique-answer histogram per answer type and overall.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniqueAnswerRow {
    pub group: &'static str,
    pub histogram: [usize; ANSWERS_PER_QUESTION],
    pub total: usize,
    pub average: Option<MeanStd>,
}

pub fn build_unique_answer_table(
    dataset: &Dataset,
    mode: Normalization,
) -> Result<Vec<UniqueAnswerRow>, ReportError> {
    let joined = join_for_evaluation(dataset, &[]);
    let records: Vec<&AnnotationRecord> = joined.iter().map(|r| r.record).collect();
    let mut out = Vec::new();
    for t in AnswerType::ALL {
        out.push(unique_row(
            t.as_str(),
            records.iter().copied().filter(|r| r.answer_type == t),
            mode,
        )?);
    }
    out.push(unique_row("total", records.iter().copied(), mode)?);
    Ok(out)
}

fn unique_row<'a>(
    group: &'static str,
    records: impl Iterator<Item = &'a AnnotationRecord>,
    mode: Normalization,
) -> Result<UniqueAnswerRow, ReportError> {
    let records: Vec<&AnnotationRecord> = records.collect();
    if records.is_empty() {
        return Ok(UniqueAnswerRow {
            group,
            histogram: [0; ANSWERS_PER_QUESTION],
            total: 0,
            average: None,
        });
    }
    let s = agreement_stats(records.iter().copied(), mode)?;
    Ok(UniqueAnswerRow {
        group,
        histogram: s.histogram,
        total: s.total(),
        average: Some(s.avg_unique),
    })
}

/// Overlap histograms of the evaluated models per ordered cluster. Empty
/// when no model is evaluated.
pub fn build_overlap_histograms(
    ctx: &ReportContext<'_>,
    model: &ClusterModel,
    assignments: &[ClusterAssignment],
) -> Result<Vec<OverlapHistogram>, ReportError> {
    let evaluated = ctx.roles.evaluated();
    if evaluated.is_empty() {
        return Ok(Vec::new());
    }
    let mut by_cluster: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); model.k];
    for a in assignments {
        by_cluster[a.ordered_cluster].insert(a.question_id);
    }
    let joined = join_for_evaluation(ctx.dataset, &evaluated);
    let index: BTreeMap<u64, usize> = joined
        .iter()
        .enumerate()
        .map(|(i, r)| (r.record.question_id, i))
        .collect();
    let hists = par::map(&by_cluster, |ids| {
        let items = ids
            .iter()
            .filter_map(|q| index.get(q).map(|&i| &joined[i]))
            .map(|r| (r.record, r.answers.as_slice()));
        overlap_histogram(items, evaluated.len(), ctx.normalization)
    });
    Ok(hists.into_iter().collect::<Result<_, _>>()?)
}

fn fmt4(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

fn push_mean_std(cells: &mut Vec<String>, m: &Option<MeanStd>) {
    match m {
        Some(m) => {
            cells.push(fmt4(m.mean));
            cells.push(fmt4(m.std));
        }
        None => {
            cells.push(EMPTY_CELL.into());
            cells.push(EMPTY_CELL.into());
        }
    }
}

/// In-memory CSV encoder with `\n` line endings.
struct CsvOut(csv::Writer<Vec<u8>>);

impl CsvOut {
    fn new() -> Self {
        Self(
            csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new()),
        )
    }

    fn row<S: AsRef<[u8]>>(&mut self, cells: &[S]) {
        self.0.write_record(cells).expect("writing to memory");
    }

    fn finish(self) -> String {
        let bytes = self.0.into_inner().expect("flushing to memory");
        String::from_utf8(bytes).expect("cells are UTF-8")
    }
}

fn header_pair(cells: &mut Vec<String>, stem: &str) {
    cells.push(format!("{stem}_mean"));
    cells.push(format!("{stem}_std"));
}

pub fn cluster_table_csv(table: &ClusterTable) -> String {
    let mut header = vec!["cluster".to_string(), "level".into(), "total".into()];
    for m in &table.models {
        header_pair(&mut header, &format!("entropy_{}", m.label));
    }
    for m in &table.models {
        header_pair(&mut header, &format!("accuracy_{}", m.label));
    }
    header_pair(&mut header, "gt_entropy");
    header_pair(&mut header, "unique_answers");
    for h in ["yes_no", "number", "other", "n_agree", "n_disagree"] {
        header.push(h.into());
    }
    for name in &table.aux_names {
        header_pair(&mut header, &format!("aux_{name}"));
    }
    let mut out = CsvOut::new();
    out.row(&header);
    for r in &table.rows {
        let mut cells = vec![
            r.cluster.to_string(),
            r.level.to_string(),
            r.total.to_string(),
        ];
        for m in r.entropy.iter().chain(&r.accuracy) {
            push_mean_std(&mut cells, m);
        }
        push_mean_std(&mut cells, &r.gt_entropy);
        push_mean_std(&mut cells, &r.unique_answers);
        cells.extend(r.type_counts.iter().map(|c| c.to_string()));
        cells.push(r.n_agree.to_string());
        cells.push(r.n_disagree.to_string());
        for a in &r.aux {
            push_mean_std(&mut cells, a);
        }
        out.row(&cells);
    }
    out.finish()
}

pub fn model_summary_csv(summary: &ModelSummary) -> String {
    let mut out = CsvOut::new();
    out.row(&[
        "model",
        "section",
        "group",
        "n",
        "accuracy_mean",
        "accuracy_std",
        "entropy_mean",
        "entropy_std",
    ]);
    for r in &summary.rows {
        for (g, group) in SUMMARY_GROUPS.iter().enumerate() {
            let n = r.entropy[g].or(r.accuracy[g]).map_or(0, |m| m.n);
            let mut cells = vec![
                r.label.clone(),
                r.section.into(),
                group.to_string(),
                n.to_string(),
            ];
            push_mean_std(&mut cells, &r.accuracy[g]);
            push_mean_std(&mut cells, &r.entropy[g]);
            out.row(&cells);
        }
    }
    out.finish()
}

pub fn unique_answers_csv(rows: &[UniqueAnswerRow]) -> String {
    let mut header = vec!["group".to_string()];
    header.extend((1..=ANSWERS_PER_QUESTION).map(|c| format!("unique_{c}")));
    header.push("total".into());
    header_pair(&mut header, "average");
    let mut out = CsvOut::new();
    out.row(&header);
    for r in rows {
        let mut cells = vec![r.group.to_string()];
        cells.extend(r.histogram.iter().map(|c| c.to_string()));
        cells.push(r.total.to_string());
        push_mean_std(&mut cells, &r.average);
        out.row(&cells);
    }
    out.finish()
}

/// Full grid: unique answers 1..=10 by max overlap 1..=model_count.
pub fn overlap_histogram_csv(hist: &OverlapHistogram) -> String {
    let mut header = vec!["unique_answers".to_string()];
    header.extend((1..=hist.model_count).map(|m| format!("overlap_{m}")));
    let mut out = CsvOut::new();
    out.row(&header);
    for u in 1..=ANSWERS_PER_QUESTION {
        let mut cells = vec![u.to_string()];
        cells.extend((1..=hist.model_count).map(|m| hist.get(u, m).to_string()));
        out.row(&cells);
    }
    out.finish()
}

pub fn partitions_csv(rows: &[PartitionEntropy]) -> String {
    let mut out = CsvOut::new();
    out.row(&["partition", "parts", "entropy", "sort_index"]);
    for (i, r) in rows.iter().enumerate() {
        out.row(&[
            r.label(),
            r.parts.len().to_string(),
            fmt4(r.entropy),
            i.to_string(),
        ]);
    }
    out.finish()
}

pub const ASSIGNMENTS_HEADER: &str = "question_id,cluster,level,distance";

/// Assignment listing sorted by question id.
pub fn assignments_csv(assignments: &[ClusterAssignment]) -> String {
    let mut sorted: Vec<&ClusterAssignment> = assignments.iter().collect();
    sorted.sort_by_key(|a| a.question_id);
    let mut out = CsvOut::new();
    out.row(&ASSIGNMENTS_HEADER.split(',').collect::<Vec<_>>());
    for a in sorted {
        out.row(&[
            a.question_id.to_string(),
            a.ordered_cluster.to_string(),
            a.level.to_string(),
            fmt4(a.distance),
        ]);
    }
    out.finish()
}

/// Parses an assignment listing and checks it against `model`.
pub fn read_assignments(
    path: &Path,
    model: &ClusterModel,
) -> Result<Vec<ClusterAssignment>, ReportError> {
    let file = fs::File::open(path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => {
            ReportError::Ingest(IngestError::FileNotFound(path.to_path_buf()))
        }
        _ => ReportError::Io {
            path: path.to_path_buf(),
            source,
        },
    })?;
    let bad = |line: u64, reason: String| ReportError::MalformedAssignments {
        path: path.to_path_buf(),
        line: line as usize,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut header_seen = false;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            bad(line, e.to_string())
        })?;
        let lineno = record.position().map_or(0, |p| p.line());
        if !header_seen {
            if record.iter().ne(ASSIGNMENTS_HEADER.split(',')) {
                return Err(bad(lineno, format!("expected header {ASSIGNMENTS_HEADER}")));
            }
            header_seen = true;
            continue;
        }
        if record.len() != 4 {
            return Err(bad(lineno, "expected 4 columns".into()));
        }
        let question_id: u64 = record[0]
            .parse()
            .map_err(|_| bad(lineno, "bad question_id".into()))?;
        let cluster: usize = record[1]
            .parse()
            .map_err(|_| bad(lineno, "bad cluster".into()))?;
        if cluster >= model.k {
            return Err(bad(
                lineno,
                format!("cluster {cluster} outside 0..{}", model.k),
            ));
        }
        let level = model.levels[cluster];
        if &record[2] != level.as_str() {
            return Err(bad(
                lineno,
                format!("level {} disagrees with model ({level})", &record[2]),
            ));
        }
        let distance: f64 = record[3]
            .parse()
            .ok()
            .filter(|d: &f64| *d >= 0.0 && d.is_finite())
            .ok_or_else(|| bad(lineno, "bad distance".into()))?;
        if !seen.insert(question_id) {
            return Err(bad(lineno, format!("duplicate question_id {question_id}")));
        }
        out.push(ClusterAssignment {
            question_id,
            ordered_cluster: cluster,
            level,
            distance,
        });
    }
    if !header_seen {
        return Err(bad(1, format!("expected header {ASSIGNMENTS_HEADER}")));
    }
    Ok(out)
}

/// Writes `contents` to `dir/name` and returns the path.
pub fn emit(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, ReportError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written beside every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputDigest>,
    pub outputs: Vec<String>,
    pub warnings: Warnings,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: "vqd",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            warnings: Warnings::default(),
        }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<(), ReportError> {
        let sha256 = crate::io::file_digest(path)?;
        self.inputs.insert(
            name.to_string(),
            InputDigest {
                path: path.display().to_string(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
