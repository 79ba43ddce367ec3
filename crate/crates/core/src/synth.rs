//! Deterministic synthetic datasets with planted entropy clusters.
//!
//! Every question draws from its own ChaCha stream (`seed`, stream =
//! question id), so output does not depend on worker count or scheduling.
//! Answers are synthetic tokens; a model "hits" a question by predicting the
//! modal ground-truth token.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{write_annotations, write_predictions, IngestError, Role};
use crate::metrics::integer_partitions;
use crate::model::{
    AnnotationRecord, AnswerType, EntropyFeature, Payload, PredictionRecord, Split,
    ANSWERS_PER_QUESTION, STANDARD_VOCAB_SIZE,
};
use crate::par;

/// Upper end of the generated entropy box.
pub const MAX_CENTER: f64 = 8.05;

/// Answer predicted on a miss; never a ground-truth token.
pub const MISS_ANSWER: &str = "unanswerable";

const EVAL_ENTROPY_JITTER: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("unique-answer count {0} outside 1..=10")]
    InvalidK(usize),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterBlueprint {
    /// (H_I, H_Q, H_QI) in nats.
    pub center: [f64; 3],
    pub std: f64,
    pub weight: f64,
    /// Probability that a model predicts the modal ground-truth answer.
    pub target_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_questions: usize,
    pub clusters: Vec<ClusterBlueprint>,
    pub seed: u64,
    /// Number of evaluated models besides the three base models.
    pub models: usize,
    /// Probability of 1..=10 unique ground-truth answers.
    pub agreement_profile: [f64; ANSWERS_PER_QUESTION],
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_questions == 0 {
            return bad("n_questions must be positive".into());
        }
        if self.clusters.is_empty() {
            return bad("at least one cluster is required".into());
        }
        let wsum: f64 = self.clusters.iter().map(|c| c.weight).sum();
        if (wsum - 1.0).abs() > 1e-9 {
            return bad(format!("cluster weights sum to {wsum}"));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.center.iter().any(|&v| !(0.0..=MAX_CENTER).contains(&v)) {
                return bad(format!("cluster {i} center outside [0, {MAX_CENTER}]^3"));
            }
            if !(c.std >= 0.0 && c.std.is_finite()) {
                return bad(format!("cluster {i} std must be finite and non-negative"));
            }
            if c.weight.is_nan() || c.weight < 0.0 {
                return bad(format!("cluster {i} weight is negative"));
            }
            if !(0.0..=1.0).contains(&c.target_accuracy) {
                return bad(format!("cluster {i} target accuracy outside [0, 1]"));
            }
        }
        let psum: f64 = self.agreement_profile.iter().sum();
        if self
            .agreement_profile
            .iter()
            .any(|&p| p.is_nan() || p < 0.0)
            || (psum - 1.0).abs() > 1e-9
        {
            return bad("agreement profile must be a probability vector".into());
        }
        Ok(())
    }
}

/// Model id for a base role or evaluated model index.
pub fn model_id(role: Role, index: usize) -> String {
    match role {
        Role::I => "synth_i".into(),
        Role::Q => "synth_q".into(),
        Role::QI => "synth_qi".into(),
        Role::Evaluated => format!("eval_{index}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub annotations: Vec<AnnotationRecord>,
    /// model id → predictions in question order.
    pub predictions: BTreeMap<String, Vec<PredictionRecord>>,
    pub features: Vec<(u64, EntropyFeature)>,
    /// (question id, planted cluster index).
    pub planted: Vec<(u64, usize)>,
}

fn partitions_by_parts() -> &'static Vec<Vec<Vec<usize>>> {
    static CACHE: OnceLock<Vec<Vec<Vec<usize>>>> = OnceLock::new();
    CACHE.get_or_init(|| {
        let mut by = vec![Vec::new(); ANSWERS_PER_QUESTION + 1];
        for p in integer_partitions(ANSWERS_PER_QUESTION) {
            by[p.len()].push(p);
        }
        by
    })
}

fn token(i: usize) -> String {
    format!("answer{i}")
}

fn realize_with<R: Rng>(k: usize, rng: &mut R) -> Result<Vec<String>, SynthError> {
    if !(1..=ANSWERS_PER_QUESTION).contains(&k) {
        return Err(SynthError::InvalidK(k));
    }
    let choices = &partitions_by_parts()[k];
    let parts = &choices[rng.random_range(0..choices.len())];
    let mut answers: Vec<String> = parts
        .iter()
        .enumerate()
        .flat_map(|(i, &m)| std::iter::repeat_n(token(i), m))
        .collect();
    answers.shuffle(rng);
    Ok(answers)
}

/// Ten answer strings with exactly `k` distinct values; multiplicities are a
/// uniformly chosen partition of 10 into `k` parts, and token 0 is always a
/// most frequent answer.
pub fn realize_agreement(k: usize, seed: u64) -> Result<Vec<String>, SynthError> {
    realize_with(k, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn clip(x: f64) -> f64 {
    x.clamp(0.0, (STANDARD_VOCAB_SIZE as f64).ln())
}

struct Question {
    record: AnnotationRecord,
    cluster: usize,
    feature: EntropyFeature,
    base: [(f64, String); 3],
    evaluated: Vec<(f64, String)>,
}

fn summary(
    question_id: u64,
    model_id: String,
    entropy: f64,
    top_answer: String,
) -> PredictionRecord {
    PredictionRecord {
        question_id,
        model_id,
        payload: Payload::Summary {
            entropy,
            top_prob: (-entropy).exp().clamp(f64::MIN_POSITIVE, 1.0),
            top_answer,
        },
    }
}

/// Generates the dataset described by `spec`. Question ids run 1..=n.
pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let cluster_pick = WeightedIndex::new(spec.clusters.iter().map(|c| c.weight))
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let k_pick = WeightedIndex::new(spec.agreement_profile)
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let questions = par::map_range(spec.n_questions, |i| -> Result<Question, SynthError> {
        let question_id = i as u64 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(question_id);

        let cluster = cluster_pick.sample(&mut rng);
        let bp = &spec.clusters[cluster];
        let mut h = [0.0; 3];
        for (d, v) in h.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *v = clip(bp.center[d] + bp.std * z);
        }
        let feature = EntropyFeature::from_array(h).expect("clipped into range");

        let k = k_pick.sample(&mut rng) + 1;
        let answers = realize_with(k, &mut rng)?;
        let answer_type = AnswerType::ALL[rng.random_range(0..3)];
        let answer = |rng: &mut ChaCha8Rng| {
            if rng.random_bool(bp.target_accuracy) {
                token(0)
            } else {
                MISS_ANSWER.to_string()
            }
        };
        let base = [
            (h[0], answer(&mut rng)),
            (h[1], answer(&mut rng)),
            (h[2], answer(&mut rng)),
        ];
        let evaluated = (0..spec.models)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (clip(h[2] + EVAL_ENTROPY_JITTER * z), answer(&mut rng))
            })
            .collect();
        Ok(Question {
            record: AnnotationRecord {
                question_id,
                question_text: format!("synthetic question {question_id}?"),
                answers,
                answer_type,
                split: Split::Val,
            },
            cluster,
            feature,
            base,
            evaluated,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut predictions: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for q in &questions {
        let id = q.record.question_id;
        for (role, (h, a)) in [Role::I, Role::Q, Role::QI].into_iter().zip(&q.base) {
            let m = model_id(role, 0);
            predictions
                .entry(m.clone())
                .or_default()
                .push(summary(id, m, *h, a.clone()));
        }
        for (j, (h, a)) in q.evaluated.iter().enumerate() {
            let m = model_id(Role::Evaluated, j + 1);
            predictions
                .entry(m.clone())
                .or_default()
                .push(summary(id, m, *h, a.clone()));
        }
    }
    Ok(SynthData {
        features: questions
            .iter()
            .map(|q| (q.record.question_id, q.feature))
            .collect(),
        planted: questions
            .iter()
            .map(|q| (q.record.question_id, q.cluster))
            .collect(),
        annotations: questions.into_iter().map(|q| q.record).collect(),
        predictions,
    })
}

/// File names written by [`write`].
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const PLANTED_FILE: &str = "planted_labels.csv";

pub fn predictions_file(model_id: &str) -> String {
    format!("pred_{model_id}.jsonl")
}

/// Writes annotations, one prediction file per model and the planted labels
/// into `dir`; returns the written paths.
pub fn write(data: &SynthData, dir: &Path) -> Result<Vec<PathBuf>, SynthError> {
    fs::create_dir_all(dir).map_err(|source| SynthError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let ann = dir.join(ANNOTATIONS_FILE);
    write_annotations(&ann, &data.annotations)?;
    written.push(ann);
    for (model, preds) in &data.predictions {
        let p = dir.join(predictions_file(model));
        write_predictions(&p, preds)?;
        written.push(p);
    }
    let mut planted = String::from("question_id,planted_cluster\n");
    for (q, c) in &data.planted {
        let _ = writeln!(planted, "{q},{c}");
    }
    let p = dir.join(PLANTED_FILE);
    fs::write(&p, planted).map_err(|source| SynthError::Io {
        path: p.clone(),
        source,
    })?;
    written.push(p);
    Ok(written)
}

/// Three well-separated clusters at level-1, level-2 and level-3 positions
/// with accuracies decreasing in H_QI.
pub fn three_level_spec(n_questions: usize, seed: u64, models: usize) -> SynthSpec {
    SynthSpec {
        n_questions,
        clusters: vec![
            ClusterBlueprint {
                center: [3.8, 0.5, 0.2],
                std: 0.05,
                weight: 0.4,
                target_accuracy: 0.9,
            },
            ClusterBlueprint {
                center: [4.2, 2.7, 1.0],
                std: 0.05,
                weight: 0.35,
                target_accuracy: 0.5,
            },
            ClusterBlueprint {
                center: [4.4, 4.3, 3.8],
                std: 0.05,
                weight: 0.25,
                target_accuracy: 0.1,
            },
        ],
        seed,
        models,
        agreement_profile: [0.35, 0.25, 0.15, 0.1, 0.05, 0.04, 0.03, 0.01, 0.01, 0.01],
    }
}
