//! Domain types and entropy mathematics shared by every other module.
//!
//! Entropies are in nats. A distribution whose probabilities sum to one within
//! [`PROB_TOLERANCE`] is renormalized on construction; anything further off is
//! rejected.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of crowd answers attached to every non-test visual question.
pub const ANSWERS_PER_QUESTION: usize = 10;

/// Allowed deviation of a probability sum from 1.
pub const PROB_TOLERANCE: f64 = 1e-6;

/// Size of the standard answer vocabulary.
pub const STANDARD_VOCAB_SIZE: usize = 3129;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("distribution is empty")]
    EmptyDistribution,
    #[error("probability at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("probability at index {index} is negative ({value})")]
    NegativeProbability { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, outside 1 ± {PROB_TOLERANCE}")]
    NonNormalized { sum: f64 },
    #[error("question {question_id} has {found} answers, expected {ANSWERS_PER_QUESTION}")]
    MissingAnswers { question_id: u64, found: usize },
    #[error("entropy feature component {component} is invalid ({value})")]
    InvalidFeature { component: &'static str, value: f64 },
    #[error("duplicate vocabulary answer {0:?}")]
    DuplicateAnswer(String),
    #[error("vocabulary is empty")]
    EmptyVocabulary,
}

/// A probability vector over an answer vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerDistribution {
    probs: Vec<f64>,
}

impl AnswerDistribution {
    /// Validates and renormalizes `probs`.
    pub fn new(mut probs: Vec<f64>) -> Result<Self, ModelError> {
        let sum = check_probs(&probs)?;
        if sum != 1.0 {
            for p in &mut probs {
                *p /= sum;
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::EmptyDistribution);
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn one_hot(n: usize, index: usize) -> Result<Self, ModelError> {
        if index >= n {
            return Err(ModelError::EmptyDistribution);
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    /// Empirical distribution `count / total` over the given counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self, ModelError> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(ModelError::EmptyDistribution);
        }
        Ok(Self {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        entropy_kernel(&self.probs)
    }
}

fn check_probs(probs: &[f64]) -> Result<f64, ModelError> {
    if probs.is_empty() {
        return Err(ModelError::EmptyDistribution);
    }
    let mut sum = 0.0;
    for (index, &value) in probs.iter().enumerate() {
        if !value.is_finite() {
            return Err(ModelError::NonFinite { index });
        }
        if value < 0.0 {
            return Err(ModelError::NegativeProbability { index, value });
        }
        sum += value;
    }
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(ModelError::NonNormalized { sum });
    }
    Ok(sum)
}

// -Σ p ln p with 0 ln 0 = 0, clamped into [0, ln n] to absorb rounding.
fn entropy_kernel(probs: &[f64]) -> f64 {
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.clamp(0.0, (probs.len() as f64).ln())
}

/// Shannon entropy in nats of a raw probability vector.
///
/// The vector must satisfy the same invariants as [`AnswerDistribution`];
/// sums inside the tolerance are renormalized before evaluation.
pub fn entropy(probs: &[f64]) -> Result<f64, ModelError> {
    let sum = check_probs(probs)?;
    if sum == 1.0 {
        Ok(entropy_kernel(probs))
    } else {
        let scaled: Vec<f64> = probs.iter().map(|p| p / sum).collect();
        Ok(entropy_kernel(&scaled))
    }
}

/// Answer-string normalization applied before any comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Lowercase, trim, collapse internal whitespace.
    #[default]
    Basic,
    /// Basic, then strip terminal punctuation and the articles a/an/the.
    Extended,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Normalization::Basic => f.write_str("basic"),
            Normalization::Extended => f.write_str("extended"),
        }
    }
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

pub fn normalize_answer(raw: &str, mode: Normalization) -> String {
    let lowered = raw.to_lowercase();
    let mut words: Vec<&str> = lowered.split_whitespace().collect();
    if mode == Normalization::Extended {
        if let Some(last) = words.last_mut() {
            *last = last.trim_end_matches(|c: char| c.is_ascii_punctuation());
        }
        words.retain(|w| !w.is_empty() && !ARTICLES.contains(w));
    }
    words.join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnswerType {
    #[serde(rename = "yes/no")]
    YesNo,
    #[serde(rename = "number")]
    Number,
    #[serde(rename = "other")]
    Other,
}

impl AnswerType {
    pub const ALL: [AnswerType; 3] = [AnswerType::YesNo, AnswerType::Number, AnswerType::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::YesNo => "yes/no",
            AnswerType::Number => "number",
            AnswerType::Other => "other",
        }
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Ground truth for one visual question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub question_id: u64,
    #[serde(rename = "question")]
    pub question_text: String,
    pub answers: Vec<String>,
    pub answer_type: AnswerType,
    pub split: Split,
}

impl AnnotationRecord {
    /// Checks the answer-count invariant: exactly ten answers, except that
    /// test records may carry none.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.answers.len();
        let ok = n == ANSWERS_PER_QUESTION || (self.split == Split::Test && n == 0);
        if ok {
            Ok(())
        } else {
            Err(ModelError::MissingAnswers {
                question_id: self.question_id,
                found: n,
            })
        }
    }

    pub fn has_answers(&self) -> bool {
        self.answers.len() == ANSWERS_PER_QUESTION
    }

    pub(crate) fn require_answers(&self) -> Result<(), ModelError> {
        if self.has_answers() {
            Ok(())
        } else {
            Err(ModelError::MissingAnswers {
                question_id: self.question_id,
                found: self.answers.len(),
            })
        }
    }
}

/// Counts of each normalized ground-truth answer, sorted by answer string.
pub fn answer_counts(
    record: &AnnotationRecord,
    mode: Normalization,
) -> Result<Vec<(String, usize)>, ModelError> {
    record.require_answers()?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for a in &record.answers {
        *counts.entry(normalize_answer(a, mode)).or_default() += 1;
    }
    Ok(counts.into_iter().collect())
}

/// Empirical distribution of the normalized ground-truth answers, one entry
/// per unique answer in lexicographic order.
pub fn gt_distribution(
    record: &AnnotationRecord,
    mode: Normalization,
) -> Result<AnswerDistribution, ModelError> {
    let counts: Vec<usize> = answer_counts(record, mode)?
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    AnswerDistribution::from_counts(&counts)
}

pub fn gt_entropy(record: &AnnotationRecord, mode: Normalization) -> Result<f64, ModelError> {
    Ok(gt_distribution(record, mode)?.entropy())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Distribution(AnswerDistribution),
    Summary {
        entropy: f64,
        top_answer: String,
        top_prob: f64,
    },
}

/// One model's output for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub question_id: u64,
    pub model_id: String,
    pub payload: Payload,
}

impl PredictionRecord {
    /// Top answer; distribution payloads need the vocabulary to name it.
    pub fn top_answer<'a>(&'a self, vocab: Option<&'a AnswerVocabulary>) -> Option<&'a str> {
        match &self.payload {
            Payload::Summary { top_answer, .. } => Some(top_answer),
            Payload::Distribution(d) => vocab.and_then(|v| v.get(d.argmax())),
        }
    }
}

pub fn prediction_entropy(pred: &PredictionRecord) -> f64 {
    match &pred.payload {
        Payload::Distribution(d) => d.entropy(),
        Payload::Summary { entropy, .. } => *entropy,
    }
}

/// Entropies of the image-only, question-only and question+image models for
/// one question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyFeature {
    pub h_i: f64,
    pub h_q: f64,
    pub h_qi: f64,
}

impl EntropyFeature {
    pub const NAMES: [&'static str; 3] = ["H_I", "H_Q", "H_QI"];

    pub fn new(h_i: f64, h_q: f64, h_qi: f64) -> Result<Self, ModelError> {
        for (component, value) in [("H_I", h_i), ("H_Q", h_q), ("H_QI", h_qi)] {
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::InvalidFeature { component, value });
            }
        }
        Ok(Self { h_i, h_q, h_qi })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self, ModelError> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.h_i, self.h_q, self.h_qi]
    }
}

/// Ordered answer list; index `i` names component `i` of every distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerVocabulary {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

impl AnswerVocabulary {
    pub fn new(answers: Vec<String>) -> Result<Self, ModelError> {
        if answers.is_empty() {
            return Err(ModelError::EmptyVocabulary);
        }
        let mut seen = HashMap::with_capacity(answers.len());
        let mut index = HashMap::with_capacity(answers.len());
        for (i, a) in answers.iter().enumerate() {
            let norm = normalize_answer(a, Normalization::Basic);
            if seen.insert(norm, i).is_some() {
                return Err(ModelError::DuplicateAnswer(a.clone()));
            }
            index.insert(a.clone(), i);
        }
        Ok(Self { answers, index })
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&str> {
        self.answers.get(i).map(String::as_str)
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn record(answers: &[&str]) -> AnnotationRecord {
        AnnotationRecord {
            question_id: 1,
            question_text: "q?".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            answer_type: AnswerType::Other,
            split: Split::Val,
        }
    }

    fn repeat(parts: &[(&str, usize)]) -> Vec<String> {
        parts
            .iter()
            .flat_map(|(a, n)| std::iter::repeat_n(a.to_string(), *n))
            .collect()
    }

    // Independent high-precision oracle for [0.9, 0.1]: series expansion of
    // ln around 1 for 0.9, and ln 10 via atanh series.
    fn ln_series(x: f64) -> f64 {
        // ln x = 2 atanh((x-1)/(x+1))
        let y = (x - 1.0) / (x + 1.0);
        let mut term = y;
        let mut sum = 0.0;
        let mut k = 1.0;
        while term.abs() > 1e-20 {
            sum += term / k;
            term *= y * y;
            k += 2.0;
        }
        2.0 * sum
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn entropy_reference_values() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            AnswerDistribution::uniform(10).unwrap().entropy(),
            2.302_585_092_994_046,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            AnswerDistribution::uniform(STANDARD_VOCAB_SIZE)
                .unwrap()
                .entropy(),
            8.0485,
            epsilon = 1e-4
        );
        let oracle = -(0.9 * ln_series(0.9) + 0.1 * ln_series(0.1));
        let h = entropy(&[0.9, 0.1]).unwrap();
        assert_abs_diff_eq!(h, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(h, 0.3251, epsilon = 5e-5);
    }

    #[test]
    fn entropy_errors() {
        assert!(matches!(
            entropy(&[0.5, 0.4]),
            Err(ModelError::NonNormalized { .. })
        ));
        assert!(matches!(
            entropy(&[1.2, -0.2]),
            Err(ModelError::NegativeProbability { index: 1, .. })
        ));
        assert_eq!(entropy(&[]), Err(ModelError::EmptyDistribution));
        assert!(matches!(
            AnswerDistribution::new(vec![f64::NAN, 1.0]),
            Err(ModelError::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn near_normalized_is_renormalized() {
        let d = AnswerDistribution::new(vec![0.5, 0.5 + 5e-7]).unwrap();
        let sum: f64 = d.probs().iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("  Yes ", Normalization::Basic), "yes");
        assert_eq!(
            normalize_answer("TENNIS  racket", Normalization::Basic),
            "tennis racket"
        );
        assert_eq!(
            normalize_answer("the frisbee.", Normalization::Extended),
            "frisbee"
        );
        assert_eq!(
            normalize_answer("the frisbee.", Normalization::Basic),
            "the frisbee."
        );
        assert_eq!(normalize_answer("", Normalization::Extended), "");
        assert_eq!(
            normalize_answer("An Apple!", Normalization::Extended),
            "apple"
        );
    }

    #[test]
    fn gt_distribution_examples() {
        let r = record(&["yes"; 10]);
        assert_eq!(
            gt_distribution(&r, Normalization::Basic).unwrap().probs(),
            &[1.0]
        );

        let mut r = record(&[]);
        r.answers = repeat(&[("cat", 5), ("dog", 5)]);
        assert_eq!(
            gt_distribution(&r, Normalization::Basic).unwrap().probs(),
            &[0.5, 0.5]
        );

        r.answers = repeat(&[("red", 9), ("maroon", 1)]);
        let d = gt_distribution(&r, Normalization::Basic).unwrap();
        // lexicographic support order: maroon, red
        assert_eq!(d.probs(), &[0.1, 0.9]);
        assert_abs_diff_eq!(
            gt_entropy(&r, Normalization::Basic).unwrap(),
            0.3251,
            epsilon = 5e-5
        );
    }

    #[test]
    fn gt_entropy_extremes() {
        let r = record(&["x"; 10]);
        assert_eq!(gt_entropy(&r, Normalization::Basic).unwrap(), 0.0);
        let r = record(&["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"]);
        assert_abs_diff_eq!(
            gt_entropy(&r, Normalization::Basic).unwrap(),
            10f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn gt_requires_ten_answers() {
        let r = record(&["a"; 9]);
        assert_eq!(
            gt_entropy(&r, Normalization::Basic),
            Err(ModelError::MissingAnswers {
                question_id: 1,
                found: 9
            })
        );
    }

    #[test]
    fn record_validation() {
        let mut r = record(&[]);
        assert!(r.validate().is_err());
        r.split = Split::Test;
        assert!(r.validate().is_ok());
        r.answers = repeat(&[("a", 10)]);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn prediction_entropy_modes() {
        let summary = PredictionRecord {
            question_id: 1,
            model_id: "m".into(),
            payload: Payload::Summary {
                entropy: 1.37,
                top_answer: "yes".into(),
                top_prob: 0.5,
            },
        };
        assert_eq!(prediction_entropy(&summary), 1.37);
        let one_hot = PredictionRecord {
            payload: Payload::Distribution(AnswerDistribution::one_hot(3129, 7).unwrap()),
            ..summary.clone()
        };
        assert_eq!(prediction_entropy(&one_hot), 0.0);
        let uniform = PredictionRecord {
            payload: Payload::Distribution(AnswerDistribution::uniform(3129).unwrap()),
            ..summary
        };
        assert_abs_diff_eq!(prediction_entropy(&uniform), 8.0485, epsilon = 1e-4);
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        let v = AnswerVocabulary::new(vec!["yes".into(), "no".into()]).unwrap();
        assert_eq!(v.index_of("no"), Some(1));
        assert_eq!(v.get(0), Some("yes"));
        assert_eq!(
            AnswerVocabulary::new(vec!["Yes".into(), "yes ".into()]),
            Err(ModelError::DuplicateAnswer("yes ".into()))
        );
    }

    #[test]
    fn feature_validation() {
        assert!(EntropyFeature::new(0.0, 1.0, 2.0).is_ok());
        assert!(EntropyFeature::new(-0.1, 1.0, 2.0).is_err());
        assert!(EntropyFeature::new(0.0, f64::INFINITY, 2.0).is_err());
    }

    #[test]
    fn two_point_entropy_is_concave_with_peak_at_half() {
        let closed = |q: f64| -(q * q.ln() + (1.0 - q) * (1.0 - q).ln());
        let grid: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        let hs: Vec<f64> = grid
            .iter()
            .map(|&q| entropy(&[q, 1.0 - q]).unwrap())
            .collect();
        for (q, h) in grid.iter().zip(&hs) {
            assert_abs_diff_eq!(*h, closed(*q), epsilon = 1e-12);
        }
        for w in hs.windows(3) {
            assert!(w[0] + w[2] <= 2.0 * w[1] + 1e-12);
        }
        let peak = hs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(grid[peak], 0.5);
    }

    fn distribution() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 1..40).prop_filter_map("zero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-9).then(|| w.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn entropy_bounded_and_permutation_invariant(p in distribution(), rot in 0usize..40) {
            let h = entropy(&p).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
            let mut q = p.clone();
            let r = rot % q.len();
            q.rotate_left(r);
            q.reverse();
            prop_assert!((entropy(&q).unwrap() - h).abs() < 1e-12);
        }

        #[test]
        fn gt_entropy_permutation_invariant(
            idx in prop::collection::vec(0usize..4, 10),
            shift in 0usize..10,
        ) {
            let words = ["a", "b", "c", "d"];
            let answers: Vec<&str> = idx.iter().map(|&i| words[i]).collect();
            let mut r = record(&answers);
            let h = gt_entropy(&r, Normalization::Basic).unwrap();
            r.answers.rotate_left(shift);
            r.answers.swap(0, 9);
            prop_assert_eq!(gt_entropy(&r, Normalization::Basic).unwrap(), h);
            let mut uniq = idx.clone();
            uniq.sort();
            uniq.dedup();
            prop_assert_eq!(gt_distribution(&r, Normalization::Basic).unwrap().vocab_size(), uniq.len());
        }
    }
}
