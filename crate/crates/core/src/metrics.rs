//! Consensus accuracy, annotator agreement, and model-overlap statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    answer_counts, normalize_answer, AnnotationRecord, AnswerDistribution, ModelError,
    Normalization, ANSWERS_PER_QUESTION,
};
use crate::stats::MeanStd;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no records to aggregate")]
    EmptyInput,
    #[error("model {0:?} appears more than once")]
    DuplicateModel(String),
    #[error("no predictions given")]
    NoPredictions,
}

/// Accuracy of one answer against the crowd, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AccuracyScore(f64);

impl AccuracyScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyMetric {
    /// `min(m / 3, 1)` over all ten annotators.
    #[default]
    Simple,
    /// Mean of the simple metric over the ten leave-one-annotator-out subsets.
    Averaged,
}

impl fmt::Display for AccuracyMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccuracyMetric::Simple => f.write_str("simple"),
            AccuracyMetric::Averaged => f.write_str("averaged"),
        }
    }
}

/// Simple consensus score for `m` matching annotators.
pub fn simple_score(m: usize) -> f64 {
    (m as f64 / 3.0).min(1.0)
}

/// Leave-one-out score for `m` matches out of `n` annotators: dropping one of
/// the `m` matching annotators leaves `m - 1`, dropping any other leaves `m`.
pub fn averaged_score(m: usize, n: usize) -> f64 {
    debug_assert!(m <= n && n > 0);
    let dropped_match = if m > 0 { simple_score(m - 1) } else { 0.0 };
    (m as f64 * dropped_match + (n - m) as f64 * simple_score(m)) / n as f64
}

pub fn match_count(
    predicted: &str,
    record: &AnnotationRecord,
    mode: Normalization,
) -> Result<usize, MetricsError> {
    record.require_answers()?;
    let p = normalize_answer(predicted, mode);
    Ok(record
        .answers
        .iter()
        .filter(|a| normalize_answer(a, mode) == p)
        .count())
}

pub fn consensus_accuracy(
    predicted: &str,
    record: &AnnotationRecord,
    mode: Normalization,
) -> Result<AccuracyScore, MetricsError> {
    Ok(AccuracyScore(simple_score(match_count(
        predicted, record, mode,
    )?)))
}

pub fn consensus_accuracy_averaged(
    predicted: &str,
    record: &AnnotationRecord,
    mode: Normalization,
) -> Result<AccuracyScore, MetricsError> {
    let m = match_count(predicted, record, mode)?;
    Ok(AccuracyScore(averaged_score(m, ANSWERS_PER_QUESTION)))
}

pub fn accuracy(
    metric: AccuracyMetric,
    predicted: &str,
    record: &AnnotationRecord,
    mode: Normalization,
) -> Result<AccuracyScore, MetricsError> {
    match metric {
        AccuracyMetric::Simple => consensus_accuracy(predicted, record, mode),
        AccuracyMetric::Averaged => consensus_accuracy_averaged(predicted, record, mode),
    }
}

pub fn unique_answer_count(
    record: &AnnotationRecord,
    mode: Normalization,
) -> Result<usize, MetricsError> {
    Ok(answer_counts(record, mode)?.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementStats {
    pub n_agree: usize,
    pub n_disagree: usize,
    pub avg_unique: MeanStd,
    /// `histogram[c - 1]` counts records with `c` unique answers.
    pub histogram: [usize; ANSWERS_PER_QUESTION],
}

impl AgreementStats {
    pub fn total(&self) -> usize {
        self.n_agree + self.n_disagree
    }
}

/// Agreement statistics over records, accumulated in iteration order.
pub fn agreement_stats<'a, I>(
    records: I,
    mode: Normalization,
) -> Result<AgreementStats, MetricsError>
where
    I: IntoIterator<Item = &'a AnnotationRecord>,
{
    let mut histogram = [0usize; ANSWERS_PER_QUESTION];
    let mut counts = Vec::new();
    for r in records {
        let c = unique_answer_count(r, mode)?;
        histogram[c - 1] += 1;
        counts.push(c as f64);
    }
    let avg_unique = MeanStd::of(&counts).ok_or(MetricsError::EmptyInput)?;
    Ok(AgreementStats {
        n_agree: histogram[0],
        n_disagree: counts.len() - histogram[0],
        avg_unique,
        histogram,
    })
}

/// Models grouped by the answer they predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapPartition {
    /// (normalized answer, supporters), largest group first, then by answer.
    pub groups: Vec<(String, usize)>,
    pub model_count: usize,
}

/// Groups `(model_id, top_answer)` pairs by normalized answer and returns the
/// size of the largest group.
pub fn max_overlap<S: AsRef<str>, T: AsRef<str>>(
    predictions: &[(S, T)],
    mode: Normalization,
) -> Result<(OverlapPartition, usize), MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::NoPredictions);
    }
    let mut seen = HashSet::new();
    let mut groups: BTreeMap<String, usize> = BTreeMap::new();
    for (model, answer) in predictions {
        if !seen.insert(model.as_ref()) {
            return Err(MetricsError::DuplicateModel(model.as_ref().to_string()));
        }
        *groups
            .entry(normalize_answer(answer.as_ref(), mode))
            .or_default() += 1;
    }
    let mut groups: Vec<(String, usize)> = groups.into_iter().collect();
    groups.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let max = groups[0].1;
    Ok((
        OverlapPartition {
            groups,
            model_count: predictions.len(),
        },
        max,
    ))
}

/// Question counts per (unique GT answers, max overlap) cell for one cluster.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OverlapHistogram {
    pub model_count: usize,
    pub cells: BTreeMap<(usize, usize), usize>,
    /// Questions dropped because at least one model had no prediction.
    pub excluded: usize,
}

impl OverlapHistogram {
    pub fn get(&self, unique: usize, overlap: usize) -> usize {
        self.cells.get(&(unique, overlap)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.cells.values().sum()
    }
}

/// Builds the overlap histogram for one cluster. Each item is a GT record and
/// the `(model_id, answer)` pairs available for it; a question with fewer
/// than `model_count` predictions is excluded and counted.
pub fn overlap_histogram<'a, I, S, T>(
    questions: I,
    model_count: usize,
    mode: Normalization,
) -> Result<OverlapHistogram, MetricsError>
where
    I: IntoIterator<Item = (&'a AnnotationRecord, &'a [(S, T)])>,
    S: AsRef<str> + 'a,
    T: AsRef<str> + 'a,
{
    let mut hist = OverlapHistogram {
        model_count,
        ..Default::default()
    };
    for (record, preds) in questions {
        if preds.is_empty() || preds.len() < model_count {
            hist.excluded += 1;
            continue;
        }
        let unique = unique_answer_count(record, mode)?;
        let (_, max) = max_overlap(preds, mode)?;
        *hist.cells.entry((unique, max)).or_default() += 1;
    }
    Ok(hist)
}

/// All partitions of `n` into positive parts, each in non-increasing order,
/// listed in reverse lexicographic order.
pub fn integer_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(remaining: usize, max_part: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining == 0 {
            out.push(prefix.clone());
            return;
        }
        for part in (1..=max_part.min(remaining)).rev() {
            prefix.push(part);
            rec(remaining - part, part, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(n, n, &mut Vec::new(), &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionEntropy {
    pub parts: Vec<usize>,
    pub entropy: f64,
}

impl PartitionEntropy {
    pub fn label(&self) -> String {
        self.parts
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Entropy of every way `n` answers can split into groups of identical
/// answers, ordered by number of unique answers and then by entropy.
pub fn partition_entropy_enumeration(n: usize) -> Vec<PartitionEntropy> {
    let mut rows: Vec<PartitionEntropy> = integer_partitions(n)
        .into_iter()
        .map(|parts| {
            let entropy = AnswerDistribution::from_counts(&parts)
                .map(|d| d.entropy())
                .unwrap_or(0.0);
            PartitionEntropy { parts, entropy }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.parts
            .len()
            .cmp(&b.parts.len())
            .then(a.entropy.total_cmp(&b.entropy))
            .then_with(|| b.parts.cmp(&a.parts))
    });
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnswerType, Split};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rec(parts: &[(&str, usize)]) -> AnnotationRecord {
        AnnotationRecord {
            question_id: 7,
            question_text: String::new(),
            answers: parts
                .iter()
                .flat_map(|(a, n)| std::iter::repeat_n(a.to_string(), *n))
                .collect(),
            answer_type: AnswerType::Other,
            split: Split::Val,
        }
    }

    // Enumerates the ten 9-annotator subsets explicitly.
    fn loo_oracle(m: usize) -> f64 {
        let matches: Vec<bool> = (0..10).map(|i| i < m).collect();
        (0..10)
            .map(|drop| {
                let k = matches
                    .iter()
                    .enumerate()
                    .filter(|&(i, &hit)| i != drop && hit)
                    .count();
                (k as f64 / 3.0).min(1.0)
            })
            .sum::<f64>()
            / 10.0
    }

    #[test]
    fn simple_accuracy_examples() {
        let b = Normalization::Basic;
        let r = rec(&[("tennis", 3), ("ball", 7)]);
        assert_eq!(consensus_accuracy("Tennis", &r, b).unwrap().value(), 1.0);
        let r = rec(&[("cat", 1), ("dog", 9)]);
        assert_abs_diff_eq!(consensus_accuracy("cat", &r, b).unwrap().value(), 1.0 / 3.0);
        assert_eq!(consensus_accuracy("bird", &r, b).unwrap().value(), 0.0);
        let short = rec(&[("cat", 9)]);
        assert!(matches!(
            consensus_accuracy("cat", &short, b),
            Err(MetricsError::Model(ModelError::MissingAnswers {
                found: 9,
                ..
            }))
        ));
    }

    #[test]
    fn averaged_accuracy_examples() {
        let b = Normalization::Basic;
        let r = rec(&[("a", 3), ("b", 7)]);
        assert_eq!(
            consensus_accuracy_averaged("a", &r, b).unwrap().value(),
            0.9
        );
        assert_eq!(
            consensus_accuracy_averaged("z", &r, b).unwrap().value(),
            0.0
        );
        let r = rec(&[("a", 10)]);
        assert_eq!(
            consensus_accuracy_averaged("a", &r, b).unwrap().value(),
            1.0
        );
    }

    #[test]
    fn accuracy_metric_properties_over_all_match_counts() {
        let mut prev = -1.0;
        for m in 0..=10 {
            let simple = simple_score(m);
            let averaged = averaged_score(m, 10);
            assert_abs_diff_eq!(averaged, loo_oracle(m), epsilon = 1e-15);
            assert!(averaged <= simple + 1e-15);
            assert!(simple >= prev);
            if m >= 3 {
                assert_eq!(simple, 1.0);
            }
            prev = simple;
        }
    }

    #[test]
    fn unique_counts() {
        let b = Normalization::Basic;
        assert_eq!(unique_answer_count(&rec(&[("x", 10)]), b).unwrap(), 1);
        let distinct = AnnotationRecord {
            answers: (0..10).map(|i| i.to_string()).collect(),
            ..rec(&[])
        };
        assert_eq!(unique_answer_count(&distinct, b).unwrap(), 10);
        assert_eq!(
            unique_answer_count(&rec(&[("a", 5), ("b", 3), ("c", 2)]), b).unwrap(),
            3
        );
    }

    #[test]
    fn agreement_examples() {
        let b = Normalization::Basic;
        let rs = [rec(&[("yes", 10)]), rec(&[("a", 5), ("b", 5)])];
        let s = agreement_stats(&rs, b).unwrap();
        assert_eq!((s.n_agree, s.n_disagree), (1, 1));
        assert_abs_diff_eq!(s.avg_unique.mean, 1.5);

        assert_eq!(
            agreement_stats(std::iter::empty(), b),
            Err(MetricsError::EmptyInput)
        );

        let ten = AnnotationRecord {
            answers: (0..10).map(|i| i.to_string()).collect(),
            ..rec(&[])
        };
        let rs = [
            rec(&[("a", 10)]),
            rec(&[("b", 10)]),
            rec(&[("a", 6), ("b", 4)]),
            rec(&[("a", 4), ("b", 3), ("c", 3)]),
            rec(&[("a", 8), ("b", 1), ("c", 1)]),
            ten,
        ];
        let s = agreement_stats(&rs, b).unwrap();
        let mut expected = [0; 10];
        expected[0] = 2;
        expected[1] = 1;
        expected[2] = 2;
        expected[9] = 1;
        assert_eq!(s.histogram, expected);
        assert_abs_diff_eq!(s.avg_unique.mean, 20.0 / 6.0, epsilon = 1e-12);
        assert_eq!(s.n_agree, s.histogram[0]);
        assert_eq!(s.total(), s.histogram.iter().sum::<usize>());
    }

    #[test]
    fn max_overlap_examples() {
        let b = Normalization::Basic;
        let all: Vec<(String, &str)> = (0..9).map(|i| (format!("m{i}"), "yes")).collect();
        assert_eq!(max_overlap(&all, b).unwrap().1, 9);

        let split: Vec<(String, &str)> = (0..9)
            .map(|i| (format!("m{i}"), if i < 4 { "red" } else { "blue" }))
            .collect();
        let (partition, max) = max_overlap(&split, b).unwrap();
        assert_eq!(max, 5);
        assert_eq!(
            partition.groups,
            vec![("blue".to_string(), 5), ("red".to_string(), 4)]
        );

        let three = [("a", "x"), ("b", "y"), ("c", "z")];
        assert_eq!(max_overlap(&three, b).unwrap().1, 1);

        let dup = [("a", "x"), ("a", "y")];
        assert_eq!(
            max_overlap(&dup, b),
            Err(MetricsError::DuplicateModel("a".into()))
        );
    }

    #[test]
    fn overlap_histogram_examples() {
        let b = Normalization::Basic;
        let agree: Vec<(String, String)> = (0..9)
            .map(|i| (format!("m{i}"), "yes".to_string()))
            .collect();
        let r1 = rec(&[("yes", 10)]);
        let h = overlap_histogram([(&r1, agree.as_slice())], 9, b).unwrap();
        assert_eq!(h.get(1, 9), 1);
        assert_eq!(h.total(), 1);

        let split: Vec<(String, String)> = (0..9)
            .map(|i| (format!("m{i}"), if i < 4 { "a" } else { "b" }.to_string()))
            .collect();
        let r2 = rec(&[("a", 5), ("b", 5)]);
        let r3 = rec(&[("a", 9), ("c", 1)]);
        let h =
            overlap_histogram([(&r2, agree.as_slice()), (&r3, split.as_slice())], 9, b).unwrap();
        assert_eq!(h.get(2, 9), 1);
        assert_eq!(h.get(2, 5), 1);
        assert_eq!(h.total(), 2);

        let none: [(&AnnotationRecord, &[(String, String)]); 0] = [];
        let h = overlap_histogram(none, 9, b).unwrap();
        assert!(h.cells.is_empty());

        let partial = &agree[..8];
        let h = overlap_histogram([(&r1, partial)], 9, b).unwrap();
        assert_eq!((h.total(), h.excluded), (0, 1));
    }

    // Brute-force partition count: compositions filtered to non-increasing.
    fn brute_partition_count(n: usize) -> usize {
        fn compositions(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            (1..=n)
                .flat_map(|first| {
                    compositions(n - first).into_iter().map(move |mut rest| {
                        rest.insert(0, first);
                        rest
                    })
                })
                .collect()
        }
        compositions(n)
            .into_iter()
            .filter(|c| c.windows(2).all(|w| w[0] >= w[1]))
            .count()
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn partition_enumeration_for_ten() {
        let rows = partition_entropy_enumeration(10);
        assert_eq!(rows.len(), brute_partition_count(10));
        assert_eq!(rows.len(), 42);
        assert_eq!(rows[0].parts, vec![10]);
        assert_eq!(rows[0].entropy, 0.0);
        assert_eq!(rows[41].parts, vec![1; 10]);
        assert_abs_diff_eq!(rows[41].entropy, 2.3026, epsilon = 1e-4);
        for w in rows.windows(2) {
            if w[0].parts.len() == w[1].parts.len() {
                assert!(w[0].entropy <= w[1].entropy);
            } else {
                assert!(w[0].parts.len() < w[1].parts.len());
            }
        }
        for r in &rows {
            let k = r.parts.len();
            assert_eq!(r.entropy == 0.0, k == 1);
            assert!(r.entropy <= (k as f64).ln() + 1e-12);
            // the most balanced partition with k parts has the maximal entropy
            let balanced = rows
                .iter()
                .filter(|o| o.parts.len() == k)
                .min_by_key(|o| o.parts[0] - o.parts[k - 1])
                .unwrap();
            assert!(r.entropy <= balanced.entropy + 1e-12);
        }
        assert_eq!(rows[1].label(), "9+1");
    }

    #[test]
    fn small_partition_counts() {
        for n in 1..=12 {
            assert_eq!(integer_partitions(n).len(), brute_partition_count(n));
        }
        assert!(integer_partitions(0).is_empty());
    }

    proptest! {
        #[test]
        fn overlap_groups_sum_and_order_invariant(
            answers in prop::collection::vec(0u8..4, 1..12),
            rot in 0usize..12,
        ) {
            let preds: Vec<(String, String)> = answers
                .iter()
                .enumerate()
                .map(|(i, a)| (format!("m{i}"), format!("ans{a}")))
                .collect();
            let (p, max) = max_overlap(&preds, Normalization::Basic).unwrap();
            prop_assert_eq!(p.groups.iter().map(|g| g.1).sum::<usize>(), preds.len());
            prop_assert!(max >= 1 && max <= preds.len());
            let mut shuffled = preds.clone();
            shuffled.rotate_left(rot % preds.len());
            shuffled.reverse();
            let (q, max2) = max_overlap(&shuffled, Normalization::Basic).unwrap();
            prop_assert_eq!(max, max2);
            prop_assert_eq!(p, q);
        }
    }
}
