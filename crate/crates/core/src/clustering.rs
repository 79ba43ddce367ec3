//! k-means over 3-d entropy features, cluster ordering, difficulty levels and
//! nearest-centroid assignment.
//!
//! Fitting runs Lloyd's algorithm from k-means++ seeds and keeps the best of
//! `n_restarts` runs by inertia. The assignment step is data-parallel; centroid
//! sums are accumulated in input order so a fit is bit-identical for any
//! worker count. Callers should pass features sorted by question id.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::EntropyFeature;
use crate::par;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid k-means configuration: {0}")]
    InvalidConfig(String),
    #[error("{points} points cannot form {k} clusters")]
    TooFewPoints { points: usize, k: usize },
    #[error("only {distinct} distinct points for {k} clusters")]
    DegenerateData { distinct: usize, k: usize },
    #[error("malformed model file: {0}")]
    MalformedModelFile(String),
    #[error("model format version {found} is not supported (expected {MODEL_FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Largest centroid shift (nats) that still counts as converged.
    pub tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    pub level_q_threshold: f64,
    pub level_qi_threshold: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 10,
            max_iters: 300,
            tol: 1e-6,
            n_restarts: 10,
            seed: 0,
            level_q_threshold: 1.0,
            level_qi_threshold: 2.0,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |msg: &str| Err(ClusterError::InvalidConfig(msg.to_string()));
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return bad("tol must be a finite non-negative number");
        }
        if self.n_restarts < 1 {
            return bad("n_restarts must be at least 1");
        }
        if !self.level_q_threshold.is_finite() || !self.level_qi_threshold.is_finite() {
            return bad("level thresholds must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    /// Answerable from the question alone.
    L1,
    /// Needs the image.
    L2,
    /// Hard even with both.
    L3,
}

impl Level {
    /// `h_q < q_threshold` → L1, else `h_qi > qi_threshold` → L3, else L2.
    pub fn classify(h_q: f64, h_qi: f64, q_threshold: f64, qi_threshold: f64) -> Level {
        if h_q < q_threshold {
            Level::L1
        } else if h_qi > qi_threshold {
            Level::L3
        } else {
            Level::L2
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::L1 => "L1",
            Level::L2 => "L2",
            Level::L3 => "L3",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

type Point = [f64; 3];

fn dist2(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Index of the nearest centroid (lowest index on ties) and the squared
/// distance to it.
fn nearest(p: &Point, centroids: &[Point]) -> (usize, f64) {
    let mut best = (0, dist2(p, &centroids[0]));
    for (i, c) in centroids.iter().enumerate().skip(1) {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Result of one Lloyd run, labels in raw (unordered) cluster ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFit {
    pub centroids: Vec<Point>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after the initial assignment and after every iteration.
    pub inertia_trace: Vec<f64>,
}

pub fn distinct_points(points: &[Point]) -> usize {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a[0].total_cmp(&b[0])
            .then(a[1].total_cmp(&b[1]))
            .then(a[2].total_cmp(&b[2]))
    });
    sorted.dedup();
    sorted.len()
}

/// k-means++ seeding: first center uniform, the rest drawn with probability
/// proportional to squared distance from the nearest chosen center.
pub fn kmeans_plus_plus<R: Rng>(points: &[Point], k: usize, rng: &mut R) -> Vec<Point> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = par::map(points, |p| dist2(p, &centers[0]));
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just past the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            0
        };
        let c = points[next];
        centers.push(c);
        let fresh: Vec<f64> = par::map(points, |p| dist2(p, &c));
        for (d, f) in d2.iter_mut().zip(fresh) {
            if f < *d {
                *d = f;
            }
        }
    }
    centers
}

fn assign_step(points: &[Point], centroids: &[Point]) -> (Vec<usize>, Vec<f64>) {
    par::map(points, |p| nearest(p, centroids))
        .into_iter()
        .unzip()
}

/// Member means in input order; empty clusters keep `previous` for now and
/// are reported back.
fn update_step(points: &[Point], labels: &[usize], previous: &[Point]) -> (Vec<Point>, Vec<usize>) {
    let k = previous.len();
    let mut sums = vec![[0.0f64; 3]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for d in 0..3 {
            sums[l][d] += p[d];
        }
    }
    let mut empty = Vec::new();
    let centroids = (0..k)
        .map(|c| {
            if counts[c] == 0 {
                empty.push(c);
                previous[c]
            } else {
                let n = counts[c] as f64;
                [sums[c][0] / n, sums[c][1] / n, sums[c][2] / n]
            }
        })
        .collect();
    (centroids, empty)
}

// Moves each empty centroid onto the point currently farthest from its own
// centroid; a point is used at most once.
fn repair_empty(points: &[Point], dists: &[f64], empty: &[usize], centroids: &mut [Point]) {
    let mut used = Vec::with_capacity(empty.len());
    for &c in empty {
        let mut far: Option<usize> = None;
        for (i, &d) in dists.iter().enumerate() {
            if used.contains(&i) {
                continue;
            }
            if far.is_none_or(|f| d > dists[f]) {
                far = Some(i);
            }
        }
        if let Some(i) = far {
            used.push(i);
            centroids[c] = points[i];
        }
    }
}

fn empty_clusters(labels: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    (0..k).filter(|&c| counts[c] == 0).collect()
}

/// Lloyd iterations from the given initial centroids.
pub fn lloyd(points: &[Point], init: Vec<Point>, max_iters: usize, tol: f64) -> RawFit {
    let k = init.len();
    let mut centroids = init;
    let (mut labels, mut dists) = assign_step(points, &centroids);
    let mut inertia: f64 = dists.iter().sum();
    let mut trace = vec![inertia];
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let (mut next, empty) = update_step(points, &labels, &centroids);
        if !empty.is_empty() {
            repair_empty(points, &dists, &empty, &mut next);
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| dist2(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        let (new_labels, new_dists) = assign_step(points, &centroids);
        let changed = new_labels != labels;
        labels = new_labels;
        dists = new_dists;
        inertia = dists.iter().sum();
        trace.push(inertia);
        if !changed || (shift <= tol && empty.is_empty()) {
            break;
        }
    }

    // max_iters can stop the loop right after a cluster emptied
    for _ in 0..k {
        let empty = empty_clusters(&labels, k);
        if empty.is_empty() {
            break;
        }
        repair_empty(points, &dists, &empty, &mut centroids);
        let (l, d) = assign_step(points, &centroids);
        labels = l;
        dists = d;
        inertia = dists.iter().sum();
        trace.push(inertia);
    }

    RawFit {
        centroids,
        labels,
        inertia,
        iterations,
        inertia_trace: trace,
    }
}

/// Per-cluster member means, `None` for an empty cluster.
pub fn member_means(points: &[Point], labels: &[usize], k: usize) -> Vec<Option<Point>> {
    let mut sums = vec![[0.0f64; 3]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for d in 0..3 {
            sums[l][d] += p[d];
        }
    }
    (0..k)
        .map(|c| {
            (counts[c] > 0).then(|| {
                let n = counts[c] as f64;
                [sums[c][0] / n, sums[c][1] / n, sums[c][2] / n]
            })
        })
        .collect()
}

/// Ordering (ordered label → raw label) by ascending mean H_QI, ties by raw
/// label. Empty clusters sort last.
pub fn order_clusters(means: &[Option<Point>]) -> Vec<usize> {
    let key = |c: usize| means[c].map_or(f64::INFINITY, |m| m[2]);
    let mut ordering: Vec<usize> = (0..means.len()).collect();
    ordering.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    ordering
}

/// Levels per ordered cluster from member means.
pub fn assign_levels(ordered_means: &[Option<Point>], config: &KMeansConfig) -> Vec<Level> {
    ordered_means
        .iter()
        .map(|m| {
            let m = m.unwrap_or([f64::INFINITY; 3]);
            Level::classify(
                m[1],
                m[2],
                config.level_q_threshold,
                config.level_qi_threshold,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub question_id: u64,
    pub ordered_cluster: usize,
    pub level: Level,
    /// Euclidean distance to the assigned centroid.
    pub distance: f64,
}

/// A fitted, ordered and leveled clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    /// Centroids in ordered-cluster order.
    pub centroids: Vec<Point>,
    /// `ordering[ordered] = raw` label of the fit that produced the model.
    pub ordering: Vec<usize>,
    pub levels: Vec<Level>,
    pub config: KMeansConfig,
    pub inertia: f64,
    pub seed: u64,
}

impl ClusterModel {
    /// Nearest ordered centroid, lowest ordered label on ties.
    pub fn assign(&self, question_id: u64, feature: &EntropyFeature) -> ClusterAssignment {
        let (c, d2) = nearest(&feature.to_array(), &self.centroids);
        ClusterAssignment {
            question_id,
            ordered_cluster: c,
            level: self.levels[c],
            distance: d2.sqrt(),
        }
    }

    pub fn assign_all(&self, features: &[(u64, EntropyFeature)]) -> Vec<ClusterAssignment> {
        par::map(features, |(id, f)| self.assign(*id, f))
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            k: self.k,
            feature_names: EntropyFeature::NAMES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            centroids: self.centroids.clone(),
            ordering: self.ordering.clone(),
            levels: self.levels.clone(),
            config: self.config.clone(),
            seed: self.seed,
            inertia: self.inertia,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ClusterError> {
        let malformed = |m: String| ClusterError::MalformedModelFile(m);
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| malformed("missing format_version".into()))?;
        if version != MODEL_FORMAT_VERSION as u64 {
            return Err(ClusterError::VersionMismatch {
                found: version as u32,
            });
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        file.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<(), ClusterError> {
        fs::write(path, self.to_json()).map_err(|source| ClusterError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ClusterError> {
        let text = fs::read_to_string(path).map_err(|source| ClusterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    k: usize,
    feature_names: Vec<String>,
    centroids: Vec<Point>,
    ordering: Vec<usize>,
    levels: Vec<Level>,
    config: KMeansConfig,
    seed: u64,
    inertia: f64,
}

impl ModelFile {
    fn into_model(self) -> Result<ClusterModel, ClusterError> {
        let bad = |m: String| Err(ClusterError::MalformedModelFile(m));
        if self.feature_names != EntropyFeature::NAMES {
            return bad(format!("feature_names must be {:?}", EntropyFeature::NAMES));
        }
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if self.centroids.len() != self.k {
            return bad(format!(
                "k={} but {} centroids",
                self.k,
                self.centroids.len()
            ));
        }
        if self.levels.len() != self.k {
            return bad(format!("k={} but {} levels", self.k, self.levels.len()));
        }
        let mut seen = vec![false; self.k];
        if self.ordering.len() != self.k
            || !self
                .ordering
                .iter()
                .all(|&o| o < self.k && !std::mem::replace(&mut seen[o], true))
        {
            return bad("ordering is not a permutation of 0..k".into());
        }
        if self.centroids.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite centroid".into());
        }
        if self.inertia.is_nan() || self.inertia < 0.0 {
            return bad("inertia must be non-negative".into());
        }
        if self.config.k != self.k {
            return bad("config.k disagrees with k".into());
        }
        Ok(ClusterModel {
            k: self.k,
            centroids: self.centroids,
            ordering: self.ordering,
            levels: self.levels,
            config: self.config,
            inertia: self.inertia,
            seed: self.seed,
        })
    }
}

pub struct FitOutput {
    pub model: ClusterModel,
    pub assignments: Vec<ClusterAssignment>,
    /// Per ordered cluster member means of the winning run.
    pub member_means: Vec<Point>,
    pub sizes: Vec<usize>,
    /// The winning Lloyd run, raw labels.
    pub raw: RawFit,
}

/// Fits, orders and levels a clustering of `features`.
pub fn kmeans_fit(
    features: &[(u64, EntropyFeature)],
    config: &KMeansConfig,
) -> Result<FitOutput, ClusterError> {
    config.validate()?;
    let k = config.k;
    let points: Vec<Point> = features.iter().map(|(_, f)| f.to_array()).collect();
    if points.len() < k {
        return Err(ClusterError::TooFewPoints {
            points: points.len(),
            k,
        });
    }
    let distinct = distinct_points(&points);
    if distinct < k {
        return Err(ClusterError::DegenerateData { distinct, k });
    }

    let runs = par::map_range(config.n_restarts, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(r as u64);
        let init = kmeans_plus_plus(&points, k, &mut rng);
        lloyd(&points, init, config.max_iters, config.tol)
    });
    let mut best = None;
    for run in runs {
        if best
            .as_ref()
            .is_none_or(|b: &RawFit| run.inertia < b.inertia)
        {
            best = Some(run);
        }
    }
    let raw = best.expect("n_restarts >= 1");

    let means = member_means(&points, &raw.labels, k);
    let ordering = order_clusters(&means);
    let ordered_means: Vec<Option<Point>> = ordering.iter().map(|&r| means[r]).collect();
    let levels = assign_levels(&ordered_means, config);
    let model = ClusterModel {
        k,
        centroids: ordering.iter().map(|&r| raw.centroids[r]).collect(),
        ordering: ordering.clone(),
        levels,
        config: config.clone(),
        inertia: raw.inertia,
        seed: config.seed,
    };
    let assignments = model.assign_all(features);
    let mut sizes = vec![0; k];
    for &l in &raw.labels {
        sizes[ordering.iter().position(|&r| r == l).expect("permutation")] += 1;
    }
    Ok(FitOutput {
        member_means: ordered_means
            .into_iter()
            .map(|m| m.unwrap_or([0.0; 3]))
            .collect(),
        sizes,
        model,
        assignments,
        raw,
    })
}
