//! Difficulty analysis of visual questions from the entropies of answer
//! distributions.
//!
//! The pipeline computes, for every question, the entropy of the answer
//! distributions predicted by an image-only, a question-only and a
//! question+image model, clusters those 3-d vectors with k-means, orders the
//! clusters by question+image entropy and tags each with a difficulty level.
//! Reports break accuracy, entropy and annotator agreement down by cluster.
//!
//! Data-parallel loops go through [`par`]; build without the default
//! `parallel` feature for a purely sequential library.

pub mod clustering;
pub mod io;
pub mod metrics;
pub mod model;
pub mod par;
pub mod report;
pub mod stats;
pub mod synth;
