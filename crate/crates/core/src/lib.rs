//! Time-series clustering made explainable through proxy classifiers.
//!
//! A clustering is fitted over a collection of equal-length series, a
//! classifier (KNN, gradient-boosted trees or a small fully convolutional
//! network) is trained to predict the cluster labels, and the classifier is
//! explained with TreeSHAP, GradientSHAP and Grad-CAM. The per-sample
//! attributions are aggregated globally and per cluster so that they describe
//! the clustering itself.
//!
//! All numerical code is generic over a [`Scalar`] (`f32` or `f64`). The
//! `f64` instantiations used throughout the pipeline are re-exported below as
//! type aliases.

// `!(a < b)` is used deliberately so NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod clustering;
pub mod dataset;
pub mod distance;
pub mod error;
pub mod explain;
pub mod features;
pub mod neural;
pub mod scalar;
pub mod seed;
pub mod synthgen;
pub mod trees;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Collection of `f64` series.
pub type Collection = dataset::TimeSeriesCollection<f64>;
/// Pairwise `f64` dissimilarities.
pub type Distances = distance::DistanceMatrix<f64>;
/// `f64` distance metric.
pub type MetricF64 = distance::Metric<f64>;
/// `f64` clustering result.
pub type Clustering = clustering::ClusteringResult<f64>;
/// `f64` boosted tree ensemble.
pub type Ensemble = trees::TreeEnsemble<f64>;
/// `f64` fully convolutional network.
pub type Fcn = neural::FcnModel<f64>;
/// `f64` attribution vector.
pub type AttributionF64 = explain::Attribution<f64>;
/// `f64` explanation set.
pub type Explanations = explain::ExplanationSet<f64>;
/// `f64` classification task.
pub type Task = classify::ClassTask<f64>;
