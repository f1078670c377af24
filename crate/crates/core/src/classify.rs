//! Supervised harness: cluster-label preparation, KNN, model training,
//! stratified splits, grid search and macro metrics over seeded runs.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{dtw, euclidean};
use crate::error::{invalid, Error, Result};
use crate::features::{build_inputs, FeatureConfig, InputLayout};
use crate::neural::{fit_fcn, FcnArchitecture, FcnModel, OptimizerConfig, OptimizerKind, TrainConfig, FIRST_FILTERS};
use crate::scalar::Scalar;
use crate::seed;
use crate::trees::{fit_gbt, GbtParams, TreeEnsemble};

/// Minimum members a cluster needs to be kept.
pub const MIN_CLASS_SIZE: usize = 4;
pub const DEFAULT_TEST_FRACTION: f64 = 0.3;
pub const EVAL_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn class_counts(labels: &[usize]) -> Vec<usize> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0; k];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Labels after dropping small clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredLabels {
    /// Indices of the kept samples in the input order.
    pub indices: Vec<usize>,
    /// Dense labels of the kept samples.
    pub labels: Vec<usize>,
    /// `mapping[new] = old` cluster label.
    pub mapping: Vec<usize>,
}

/// Drops samples of clusters with fewer than four members and re-indexes the
/// surviving clusters densely (in order of their original label).
pub fn filter_clusters(labels: &[usize]) -> Result<FilteredLabels> {
    let counts = class_counts(labels);
    let mapping: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] >= MIN_CLASS_SIZE).collect();
    if mapping.len() < 2 {
        return Err(invalid(format!(
            "{} cluster(s) have at least {MIN_CLASS_SIZE} members; classification needs 2",
            mapping.len()
        )));
    }
    let mut new_of = vec![usize::MAX; counts.len()];
    for (new, &old) in mapping.iter().enumerate() {
        new_of[old] = new;
    }
    let (indices, labels) =
        labels.iter().enumerate().filter(|(_, &l)| new_of[l] != usize::MAX).map(|(i, &l)| (i, new_of[l])).unzip();
    Ok(FilteredLabels { indices, labels, mapping })
}

/// Caps the single largest class at `v = floor(mean class count)` by keeping
/// a seeded uniform subset. Returns the kept indices (sorted) and `v`.
pub fn downsample_largest(labels: &[usize], seed: u64) -> Result<(Vec<usize>, usize)> {
    let counts = class_counts(labels);
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if present.len() < 2 {
        return Err(invalid("downsampling needs at least two classes"));
    }
    let v = present.iter().sum::<usize>() / present.len();
    let mut largest = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[largest] {
            largest = c;
        }
    }
    if counts[largest] <= v {
        return Ok(((0..labels.len()).collect(), v));
    }
    let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == largest).collect();
    members.shuffle(&mut seed::rng(seed));
    members.truncate(v);
    let mut kept: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != largest).chain(members).collect();
    kept.sort_unstable();
    Ok((kept, v))
}

/// Per-class proportional split with at least one sample of every class on
/// each side. Returns sorted `(train, test)` indices.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let counts = class_counts(labels);
    let mut rng = seed::rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        if n < 2 {
            return Err(invalid(format!("class {c} has a single sample and cannot be split")));
        }
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnMetric {
    /// Minkowski distance with p = 2.
    Minkowski,
    Dtw,
}

impl KnnMetric {
    fn distance<T: Scalar>(self, a: &[T], b: &[T]) -> Result<T> {
        match self {
            KnnMetric::Minkowski => euclidean(a, b),
            KnnMetric::Dtw => dtw(a, b, None),
        }
    }
}

/// Majority vote among the `k` nearest training inputs.
pub fn knn_predict<T: Scalar>(
    train_x: &[Vec<T>],
    train_y: &[usize],
    query: &[T],
    k: usize,
    metric: KnnMetric,
) -> Result<usize> {
    if k < 1 {
        return Err(invalid("knn needs k >= 1"));
    }
    if k > train_x.len() || train_x.len() != train_y.len() {
        return Err(invalid(format!("knn with k = {k} on {} training samples", train_x.len())));
    }
    let mut d: Vec<(T, usize)> =
        train_x.iter().enumerate().map(|(i, x)| Ok((metric.distance(x, query)?, i))).collect::<Result<_>>()?;
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
    let n_classes = train_y.iter().max().map_or(0, |m| m + 1);
    let mut votes = vec![0usize; n_classes];
    let mut sums = vec![T::zero(); n_classes];
    for &(dist, i) in &d[..k] {
        votes[train_y[i]] += 1;
        sums[train_y[i]] = sums[train_y[i]] + dist;
    }
    let mut best = 0;
    for c in 1..n_classes {
        if votes[c] > votes[best] || (votes[c] == votes[best] && sums[c] < sums[best]) {
            best = c;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Accuracy and macro scores over the classes present in `truth`; 0/0 is 0.
pub fn evaluate(predictions: &[usize], truth: &[usize]) -> Result<Metrics> {
    if truth.is_empty() || predictions.len() != truth.len() {
        return Err(invalid(format!("{} predictions for {} labels", predictions.len(), truth.len())));
    }
    let k = truth.iter().chain(predictions).max().map_or(0, |m| m + 1);
    let mut tp = vec![0usize; k];
    let mut pred_n = vec![0usize; k];
    let mut true_n = vec![0usize; k];
    for (&p, &t) in predictions.iter().zip(truth) {
        pred_n[p] += 1;
        true_n[t] += 1;
        if p == t {
            tp[t] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let classes: Vec<usize> = (0..k).filter(|&c| true_n[c] > 0).collect();
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for &c in &classes {
        let p = ratio(tp[c], pred_n[c]);
        let r = ratio(tp[c], true_n[c]);
        sp += p;
        sr += r;
        sf += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let m = classes.len() as f64;
    Ok(Metrics {
        accuracy: ratio(tp.iter().sum(), truth.len()),
        macro_precision: sp / m,
        macro_recall: sr / m,
        macro_f1: sf / m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Knn,
    Gbt,
    Fcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Knn, ModelKind::Gbt, ModelKind::Fcn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Knn => "knn",
            ModelKind::Gbt => "gbt",
            ModelKind::Fcn => "fcn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| invalid(format!("unknown model {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Hyperparams {
    Knn { k: usize, metric: KnnMetric },
    Gbt { gamma: f64, max_depth: usize },
    Fcn { optimizer: OptimizerKind, lr: f64, n_layers: usize, first_filters: usize },
}

impl Hyperparams {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparams::Knn { .. } => ModelKind::Knn,
            Hyperparams::Gbt { .. } => ModelKind::Gbt,
            Hyperparams::Fcn { .. } => ModelKind::Fcn,
        }
    }

    /// Defaults used when grid search is disabled.
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Knn => Hyperparams::Knn { k: 5, metric: KnnMetric::Minkowski },
            ModelKind::Gbt => Hyperparams::Gbt { gamma: 0.0, max_depth: 6 },
            ModelKind::Fcn => {
                Hyperparams::Fcn { optimizer: OptimizerKind::Adam, lr: 0.01, n_layers: 1, first_filters: 16 }
            }
        }
    }
}

impl fmt::Display for Hyperparams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyperparams::Knn { k, metric } => write!(f, "k={k} metric={metric:?}"),
            Hyperparams::Gbt { gamma, max_depth } => write!(f, "gamma={gamma} max_depth={max_depth}"),
            Hyperparams::Fcn { optimizer, lr, n_layers, first_filters } => {
                write!(f, "optimizer={optimizer:?} lr={lr} layers={n_layers} filters={first_filters}")
            }
        }
    }
}

/// The tuning grid for a model kind, in a fixed order.
pub fn default_grid(kind: ModelKind) -> Vec<Hyperparams> {
    match kind {
        ModelKind::Knn => [5, 10, 15]
            .into_iter()
            .flat_map(|k| [KnnMetric::Minkowski, KnnMetric::Dtw].map(|metric| Hyperparams::Knn { k, metric }))
            .collect(),
        ModelKind::Gbt => [0.0, 1.0, 2.0]
            .into_iter()
            .flat_map(|gamma| [3, 6, 9].map(|max_depth| Hyperparams::Gbt { gamma, max_depth }))
            .collect(),
        ModelKind::Fcn => {
            let mut g = Vec::new();
            for optimizer in [OptimizerKind::Adam, OptimizerKind::Sgd] {
                for lr in [0.01, 0.001, 0.0001] {
                    for n_layers in 1..=4 {
                        for first_filters in FIRST_FILTERS {
                            g.push(Hyperparams::Fcn { optimizer, lr, n_layers, first_filters });
                        }
                    }
                }
            }
            g
        }
    }
}

/// Training options not covered by the tuned hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub gbt_rounds: usize,
    pub fcn_epochs: usize,
    pub fcn_batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { gbt_rounds: GbtParams::<f64>::default().rounds, fcn_epochs: t.epochs, fcn_batch_size: t.batch_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase", bound = "")]
pub enum TrainedModel<T: Scalar> {
    Knn { k: usize, metric: KnnMetric, x: Vec<Vec<T>>, y: Vec<usize> },
    Gbt(TreeEnsemble<T>),
    Fcn(FcnModel<T>),
}

impl<T: Scalar> TrainedModel<T> {
    pub fn predict(&self, x: &[T]) -> Result<usize> {
        match self {
            TrainedModel::Knn { k, metric, x: tx, y } => knn_predict(tx, y, x, *k, *metric),
            TrainedModel::Gbt(e) => e.predict(x),
            TrainedModel::Fcn(m) => m.predict(x),
        }
    }

    pub fn predict_all(&self, xs: &[Vec<T>]) -> Result<Vec<usize>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }
}

/// Trains one model on `(x, y)`; `layout` tells the FCN which positions are
/// timesteps.
pub fn train_model<T: Scalar>(
    hp: &Hyperparams,
    x: &[Vec<T>],
    y: &[usize],
    n_classes: usize,
    layout: &InputLayout,
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainedModel<T>> {
    match *hp {
        Hyperparams::Knn { k, metric } => {
            if k > x.len() {
                return Err(invalid(format!("knn with k = {k} on {} training samples", x.len())));
            }
            Ok(TrainedModel::Knn { k, metric, x: x.to_vec(), y: y.to_vec() })
        }
        Hyperparams::Gbt { gamma, max_depth } => {
            let p = GbtParams { gamma: T::of(gamma), max_depth, rounds: settings.gbt_rounds, ..GbtParams::default() };
            Ok(TrainedModel::Gbt(fit_gbt(x, y, &p, seed)?))
        }
        Hyperparams::Fcn { optimizer, lr, n_layers, first_filters } => {
            let arch = FcnArchitecture::new(n_layers, first_filters, n_classes)?;
            let train = TrainConfig {
                epochs: settings.fcn_epochs,
                batch_size: settings.fcn_batch_size,
                standardize: true,
                time_len: layout.time_len(),
            };
            let opt = OptimizerConfig { kind: optimizer, lr };
            Ok(TrainedModel::Fcn(fit_fcn(x, y, &arch, &opt, &train, seed)?))
        }
    }
}

/// A classification problem built from a clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ClassTask<T: Scalar> {
    pub ids: Vec<String>,
    pub series: Vec<Vec<T>>,
    pub inputs: Vec<Vec<T>>,
    pub labels: Vec<usize>,
    pub config: FeatureConfig,
    pub layout: InputLayout,
    pub k_before: usize,
    pub k_after: usize,
    pub v: usize,
    /// `mapping[label] = original cluster`.
    pub mapping: Vec<usize>,
}

impl<T: Scalar> ClassTask<T> {
    /// Filters small clusters, downsamples the largest one and builds inputs.
    pub fn build(
        ids: &[String],
        series: &[Vec<T>],
        clusters: &[usize],
        config: FeatureConfig,
        seed: u64,
    ) -> Result<Self> {
        if ids.len() != series.len() || series.len() != clusters.len() {
            return Err(invalid("ids, series and cluster labels must have equal lengths"));
        }
        let k_before = class_counts(clusters).iter().filter(|&&c| c > 0).count();
        let f = filter_clusters(clusters)?;
        let (kept, v) = downsample_largest(&f.labels, seed)?;
        let idx: Vec<usize> = kept.iter().map(|&i| f.indices[i]).collect();
        let series: Vec<Vec<T>> = idx.iter().map(|&i| series[i].clone()).collect();
        let (inputs, layout) = build_inputs(&series, config)?;
        Ok(Self {
            ids: idx.iter().map(|&i| ids[i].clone()).collect(),
            series,
            inputs,
            labels: kept.iter().map(|&i| f.labels[i]).collect(),
            config,
            layout,
            k_before,
            k_after: f.mapping.len(),
            v,
            mapping: f.mapping,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.k_after
    }

    pub fn split(&self, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        stratified_split(&self.labels, DEFAULT_TEST_FRACTION, seed)
    }

    fn rows(&self, idx: &[usize]) -> (Vec<Vec<T>>, Vec<usize>) {
        idx.iter().map(|&i| (self.inputs[i].clone(), self.labels[i])).unzip()
    }

    /// Trains on the seed's training split and evaluates on its test split.
    pub fn fit_and_score(
        &self,
        hp: &Hyperparams,
        settings: &TrainSettings,
        seed: u64,
    ) -> Result<(TrainedModel<T>, Metrics)> {
        let (train, test) = self.split(seed)?;
        let (tx, ty) = self.rows(&train);
        let (vx, vy) = self.rows(&test);
        let model = train_model(hp, &tx, &ty, self.n_classes(), &self.layout, settings, seed::derive(seed, "train"))?;
        let pred = model.predict_all(&vx)?;
        Ok((model, evaluate(&pred, &vy)?))
    }

    /// The model trained on the seed's training split, with those indices.
    pub fn fit_train_split(
        &self,
        hp: &Hyperparams,
        settings: &TrainSettings,
        seed: u64,
    ) -> Result<(TrainedModel<T>, Vec<usize>)> {
        let (train, _) = self.split(seed)?;
        let (tx, ty) = self.rows(&train);
        let model = train_model(hp, &tx, &ty, self.n_classes(), &self.layout, settings, seed::derive(seed, "train"))?;
        Ok((model, train))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hyperparams: Hyperparams,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: Hyperparams,
    pub best_accuracy: f64,
    pub points: Vec<GridPoint>,
}

/// Evaluates every grid point on one seeded split and returns the most
/// accurate; ties go to the earliest point. Failing points are recorded.
pub fn grid_search<T: Scalar>(
    task: &ClassTask<T>,
    grid: &[Hyperparams],
    settings: &TrainSettings,
    seed: u64,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(invalid("empty hyperparameter grid"));
    }
    let points: Vec<GridPoint> = grid
        .par_iter()
        .map(|hp| match task.fit_and_score(hp, settings, seed) {
            Ok((_, m)) => GridPoint { hyperparams: *hp, accuracy: Some(m.accuracy), error: None },
            Err(e) => GridPoint { hyperparams: *hp, accuracy: None, error: Some(e.to_string()) },
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if let Some(a) = p.accuracy {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((i, a));
            }
        }
    }
    let (i, acc) = best.ok_or_else(|| invalid("every grid point failed to train"))?;
    Ok(GridResult { best: points[i].hyperparams, best_accuracy: acc, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub config: FeatureConfig,
    pub k_before: usize,
    pub k_after: usize,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<Metrics>,
    pub accuracy: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
    pub best_hyperparams: Hyperparams,
}

pub const EVAL_CSV_HEADER: &str = "dataset,config,model,k,f1,accuracy,precision,recall";

impl EvalReport {
    pub fn csv_row(&self, dataset: &str) -> String {
        format!(
            "{dataset},{},{},{}->{},{},{},{},{}",
            self.config.name(),
            self.model.name(),
            self.k_before,
            self.k_after,
            self.macro_f1,
            self.accuracy,
            self.macro_precision,
            self.macro_recall
        )
    }
}

pub fn write_eval_csv<W: Write>(dataset: &str, reports: &[EvalReport], mut w: W) -> Result<()> {
    writeln!(w, "{EVAL_CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row(dataset))?;
    }
    Ok(())
}

/// Trains and evaluates fixed hyperparameters on one split per seed.
pub fn run_eval_suite<T: Scalar>(
    task: &ClassTask<T>,
    hp: &Hyperparams,
    settings: &TrainSettings,
    seeds: &[u64],
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(invalid("evaluation needs at least one seed"));
    }
    let per_seed: Vec<Metrics> =
        seeds.par_iter().map(|&s| task.fit_and_score(hp, settings, s).map(|(_, m)| m)).collect::<Result<_>>()?;
    let col = |f: fn(&Metrics) -> f64| MeanStd::of(&per_seed.iter().map(f).collect::<Vec<_>>());
    Ok(EvalReport {
        model: hp.kind(),
        config: task.config,
        k_before: task.k_before,
        k_after: task.k_after,
        seeds: seeds.to_vec(),
        accuracy: col(|m| m.accuracy),
        macro_precision: col(|m| m.macro_precision),
        macro_recall: col(|m| m.macro_recall),
        macro_f1: col(|m| m.macro_f1),
        per_seed,
        best_hyperparams: *hp,
    })
}
