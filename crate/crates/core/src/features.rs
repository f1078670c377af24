//! Twenty hand-crafted features per series (15 temporal, 5 statistical) and
//! the three classifier input layouts built from them.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{mean, median, Scalar};

pub const N_FEATURES: usize = 20;

/// Feature names in extraction order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "autocorr_lag1",
    "centroid",
    "mean_abs_diff",
    "mean_diff",
    "median_abs_diff",
    "median_diff",
    "sum_abs_diff",
    "zero_cross_rate",
    "slope",
    "abs_energy",
    "area_under_curve",
    "entropy",
    "peak_to_peak",
    "pos_turning",
    "neg_turning",
    "max",
    "min",
    "mean",
    "variance",
    "std",
];

const ENTROPY_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FeatureVector<T: Scalar> {
    pub values: [T; N_FEATURES],
}

impl<T: Scalar> FeatureVector<T> {
    pub fn names() -> &'static [&'static str; N_FEATURES] {
        &FEATURE_NAMES
    }

    pub fn get(&self, name: &str) -> Option<T> {
        FEATURE_NAMES.iter().position(|&n| n == name).map(|i| self.values[i])
    }
}

fn pearson<T: Scalar>(a: &[T], b: &[T]) -> T {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = T::zero();
    let mut saa = T::zero();
    let mut sbb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        sab = sab + (x - ma) * (y - mb);
        saa = saa + (x - ma) * (x - ma);
        sbb = sbb + (y - mb) * (y - mb);
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return T::zero();
    }
    sab / (saa * sbb).sqrt()
}

/// Sign changes of `x` about its mean. Values within a relative dead zone of
/// the mean carry no sign and are skipped.
fn zero_crossings<T: Scalar>(x: &[T], mu: T, spread: T) -> usize {
    let tol = T::of(1e-12) * (mu.abs() + spread);
    let mut last = 0i8;
    let mut count = 0;
    for &v in x {
        let c = v - mu;
        let s = if c > tol {
            1
        } else if c < -tol {
            -1
        } else {
            0
        };
        if s != 0 {
            if last != 0 && s != last {
                count += 1;
            }
            last = s;
        }
    }
    count
}

fn entropy<T: Scalar>(x: &[T], lo: T, hi: T) -> T {
    let span = hi - lo;
    if !(span > T::zero()) {
        return T::zero();
    }
    let mut counts = [0usize; ENTROPY_BINS];
    let bins = T::of_usize(ENTROPY_BINS);
    for &v in x {
        let b = ((v - lo) / span * bins).floor().to_usize().unwrap_or(0);
        counts[b.min(ENTROPY_BINS - 1)] += 1;
    }
    let n = T::of_usize(x.len());
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = T::of_usize(c) / n;
            -p * p.ln()
        })
        .sum()
}

pub fn extract_features<T: Scalar>(x: &[T]) -> Result<FeatureVector<T>> {
    let n = x.len();
    if n < 3 {
        return Err(invalid(format!("feature extraction needs length >= 3, got {n}")));
    }
    let diffs: Vec<T> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let abs_diffs: Vec<T> = diffs.iter().map(|d| d.abs()).collect();
    let mu = mean(x);
    let mx = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mn = x.iter().copied().fold(T::infinity(), T::min);
    let variance = x.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / T::of_usize(n);
    let energy: T = x.iter().map(|&v| v * v).sum();
    let centroid = if energy > T::zero() {
        x.iter().enumerate().map(|(t, &v)| T::of_usize(t) * v * v).sum::<T>() / energy
    } else {
        T::zero()
    };
    let t_mean = T::of_usize(n - 1) * T::half();
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (t, &v) in x.iter().enumerate() {
        let dt = T::of_usize(t) - t_mean;
        sxy = sxy + dt * (v - mu);
        sxx = sxx + dt * dt;
    }
    let slope = sxy / sxx;
    let area: T = x.windows(2).map(|w| (w[0] + w[1]) * T::half()).sum();
    let (mut pos, mut neg) = (0usize, 0usize);
    for w in x.windows(3) {
        if w[0] < w[1] && w[1] > w[2] {
            pos += 1;
        }
        if w[0] > w[1] && w[1] < w[2] {
            neg += 1;
        }
    }
    let crossings = zero_crossings(x, mu, mx - mn);

    Ok(FeatureVector {
        values: [
            pearson(&x[..n - 1], &x[1..]),
            centroid,
            mean(&abs_diffs),
            mean(&diffs),
            median(&abs_diffs),
            median(&diffs),
            abs_diffs.iter().copied().sum(),
            T::of_usize(crossings) / T::of_usize(n - 1),
            slope,
            energy,
            area,
            entropy(x, mn, mx),
            mx - mn,
            T::of_usize(pos),
            T::of_usize(neg),
            mx,
            mn,
            mu,
            variance,
            variance.sqrt(),
        ],
    })
}

/// Which inputs a classifier sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureConfig {
    /// The raw series only.
    Default,
    /// The 20 extracted features only.
    FeatOnly,
    /// The raw series followed by the 20 features.
    WithFeats,
}

impl FeatureConfig {
    pub const ALL: [FeatureConfig; 3] = [Self::Default, Self::FeatOnly, Self::WithFeats];

    pub fn name(self) -> &'static str {
        match self {
            Self::Default => "default",
            Self::FeatOnly => "feat_only",
            Self::WithFeats => "with_feats",
        }
    }
}

impl std::str::FromStr for FeatureConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| invalid(format!("unknown feature config {s:?}")))
    }
}

/// Provenance of every input position: which positions are timesteps and
/// which are extracted features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub config: FeatureConfig,
    pub series_len: usize,
}

impl InputLayout {
    pub fn new(config: FeatureConfig, series_len: usize) -> Self {
        Self { config, series_len }
    }

    pub fn len(&self) -> usize {
        match self.config {
            FeatureConfig::Default => self.series_len,
            FeatureConfig::FeatOnly => N_FEATURES,
            FeatureConfig::WithFeats => self.series_len + N_FEATURES,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of leading positions that are timesteps.
    pub fn time_len(&self) -> usize {
        match self.config {
            FeatureConfig::FeatOnly => 0,
            _ => self.series_len,
        }
    }

    /// `t{i}` for timesteps, the feature name otherwise.
    pub fn position_name(&self, i: usize) -> String {
        let t = self.time_len();
        if i < t {
            format!("t{i}")
        } else {
            FEATURE_NAMES[i - t].to_string()
        }
    }

    pub fn position_names(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.position_name(i)).collect()
    }
}

pub fn concat_config<T: Scalar>(x: &[T], f: &FeatureVector<T>, config: FeatureConfig) -> Vec<T> {
    match config {
        FeatureConfig::Default => x.to_vec(),
        FeatureConfig::FeatOnly => f.values.to_vec(),
        FeatureConfig::WithFeats => x.iter().chain(f.values.iter()).copied().collect(),
    }
}

/// Builds classifier inputs for every series.
pub fn build_inputs<T: Scalar>(series: &[Vec<T>], config: FeatureConfig) -> Result<(Vec<Vec<T>>, InputLayout)> {
    let t = series.first().map_or(0, Vec::len);
    let rows = series.par_iter().map(|x| Ok(concat_config(x, &extract_features(x)?, config))).collect::<Result<_>>()?;
    Ok((rows, InputLayout::new(config, t)))
}

/// Writes `id,<feature names>` rows.
pub fn write_feature_csv<T: Scalar, W: Write>(ids: &[String], features: &[FeatureVector<T>], mut w: W) -> Result<()> {
    writeln!(w, "id,{}", FEATURE_NAMES.join(","))?;
    for (id, f) in ids.iter().zip(features) {
        let vals: Vec<String> = f.values.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{id},{}", vals.join(","))?;
    }
    Ok(())
}
