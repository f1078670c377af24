//! Synthetic collections with planted structure: separable constant-level
//! blobs and series that differ only by a class-specific spike motif.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesCollection;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Blobs,
    Spikes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_classes: usize,
    pub n_per_class: usize,
    pub len: usize,
    pub noise_sigma: f64,
    /// One spike position per class (spikes only).
    pub spike_positions: Vec<usize>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn blobs(n_classes: usize, n_per_class: usize, len: usize, noise_sigma: f64, seed: u64) -> Self {
        Self { kind: SyntheticKind::Blobs, n_classes, n_per_class, len, noise_sigma, spike_positions: Vec::new(), seed }
    }

    pub fn spikes(spike_positions: Vec<usize>, n_per_class: usize, len: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::Spikes,
            n_classes: spike_positions.len(),
            n_per_class,
            len,
            noise_sigma,
            spike_positions,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.n_per_class == 0 || self.len == 0 {
            return Err(invalid("synthetic data needs >= 2 classes, >= 1 series per class and length >= 1"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(invalid(format!("noise sigma must be finite and >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

impl Default for SyntheticSpec {
    /// Three blobs of 30 series, length 50, sigma 0.1.
    fn default() -> Self {
        Self::blobs(3, 30, 50, 0.1, 0)
    }
}

/// A generated collection with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData<T> {
    pub collection: TimeSeriesCollection<T>,
    pub labels: Vec<usize>,
    /// Planted spike position of every series (empty for blobs).
    pub salient: Vec<usize>,
}

/// Level of class `c`; levels are `max(10 sigma, 1)` apart.
pub fn blob_level(c: usize, noise_sigma: f64) -> f64 {
    c as f64 * (10.0 * noise_sigma).max(1.0)
}

/// Unit-amplitude three-point motifs, one per class, centred on the spike
/// position. No motif is a shift of another, so a translation-invariant
/// model can tell the classes apart.
pub const SPIKE_MOTIFS: [[f64; 3]; 8] = [
    [1.0, 1.0, 1.0],
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0],
    [-1.0, 1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
];

fn spike_value(c: usize, centre: usize, t: usize) -> f64 {
    if t + 1 >= centre && t <= centre + 1 {
        SPIKE_MOTIFS[c][t + 1 - centre]
    } else {
        0.0
    }
}

fn generate<T: Scalar>(spec: &SyntheticSpec, mean: impl Fn(usize, usize) -> f64) -> Result<SyntheticData<T>> {
    let mut rng = seed::rng(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| invalid(e.to_string()))?;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for c in 0..spec.n_classes {
        for i in 0..spec.n_per_class {
            ids.push(format!("c{c}_{i:03}"));
            values.push((0..spec.len).map(|t| T::of(mean(c, t) + noise.sample(&mut rng))).collect());
            labels.push(c);
        }
    }
    let tags = labels.iter().map(|&l| l as i64).collect();
    let collection = TimeSeriesCollection::from_rows(ids, values, Some(tags))?;
    Ok(SyntheticData { collection, labels, salient: Vec::new() })
}

/// Class `c` is the constant [`blob_level`] plus Gaussian noise.
pub fn gen_blobs<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticData<T>> {
    spec.validate()?;
    generate(spec, |c, _| blob_level(c, spec.noise_sigma))
}

/// Class `c` is Gaussian noise plus motif `c` of [`SPIKE_MOTIFS`] centred on
/// its own position.
pub fn gen_spikes<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticData<T>> {
    spec.validate()?;
    let pos = &spec.spike_positions;
    if pos.len() != spec.n_classes {
        return Err(invalid("spikes need one position per class"));
    }
    if spec.n_classes > SPIKE_MOTIFS.len() {
        return Err(invalid(format!("at most {} spike classes", SPIKE_MOTIFS.len())));
    }
    if let Some(&p) = pos.iter().find(|&&p| p == 0 || p + 1 >= spec.len) {
        return Err(invalid(format!("spike at {p} does not fit a series of length {}", spec.len)));
    }
    for a in 0..pos.len() {
        for b in a + 1..pos.len() {
            if pos[a].abs_diff(pos[b]) < 3 {
                return Err(invalid("spike positions overlap"));
            }
        }
    }
    let mut data = generate(spec, |c, t| spike_value(c, pos[c], t))?;
    data.salient = data.labels.iter().map(|&c| pos[c]).collect();
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{adjusted_rand_index, kmeans_fit, suggest_k};

    #[test]
    fn noiseless_blobs_are_constant_groups() {
        let d: SyntheticData<f64> = gen_blobs(&SyntheticSpec::blobs(3, 4, 6, 0.0, 1)).unwrap();
        for (row, &c) in d.collection.values().iter().zip(&d.labels) {
            assert!(row.iter().all(|&v| v == c as f64));
        }
        assert_eq!(d.collection.labels().unwrap()[5], 1);
    }

    #[test]
    fn kmeans_recovers_blobs() {
        let d: SyntheticData<f64> = gen_blobs(&SyntheticSpec::default()).unwrap();
        let r = kmeans_fit(&d.collection, 3, 0, 100).unwrap();
        assert_eq!(adjusted_rand_index(&r.assignments, &d.labels).unwrap(), 1.0);
        let ks: Vec<usize> = (2..=6).collect();
        let inertias: Vec<f64> = ks.iter().map(|&k| kmeans_fit(&d.collection, k, 0, 100).unwrap().inertia).collect();
        assert_eq!(suggest_k(&ks, &inertias).unwrap(), 3);
    }

    #[test]
    fn noiseless_spikes() {
        let d: SyntheticData<f64> = gen_spikes(&SyntheticSpec::spikes(vec![10, 40, 25], 3, 50, 0.0, 0)).unwrap();
        let rows = d.collection.values();
        for t in 0..50 {
            let col: Vec<f64> = rows.iter().map(|r| r[t]).collect();
            let varies = col.iter().any(|&v| v != col[0]);
            assert_eq!(varies, [9, 10, 11, 39, 40, 41, 24, 25, 26].contains(&t), "position {t}");
        }
        assert_eq!(&rows[0][8..13], &[0.0, 1.0, 1.0, 1.0, 0.0]);
        assert_eq!(&rows[3][39..42], &[-1.0, -1.0, -1.0]);
        assert_eq!(&rows[6][23..28], &[0.0, 1.0, -1.0, 1.0, 0.0]);
        assert_eq!(d.salient[4], 40);
    }

    #[test]
    fn spike_errors_and_determinism() {
        assert!(gen_spikes::<f64>(&SyntheticSpec::spikes(vec![3, 3], 2, 10, 0.1, 0)).is_err());
        assert!(gen_spikes::<f64>(&SyntheticSpec::spikes(vec![3, 10], 2, 10, 0.1, 0)).is_err());
        assert!(gen_spikes::<f64>(&SyntheticSpec::spikes(vec![1, 5, 7], 2, 10, 0.1, 0)).is_err());
        assert!(gen_spikes::<f64>(&SyntheticSpec::spikes(vec![0, 5], 2, 10, 0.1, 0)).is_err());
        assert!(gen_spikes::<f64>(&SyntheticSpec::spikes((1..10).map(|c| 10 * c).collect(), 2, 100, 0.1, 0)).is_err());
        assert!(gen_spikes::<f64>(&SyntheticSpec::spikes(vec![1, 4, 8], 2, 10, 0.1, 0)).is_ok());
        assert!(gen_blobs::<f64>(&SyntheticSpec::blobs(2, 2, 5, -1.0, 0)).is_err());
        let s = SyntheticSpec::spikes(vec![2, 7], 5, 10, 0.3, 9);
        assert_eq!(gen_spikes::<f64>(&s).unwrap(), gen_spikes::<f64>(&s).unwrap());
    }
}
