//! The JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tsxplain::classify::{ModelKind, EVAL_SEEDS};
use tsxplain::distance::Metric;
use tsxplain::explain::Method;
use tsxplain::features::FeatureConfig;

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub classification: ClassificationConfig,
    #[serde(default)]
    pub explain: ExplainConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// Name used in result tables; defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub slice: Option<SliceConfig>,
    #[serde(default)]
    pub preprocessing: PreprocessConfig,
}

impl DatasetConfig {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceConfig {
    pub start: usize,
    pub len: usize,
}

/// Preprocessing steps, applied in the order drop_sparse, slice,
/// fill_missing, minmax, remove_outliers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Drop series whose missing fraction exceeds this threshold.
    #[serde(default)]
    pub drop_sparse: Option<f64>,
    #[serde(default)]
    pub fill_missing: bool,
    /// Per-series min-max scaling to `[lo, hi]`.
    #[serde(default)]
    pub minmax: Option<[f64; 2]>,
    /// Tukey-fence outlier removal under the clustering metric.
    #[serde(default)]
    pub remove_outliers: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Kmeans,
    Kmedoids,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// Either a fixed medium `k` or `"auto"` (elbow over the candidates).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KChoice {
    Fixed(usize),
    Auto(Auto),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Use the dataset's labels as the clustering and skip fitting.
    #[serde(default)]
    pub labels_as_clusters: bool,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_metric")]
    pub metric: Metric<f64>,
    #[serde(default = "default_k")]
    pub k: KChoice,
    #[serde(default = "default_candidates")]
    pub candidates: Vec<usize>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Kmeans
}
fn default_metric() -> Metric<f64> {
    Metric::Euclidean
}
fn default_k() -> KChoice {
    KChoice::Auto(Auto::Auto)
}
fn default_candidates() -> Vec<usize> {
    (2..=10).collect()
}
fn default_max_iter() -> usize {
    300
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            labels_as_clusters: false,
            algorithm: default_algorithm(),
            metric: default_metric(),
            k: default_k(),
            candidates: default_candidates(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationConfig {
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_configs")]
    pub configs: Vec<FeatureConfig>,
    /// Tune hyperparameters on the medium-k task before evaluation.
    #[serde(default)]
    pub grid: bool,
    /// Seeds of the train-test splits.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_rounds")]
    pub gbt_rounds: usize,
    #[serde(default = "default_epochs")]
    pub fcn_epochs: usize,
    #[serde(default = "default_batch")]
    pub fcn_batch_size: usize,
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}
fn default_configs() -> Vec<FeatureConfig> {
    FeatureConfig::ALL.to_vec()
}
fn default_seeds() -> Vec<u64> {
    EVAL_SEEDS.to_vec()
}
fn default_rounds() -> usize {
    100
}
fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    32
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self {
            models: default_models(),
            configs: default_configs(),
            grid: false,
            seeds: default_seeds(),
            gbt_rounds: default_rounds(),
            fcn_epochs: default_epochs(),
            fcn_batch_size: default_batch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainConfig {
    #[serde(default = "default_enabled")]
    pub enabled: bool,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// GradientSHAP draws per sample.
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// Maximum GradientSHAP background size.
    #[serde(default = "default_background")]
    pub background: usize,
    /// Also write per-sample attribution matrices.
    #[serde(default)]
    pub per_sample: bool,
}

fn default_enabled() -> bool {
    true
}
fn default_methods() -> Vec<Method> {
    vec![Method::TreeShap, Method::TreeGain, Method::GradientShap, Method::GradCam]
}
fn default_window() -> usize {
    5
}
fn default_top_k() -> usize {
    10
}
fn default_n_samples() -> usize {
    200
}
fn default_background() -> usize {
    100
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            methods: default_methods(),
            window: default_window(),
            top_k: default_top_k(),
            n_samples: default_n_samples(),
            background: default_background(),
            per_sample: false,
        }
    }
}

fn bad(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl RunConfig {
    /// A configuration with defaults everywhere except the dataset path.
    pub fn for_dataset(path: impl Into<PathBuf>) -> Self {
        Self {
            dataset: DatasetConfig {
                path: path.into(),
                name: None,
                slice: None,
                preprocessing: PreprocessConfig::default(),
            },
            clustering: ClusteringConfig::default(),
            classification: ClassificationConfig::default(),
            explain: ExplainConfig::default(),
            output_dir: default_output_dir(),
            master_seed: 0,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| bad(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.dataset.preprocessing.drop_sparse {
            if !(t > 0.0 && t <= 1.0) {
                return Err(bad(format!("drop_sparse threshold {t} not in (0, 1]")));
            }
        }
        if let Some([lo, hi]) = self.dataset.preprocessing.minmax {
            if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                return Err(bad(format!("minmax range [{lo}, {hi}] is empty")));
            }
        }
        if let Some(s) = self.dataset.slice {
            if s.len < 2 {
                return Err(bad("slice length must be at least 2"));
            }
        }
        let cl = &self.clustering;
        if cl.algorithm == Algorithm::Kmeans && cl.metric != Metric::Euclidean {
            return Err(bad(format!("kmeans requires the euclidean metric, got {}", cl.metric)));
        }
        cl.metric.validate()?;
        if !cl.labels_as_clusters {
            match cl.k {
                KChoice::Fixed(k) if k < 2 => return Err(bad(format!("k must be at least 2, got {k}"))),
                KChoice::Auto(_) => {
                    if cl.candidates.len() < 3 {
                        return Err(bad("k = \"auto\" needs at least 3 candidate values"));
                    }
                    if cl.candidates.windows(2).any(|w| w[0] >= w[1]) || cl.candidates[0] < 1 {
                        return Err(bad("k candidates must be positive and strictly increasing"));
                    }
                }
                _ => {}
            }
        }
        let c = &self.classification;
        if c.models.is_empty() {
            return Err(bad("select at least one model"));
        }
        if c.configs.is_empty() {
            return Err(bad("select at least one feature configuration"));
        }
        if c.seeds.is_empty() {
            return Err(bad("select at least one seed"));
        }
        if c.gbt_rounds == 0 || c.fcn_epochs == 0 || c.fcn_batch_size == 0 {
            return Err(bad("gbt_rounds, fcn_epochs and fcn_batch_size must be positive"));
        }
        let e = &self.explain;
        if e.window == 0 || e.top_k == 0 || e.n_samples == 0 || e.background == 0 {
            return Err(bad("explain window, top_k, n_samples and background must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub(crate) fn hash_json<S: Serialize>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("config serialises");
    hex(&Sha256::digest(&bytes))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
