use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tsxplain::clustering::{k_plan, kmeans_fit, pam_fit, suggest_k, validity, validity_precomputed, ValidityScores};
use tsxplain::distance::{collection_hash, DistanceCache};
use tsxplain::{seed, Clustering, Collection, Distances};

use crate::config::{Algorithm, KChoice, RunConfig};
use crate::error::{PipelineError, Result};
use crate::manifest::ArtifactWriter;

pub const ELBOW_CSV: &str = "elbow.csv";
pub const ELBOW_JSON: &str = "elbow.json";
pub const CLUSTERING_JSON: &str = "clustering.json";
pub const CACHE_DIR: &str = "cache";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elbow {
    pub ks: Vec<usize>,
    pub inertias: Vec<f64>,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    /// Medium cluster count.
    pub k_medium: usize,
    pub elbow: Option<Elbow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLevel {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub sizes: Vec<usize>,
    pub inertia: Option<f64>,
    pub validity: Option<ValidityScores<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// The dataset's labels, densely re-indexed.
    Labels {
        label_values: Vec<i64>,
    },
    Fitted {
        algorithm: Algorithm,
        metric: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutput {
    pub mode: ClusterMode,
    pub ids: Vec<String>,
    pub k_medium: usize,
    pub elbow: Option<Elbow>,
    /// Levels in increasing k; the medium level is always present.
    pub levels: Vec<ClusterLevel>,
    pub notes: Vec<String>,
}

impl ClusterOutput {
    pub fn medium(&self) -> &ClusterLevel {
        self.levels.iter().find(|l| l.k == self.k_medium).expect("medium level present")
    }
}

struct Fitter<'a> {
    cfg: &'a RunConfig,
    c: &'a Collection,
    distances: Option<Distances>,
}

impl<'a> Fitter<'a> {
    fn new(cfg: &'a RunConfig, c: &'a Collection, w: &mut ArtifactWriter) -> Result<Self> {
        let distances = match cfg.clustering.algorithm {
            Algorithm::Kmeans => None,
            Algorithm::Kmedoids => {
                let cache = DistanceCache::new(w.root().join(CACHE_DIR));
                let (d, _) = cache.get_or_compute(c, &cfg.clustering.metric)?;
                let key = DistanceCache::key(&collection_hash(c), &cfg.clustering.metric);
                let file = DistanceCache::new(CACHE_DIR).path_for(&key);
                w.register(&file.to_string_lossy())?;
                Some(d)
            }
        };
        Ok(Self { cfg, c, distances })
    }

    fn fit(&self, k: usize) -> Result<Clustering> {
        let cl = &self.cfg.clustering;
        Ok(match &self.distances {
            None => {
                let s = seed::derive(self.cfg.master_seed, &format!("kmeans/k{k}"));
                kmeans_fit(self.c, k, s, cl.max_iter)?
            }
            Some(d) => pam_fit(d, k)?,
        })
    }

    fn validity(&self, r: &Clustering) -> Result<ValidityScores<f64>> {
        Ok(match &self.distances {
            None => validity(self.c, r)?,
            Some(d) => validity_precomputed(d, r)?,
        })
    }
}

fn elbow_csv(e: &Elbow) -> String {
    let mut s = String::from("k,inertia\n");
    for (k, v) in e.ks.iter().zip(&e.inertias) {
        s.push_str(&format!("{k},{v}\n"));
    }
    s
}

fn assignments_csv(ids: &[String], a: &[usize]) -> String {
    let mut s = String::from("id,cluster\n");
    for (id, c) in ids.iter().zip(a) {
        s.push_str(&format!("{id},{c}\n"));
    }
    s
}

/// Elbow selection of the medium k (or the fixed k from the config).
pub fn select_k(cfg: &RunConfig, c: &Collection, w: &mut ArtifactWriter) -> Result<KSelection> {
    let sel = match cfg.clustering.k {
        KChoice::Fixed(k) => KSelection { k_medium: k, elbow: None },
        KChoice::Auto(_) => {
            let fitter = Fitter::new(cfg, c, w)?;
            let ks: Vec<usize> = cfg.clustering.candidates.iter().copied().filter(|&k| k <= c.len()).collect();
            if ks.len() < 3 {
                return Err(PipelineError::Other(format!("fewer than 3 candidate k values fit {} series", c.len())));
            }
            let inertias = ks.iter().map(|&k| fitter.fit(k).map(|r| r.inertia)).collect::<Result<Vec<f64>>>()?;
            let selected = suggest_k(&ks, &inertias)?;
            let e = Elbow { ks, inertias, selected };
            w.write(ELBOW_CSV, elbow_csv(&e))?;
            KSelection { k_medium: selected, elbow: Some(e) }
        }
    };
    w.write_json(ELBOW_JSON, &sel)?;
    Ok(sel)
}

pub fn reload_selection(root: &Path) -> Result<KSelection> {
    read_json(&root.join(ELBOW_JSON))
}

/// Labels-as-clusters: dense cluster indices in sorted label order.
pub fn from_labels(c: &Collection, w: &mut ArtifactWriter) -> Result<ClusterOutput> {
    let labels = c
        .labels()
        .ok_or_else(|| PipelineError::Other("labels_as_clusters needs a label column in the dataset".into()))?;
    let values: Vec<i64> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let assignments: Vec<usize> = labels.iter().map(|l| values.binary_search(l).expect("label present")).collect();
    let k = values.len();
    let mut sizes = vec![0; k];
    for &a in &assignments {
        sizes[a] += 1;
    }
    w.write(&format!("clusters_k{k}.csv"), assignments_csv(c.ids(), &assignments))?;
    let out = ClusterOutput {
        mode: ClusterMode::Labels { label_values: values },
        ids: c.ids().to_vec(),
        k_medium: k,
        elbow: None,
        levels: vec![ClusterLevel { k, assignments, sizes, inertia: None, validity: None }],
        notes: Vec::new(),
    };
    w.write_json(CLUSTERING_JSON, &out)?;
    Ok(out)
}

/// Fits the low, medium and high levels around the selected k.
pub fn fit_levels(cfg: &RunConfig, c: &Collection, sel: &KSelection, w: &mut ArtifactWriter) -> Result<ClusterOutput> {
    let fitter = Fitter::new(cfg, c, w)?;
    let n = c.len();
    let wanted: Vec<usize> = match k_plan(sel.k_medium) {
        Ok(p) => p.levels().to_vec(),
        Err(_) => vec![sel.k_medium],
    };
    let mut notes = Vec::new();
    let mut levels = Vec::new();
    for k in wanted {
        if k >= n {
            if k == sel.k_medium {
                return Err(PipelineError::Other(format!("medium k = {k} needs more than {n} series")));
            }
            notes.push(format!("level k = {k} skipped: needs more than {n} series"));
            continue;
        }
        let r = fitter.fit(k)?;
        let v = fitter.validity(&r).map_err(|e| PipelineError::Other(format!("validity at k = {k}: {e}")));
        let validity = match v {
            Ok(v) => Some(v),
            Err(e) => {
                notes.push(e.to_string());
                None
            }
        };
        w.write(&format!("clusters_k{k}.csv"), assignments_csv(c.ids(), &r.assignments))?;
        levels.push(ClusterLevel {
            k,
            sizes: r.cluster_sizes(),
            assignments: r.assignments,
            inertia: Some(r.inertia),
            validity,
        });
    }
    let out = ClusterOutput {
        mode: ClusterMode::Fitted { algorithm: cfg.clustering.algorithm, metric: cfg.clustering.metric.descriptor() },
        ids: c.ids().to_vec(),
        k_medium: sel.k_medium,
        elbow: sel.elbow.clone(),
        levels,
        notes,
    };
    w.write_json(CLUSTERING_JSON, &out)?;
    Ok(out)
}

pub fn reload(root: &Path) -> Result<ClusterOutput> {
    read_json(&root.join(CLUSTERING_JSON))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}
