use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tsxplain::classify::{Hyperparams, ModelKind, TrainedModel};
use tsxplain::explain::{grad_cam, gradient_shap, rank_agreement, treeshap, Method};
use tsxplain::features::FeatureConfig;
use tsxplain::trees::gain_importance;
use tsxplain::{seed, AttributionF64, Collection, Explanations, Task};

use super::classify::{build_task, settings, ClassifyOutput};
use super::cluster::{read_json, ClusterOutput};
use crate::config::RunConfig;
use crate::error::{PipelineError, Result};
use crate::manifest::ArtifactWriter;

pub const EXPLANATIONS_JSON: &str = "explanations.json";
pub const AGREEMENT_CSV: &str = "agreement.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExplanations {
    pub config: FeatureConfig,
    pub model: ModelKind,
    pub hyperparams: Hyperparams,
    pub n_explained: usize,
    /// Aggregates only; per-sample attributions live in the samples CSVs.
    pub sets: Vec<Explanations>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub config: FeatureConfig,
    pub a: Method,
    pub b: Method,
    pub top_k: usize,
    pub spearman: f64,
    pub spearman_defined: bool,
    pub topk_jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOutput {
    pub k: usize,
    /// What the attributions explain.
    pub target: String,
    pub models: Vec<ModelExplanations>,
    pub agreement: Vec<AgreementRow>,
}

pub const TARGET_NOTE: &str = "attributions explain the predicted class's pre-softmax score: \
the boosted-tree margin for treeshap, the network logit for gradientshap and gradcam";

fn wants(cfg: &RunConfig, m: Method) -> bool {
    cfg.explain.methods.contains(&m)
}

fn explain_samples(
    cfg: &RunConfig,
    task: &Task,
    model: &TrainedModel<f64>,
    train: &[usize],
    explain_seed: u64,
) -> Result<Vec<(Method, Vec<AttributionF64>)>> {
    let xs: Vec<&Vec<f64>> = train.iter().map(|&i| &task.inputs[i]).collect();
    let ids: Vec<&String> = train.iter().map(|&i| &task.ids[i]).collect();
    let mut out = Vec::new();
    let with_ids = |attrs: Vec<AttributionF64>| -> Vec<AttributionF64> {
        attrs
            .into_iter()
            .zip(&ids)
            .map(|(mut a, id)| {
                a.sample_id = (*id).clone();
                a
            })
            .collect()
    };
    match model {
        TrainedModel::Gbt(e) if wants(cfg, Method::TreeShap) => {
            let attrs = xs.par_iter().map(|x| treeshap(e, x, e.predict(x)?)).collect::<tsxplain::Result<Vec<_>>>()?;
            out.push((Method::TreeShap, with_ids(attrs)));
        }
        TrainedModel::Fcn(m) => {
            if wants(cfg, Method::GradientShap) {
                let n_bg = cfg.explain.background.min(xs.len());
                let mut rng = seed::rng(seed::derive(explain_seed, "background"));
                let mut picks = sample(&mut rng, xs.len(), n_bg).into_vec();
                picks.sort_unstable();
                let bg: Vec<Vec<f64>> = picks.iter().map(|&i| xs[i].clone()).collect();
                let attrs = xs
                    .par_iter()
                    .zip(&ids)
                    .map(|(x, id)| {
                        let s = seed::derive(explain_seed, &format!("gradientshap/{id}"));
                        gradient_shap(m, x, &bg, m.predict(x)?, cfg.explain.n_samples, s)
                    })
                    .collect::<tsxplain::Result<Vec<_>>>()?;
                out.push((Method::GradientShap, with_ids(attrs)));
            }
            if wants(cfg, Method::GradCam) {
                let attrs =
                    xs.par_iter().map(|x| grad_cam(m, x, m.predict(x)?)).collect::<tsxplain::Result<Vec<_>>>()?;
                out.push((Method::GradCam, with_ids(attrs)));
            }
        }
        _ => {}
    }
    Ok(out)
}

fn agreement(cfg: &RunConfig, config: FeatureConfig, sets: &[&Explanations]) -> Result<Vec<AgreementRow>> {
    let mut rows = Vec::new();
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i + 1..] {
            let p = a.global.len();
            if p < 2 || b.global.len() != p {
                continue;
            }
            let k = cfg.explain.top_k.min(p);
            let r = rank_agreement(&a.global, &b.global, k)?;
            rows.push(AgreementRow {
                config,
                a: a.method,
                b: b.method,
                top_k: k,
                spearman: r.spearman,
                spearman_defined: r.spearman_defined,
                topk_jaccard: r.topk_jaccard,
            });
        }
    }
    Ok(rows)
}

fn agreement_csv(rows: &[AgreementRow]) -> String {
    let mut s = String::from("config,method_a,method_b,top_k,spearman,spearman_defined,topk_jaccard\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.config.name(),
            r.a.name(),
            r.b.name(),
            r.top_k,
            r.spearman,
            r.spearman_defined,
            r.topk_jaccard
        ));
    }
    s
}

/// Trains the tree and network models on the first seed's training split at
/// the medium k and explains every training sample.
pub fn run(
    cfg: &RunConfig,
    c: &Collection,
    clusters: &ClusterOutput,
    classified: &ClassifyOutput,
    w: &mut ArtifactWriter,
) -> Result<ExplainOutput> {
    let k = clusters.k_medium;
    let medium = clusters.medium();
    let settings = settings(cfg);
    let split_seed = cfg.classification.seeds[0];
    let mut models = Vec::new();
    let mut agreements = Vec::new();
    for &config in &cfg.classification.configs {
        let task = build_task(cfg, c, &medium.assignments, config)?;
        let names = task.layout.position_names();
        let time_len = task.layout.time_len();
        let mut config_sets = Vec::new();
        for model_kind in [ModelKind::Gbt, ModelKind::Fcn] {
            if !cfg.classification.models.contains(&model_kind) {
                continue;
            }
            let hp = classified.hyperparams(config, model_kind).ok_or_else(|| {
                PipelineError::Other(format!("no hyperparameters for {} {}", config.name(), model_kind.name()))
            })?;
            let (model, train) = task.fit_train_split(&hp, &settings, split_seed)?;
            let stem = format!("k{k}_{}_{}", config.name(), model_kind.name());
            w.write_json(&format!("models/{stem}.json"), &model)?;
            let labels: Vec<usize> = train.iter().map(|&i| task.mapping[task.labels[i]]).collect();
            let explain_seed =
                seed::derive(cfg.master_seed, &format!("explain/{}/{}", config.name(), model_kind.name()));
            let mut sets = Vec::new();
            for (method, attrs) in explain_samples(cfg, &task, &model, &train, explain_seed)? {
                let window = (time_len > 0).then_some(cfg.explain.window);
                sets.push(Explanations::build(method, names.clone(), time_len, attrs, &labels, window)?);
            }
            if let TrainedModel::Gbt(e) = &model {
                if wants(cfg, Method::TreeGain) {
                    sets.push(Explanations::from_global(
                        Method::TreeGain,
                        names.clone(),
                        time_len,
                        gain_importance(e),
                    )?);
                }
            }
            for set in &mut sets {
                let base = format!("explain/{stem}_{}", set.method.name());
                w.write_with(&format!("{base}.csv"), |b| set.write_csv(b))?;
                if set.windowed.is_some() {
                    w.write_with(&format!("{base}_windowed.csv"), |b| set.write_windowed_csv(b))?;
                }
                if cfg.explain.per_sample && !set.attributions.is_empty() {
                    w.write_with(&format!("{base}_samples.csv"), |b| set.write_samples_csv(b))?;
                }
                set.attributions.clear();
            }
            config_sets.extend(sets.iter().cloned());
            models.push(ModelExplanations {
                config,
                model: model_kind,
                hyperparams: hp,
                n_explained: train.len(),
                sets,
            });
        }
        let refs: Vec<&Explanations> = config_sets.iter().collect();
        agreements.extend(agreement(cfg, config, &refs)?);
    }
    w.write(AGREEMENT_CSV, agreement_csv(&agreements))?;
    let out = ExplainOutput { k, target: TARGET_NOTE.into(), models, agreement: agreements };
    w.write_json(EXPLANATIONS_JSON, &out)?;
    Ok(out)
}

pub fn reload(root: &Path) -> Result<ExplainOutput> {
    read_json(&root.join(EXPLANATIONS_JSON))
}
