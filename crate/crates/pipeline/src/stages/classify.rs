use std::path::Path;

use serde::{Deserialize, Serialize};
use tsxplain::classify::{
    default_grid, grid_search, run_eval_suite, write_eval_csv, EvalReport, GridResult, Hyperparams, ModelKind,
    TrainSettings,
};
use tsxplain::features::FeatureConfig;
use tsxplain::{seed, Collection, Task};

use super::cluster::{read_json, ClusterOutput};
use crate::config::RunConfig;
use crate::error::Result;
use crate::manifest::ArtifactWriter;

pub const CLASSIFICATION_CSV: &str = "classification.csv";
pub const CLASSIFICATION_JSON: &str = "classification.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub config: FeatureConfig,
    pub model: ModelKind,
    pub hyperparams: Hyperparams,
    /// Grid accuracy at the medium k, when the grid was searched.
    pub grid_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    /// Clustering level the task was built from.
    pub level_k: usize,
    /// Series removed by downsampling the largest cluster.
    pub downsampled: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOutput {
    pub dataset: String,
    pub tuned: Vec<Tuned>,
    pub rows: Vec<LevelRow>,
}

impl ClassifyOutput {
    pub fn hyperparams(&self, config: FeatureConfig, model: ModelKind) -> Option<Hyperparams> {
        self.tuned.iter().find(|t| t.config == config && t.model == model).map(|t| t.hyperparams)
    }
}

pub fn settings(cfg: &RunConfig) -> TrainSettings {
    let c = &cfg.classification;
    TrainSettings { gbt_rounds: c.gbt_rounds, fcn_epochs: c.fcn_epochs, fcn_batch_size: c.fcn_batch_size }
}

/// The classification task for one clustering level and feature config.
pub fn build_task(cfg: &RunConfig, c: &Collection, assignments: &[usize], config: FeatureConfig) -> Result<Task> {
    let s = seed::derive(cfg.master_seed, "downsample");
    Ok(Task::build(c.ids(), c.values(), assignments, config, s)?)
}

pub fn run(
    cfg: &RunConfig,
    c: &Collection,
    clusters: &ClusterOutput,
    w: &mut ArtifactWriter,
) -> Result<ClassifyOutput> {
    let cc = &cfg.classification;
    let settings = settings(cfg);
    let medium = clusters.medium();
    let mut tuned = Vec::new();
    for &config in &cc.configs {
        let task = build_task(cfg, c, &medium.assignments, config)?;
        for &model in &cc.models {
            let t = if cc.grid {
                let g: GridResult = grid_search(&task, &default_grid(model), &settings, cc.seeds[0])?;
                w.write_json(&format!("grid/{}_{}.json", config.name(), model.name()), &g)?;
                Tuned { config, model, hyperparams: g.best, grid_accuracy: Some(g.best_accuracy) }
            } else {
                Tuned { config, model, hyperparams: Hyperparams::default_for(model), grid_accuracy: None }
            };
            tuned.push(t);
        }
    }
    let mut rows = Vec::new();
    for level in &clusters.levels {
        for &config in &cc.configs {
            let task = build_task(cfg, c, &level.assignments, config)?;
            for t in tuned.iter().filter(|t| t.config == config) {
                let report = run_eval_suite(&task, &t.hyperparams, &settings, &cc.seeds)?;
                rows.push(LevelRow { level_k: level.k, downsampled: task.v, report });
            }
        }
    }
    let dataset = cfg.dataset.display_name();
    let reports: Vec<EvalReport> = rows.iter().map(|r| r.report.clone()).collect();
    w.write_with(CLASSIFICATION_CSV, |b| write_eval_csv(&dataset, &reports, b))?;
    let out = ClassifyOutput { dataset, tuned, rows };
    w.write_json(CLASSIFICATION_JSON, &out)?;
    Ok(out)
}

pub fn reload(root: &Path) -> Result<ClassifyOutput> {
    read_json(&root.join(CLASSIFICATION_JSON))
}
