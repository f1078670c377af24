//! Orchestration of the preprocess, cluster, classify and explain stages
//! under one JSON configuration, with a manifest of every artifact written.

pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod stages;
pub mod svg;

use std::fmt;
use std::fs;
use std::path::Path;

use serde_json::json;
use sha2::{Digest, Sha256};

pub use config::RunConfig;
pub use error::{PipelineError, Result};
pub use manifest::{RunManifest, StageStatus, Workspace};

use config::{hash_json, hex};
use stages::{classify, cluster, explain, preprocess};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StageName {
    Preprocess,
    SelectK,
    Cluster,
    Classify,
    Explain,
    Report,
}

impl StageName {
    pub const ALL: [StageName; 6] =
        [Self::Preprocess, Self::SelectK, Self::Cluster, Self::Classify, Self::Explain, Self::Report];

    pub fn name(self) -> &'static str {
        match self {
            Self::Preprocess => "preprocess",
            Self::SelectK => "selectk",
            Self::Cluster => "cluster",
            Self::Classify => "classify",
            Self::Explain => "explain",
            Self::Report => "report",
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn file_sha(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn chain(prev: &str, stage: StageName, inputs: serde_json::Value) -> String {
    hash_json(&json!({ "upstream": prev, "stage": stage.name(), "inputs": inputs }))
}

/// Runs every stage.
pub fn run(cfg: &RunConfig) -> Result<RunManifest> {
    run_until(cfg, StageName::Report)
}

/// Runs the stages up to and including `last`. Stages whose inputs are
/// unchanged since the previous run in the same output directory are reused.
/// On failure the manifest records the error, downstream stages are marked
/// skipped and the stage error is returned.
pub fn run_until(cfg: &RunConfig, last: StageName) -> Result<RunManifest> {
    cfg.validate()?;
    let mut ws = Workspace::open(&cfg.output_dir, cfg.hash(), cfg.master_seed)?;
    let result = run_stages(cfg, last, &mut ws);
    if let Err(e) = &result {
        let failed = e.stage().unwrap_or("");
        let after = StageName::ALL.iter().skip_while(|s| s.name() != failed).skip(1);
        for s in after.filter(|s| **s <= last) {
            ws.skip(s.name(), &format!("upstream stage {failed} failed"));
        }
    }
    ws.save()?;
    result.map(|_| ws.manifest)
}

fn run_stages(cfg: &RunConfig, last: StageName, ws: &mut Workspace) -> Result<()> {
    let save = |ws: &Workspace| ws.save();
    let data_sha = file_sha(&cfg.dataset.path)
        .map_err(|e| PipelineError::Stage { stage: "preprocess".into(), source: Box::new(e) })?;
    let h_pre =
        chain(&data_sha, StageName::Preprocess, json!({ "dataset": cfg.dataset, "metric": cfg.clustering.metric }));
    let c = ws.stage("preprocess", h_pre.clone(), |w| preprocess::run(cfg, w), preprocess::reload)?;
    save(ws)?;
    if last == StageName::Preprocess {
        return Ok(());
    }

    let labels_mode = cfg.clustering.labels_as_clusters;
    let h_sel = chain(&h_pre, StageName::SelectK, json!({ "clustering": cfg.clustering, "seed": cfg.master_seed }));
    let selection = if labels_mode {
        ws.skip("selectk", "labels are used as clusters");
        None
    } else {
        let s = ws.stage("selectk", h_sel.clone(), |w| cluster::select_k(cfg, &c, w), cluster::reload_selection)?;
        save(ws)?;
        Some(s)
    };
    if last == StageName::SelectK {
        return Ok(());
    }

    let h_cl = chain(&h_sel, StageName::Cluster, json!(null));
    let clusters = ws.stage(
        "cluster",
        h_cl.clone(),
        |w| match &selection {
            None => cluster::from_labels(&c, w),
            Some(s) => cluster::fit_levels(cfg, &c, s, w),
        },
        cluster::reload,
    )?;
    save(ws)?;
    if last == StageName::Cluster {
        return Ok(());
    }

    let h_cls = chain(
        &h_cl,
        StageName::Classify,
        json!({ "classification": cfg.classification, "name": cfg.dataset.display_name() }),
    );
    let classified = ws.stage("classify", h_cls.clone(), |w| classify::run(cfg, &c, &clusters, w), classify::reload)?;
    save(ws)?;
    if last == StageName::Classify {
        return Ok(());
    }

    let h_ex = chain(&h_cls, StageName::Explain, json!({ "explain": cfg.explain }));
    if cfg.explain.enabled {
        ws.stage("explain", h_ex.clone(), |w| explain::run(cfg, &c, &clusters, &classified, w), explain::reload)?;
    } else {
        ws.skip("explain", "explanations disabled");
    }
    save(ws)?;
    if last == StageName::Explain {
        return Ok(());
    }
    report_stage(ws, &h_ex)
}

fn report_stage(ws: &mut Workspace, upstream: &str) -> Result<()> {
    let shas: Vec<&str> = ws.manifest.artifacts().map(|a| a.sha256.as_str()).collect();
    let h = chain(upstream, StageName::Report, json!(shas));
    let snapshot = ws.manifest.clone();
    let root = ws.root().to_path_buf();
    ws.stage("report", h, |w| report::emit_report(&snapshot, &root, w).map(|_| ()), |_| Ok(()))?;
    ws.save()
}

/// Regenerates the report over whatever the output directory's manifest
/// records as completed.
pub fn report_only(cfg: &RunConfig) -> Result<RunManifest> {
    let prev = RunManifest::load(&cfg.output_dir)?;
    let mut ws = Workspace::open(&cfg.output_dir, cfg.hash(), cfg.master_seed)?;
    ws.manifest.stages = prev.stages.into_iter().filter(|s| s.name != "report").collect();
    let upstream = hash_json(&ws.manifest.stages.iter().map(|s| &s.input_hash).collect::<Vec<_>>());
    report_stage(&mut ws, &upstream)?;
    Ok(ws.manifest)
}
