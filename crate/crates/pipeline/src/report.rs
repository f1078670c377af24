//! Summary report and plots over whatever stages completed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tsxplain::explain::top_k;
use tsxplain::Collection;

use crate::error::{PipelineError, Result};
use crate::manifest::{ArtifactWriter, RunManifest};
use crate::stages::classify::{self, ClassifyOutput};
use crate::stages::cluster::{self, ClusterMode, ClusterOutput, Elbow};
use crate::stages::explain::{self, AgreementRow, ExplainOutput};
use crate::stages::preprocess::{self, PreprocessSummary, PREPROCESS_JSON};
use crate::svg::{render, Line, Panel};

pub const REPORT_JSON: &str = "report.json";
pub const ELBOW_SVG: &str = "elbow.svg";
/// Instances drawn per cluster overlay.
pub const MAX_OVERLAY: usize = 60;

const TRACK_COLORS: [&str; 3] = ["#1f77b4", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRow {
    pub k: usize,
    pub sizes: Vec<usize>,
    pub silhouette: Option<f64>,
    pub calinski_harabasz: Option<f64>,
    pub davies_bouldin: Option<f64>,
    pub inertia: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRow {
    pub level_k: usize,
    pub config: String,
    pub model: String,
    /// Clusters before and after small-cluster filtering, `a->b`.
    pub k: String,
    pub f1: String,
    pub accuracy: String,
    pub precision: String,
    pub recall: String,
    pub f1_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopPositions {
    pub config: String,
    pub model: String,
    pub method: String,
    pub positions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub dataset: Option<String>,
    pub stages: Vec<String>,
    pub preprocessing: Option<PreprocessSummary>,
    pub clustering_mode: Option<ClusterMode>,
    pub k_medium: Option<usize>,
    pub elbow: Option<Elbow>,
    pub validity: Vec<ValidityRow>,
    pub clustering_notes: Vec<String>,
    pub classification: Vec<ClassificationRow>,
    pub attribution_target: Option<String>,
    pub agreement: Vec<AgreementRow>,
    pub top_positions: Vec<TopPositions>,
    pub plots: Vec<String>,
}

fn done(m: &RunManifest, stage: &str) -> bool {
    m.stage(stage).is_some_and(|s| s.is_ok())
}

fn elbow_svg(e: &Elbow) -> String {
    let pts = e.ks.iter().zip(&e.inertias).map(|(&k, &v)| (k as f64, v)).collect();
    let panel = Panel {
        title: format!("inertia, selected k = {}", e.selected),
        lines: vec![Line::new(pts, "#d62728").with_markers()],
        guides: vec![e.selected as f64],
    };
    render("Elbow curve", "k", &[panel])
}

fn overlay_svg(title: &str, members: &[&[f64]], tracks: &[(String, &[f64])]) -> String {
    let t = members.first().map_or(0, |m| m.len());
    let xy = |v: &[f64]| v.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect::<Vec<_>>();
    let mut lines: Vec<Line> = members.iter().take(MAX_OVERLAY).map(|m| Line::new(xy(m), "gray").faint()).collect();
    let mean: Vec<f64> = (0..t).map(|i| members.iter().map(|m| m[i]).sum::<f64>() / members.len() as f64).collect();
    lines.push(Line::new(xy(&mean), "#d62728").bold());
    let mut panels = vec![Panel { title: format!("{} instances and mean", members.len()), lines, guides: vec![] }];
    for (j, (name, v)) in tracks.iter().enumerate() {
        panels.push(Panel {
            title: format!("mean |attribution|: {name}"),
            lines: vec![Line::new(xy(v), TRACK_COLORS[j % TRACK_COLORS.len()])],
            guides: vec![],
        });
    }
    render(title, "time", &panels)
}

fn cluster_plots(
    c: &Collection,
    clusters: &ClusterOutput,
    ex: &ExplainOutput,
    w: &mut ArtifactWriter,
) -> Result<Vec<String>> {
    let medium = clusters.medium();
    let mut files = Vec::new();
    for m in &ex.models {
        let tracked: Vec<_> = m.sets.iter().filter(|s| s.time_len > 0 && !s.per_cluster.is_empty()).collect();
        let Some(first) = tracked.first() else { continue };
        for &cl in first.per_cluster.keys() {
            let members: Vec<&[f64]> =
                (0..c.len()).filter(|&i| medium.assignments[i] == cl).map(|i| c.series(i)).collect();
            if members.is_empty() {
                continue;
            }
            let tracks: Vec<(String, &[f64])> = tracked
                .iter()
                .filter_map(|s| s.per_cluster.get(&cl).map(|v| (s.method.name().to_string(), &v[..s.time_len])))
                .collect();
            let rel = format!("plots/k{}_{}_{}_cluster{cl}.svg", ex.k, m.config.name(), m.model.name());
            let title = format!("cluster {cl} (k = {}), {} {}", ex.k, m.config.name(), m.model.name());
            w.write(&rel, overlay_svg(&title, &members, &tracks))?;
            files.push(rel);
        }
    }
    Ok(files)
}

/// Builds `report.json` and the SVG plots from the completed stages in
/// `manifest`.
pub fn emit_report(manifest: &RunManifest, root: &Path, w: &mut ArtifactWriter) -> Result<Report> {
    let stages: Vec<String> = manifest.completed_stages().map(|s| s.name.clone()).filter(|n| n != "report").collect();
    if stages.is_empty() {
        return Err(PipelineError::Other("no completed stages to report on".into()));
    }
    let mut r = Report { stages, ..Report::default() };
    let collection = if done(manifest, "preprocess") {
        r.preprocessing = cluster::read_json(&root.join(PREPROCESS_JSON)).ok();
        preprocess::reload(root).ok()
    } else {
        None
    };
    if done(manifest, "selectk") {
        if let Ok(sel) = cluster::reload_selection(root) {
            r.k_medium = Some(sel.k_medium);
            r.elbow = sel.elbow;
        }
    }
    let clusters = if done(manifest, "cluster") { cluster::reload(root).ok() } else { None };
    if let Some(cl) = &clusters {
        r.clustering_mode = Some(cl.mode.clone());
        r.k_medium = Some(cl.k_medium);
        r.elbow = cl.elbow.clone().or(r.elbow.take());
        r.clustering_notes = cl.notes.clone();
        r.validity = cl
            .levels
            .iter()
            .map(|l| ValidityRow {
                k: l.k,
                sizes: l.sizes.clone(),
                silhouette: l.validity.map(|v| v.silhouette),
                calinski_harabasz: l.validity.map(|v| v.calinski_harabasz),
                davies_bouldin: l.validity.map(|v| v.davies_bouldin),
                inertia: l.validity.map(|v| v.inertia).or(l.inertia),
            })
            .collect();
    }
    if let Some(e) = &r.elbow {
        w.write(ELBOW_SVG, elbow_svg(e))?;
        r.plots.push(ELBOW_SVG.into());
    }
    if done(manifest, "classify") {
        if let Ok(ClassifyOutput { dataset, rows, .. }) = classify::reload(root) {
            r.dataset = Some(dataset);
            r.classification = rows
                .iter()
                .map(|row| {
                    let e = &row.report;
                    ClassificationRow {
                        level_k: row.level_k,
                        config: e.config.name().into(),
                        model: e.model.name().into(),
                        k: format!("{}->{}", e.k_before, e.k_after),
                        f1: e.macro_f1.to_string(),
                        accuracy: e.accuracy.to_string(),
                        precision: e.macro_precision.to_string(),
                        recall: e.macro_recall.to_string(),
                        f1_mean: e.macro_f1.mean,
                    }
                })
                .collect();
        }
    }
    if done(manifest, "explain") {
        if let Ok(ex) = explain::reload(root) {
            r.attribution_target = Some(ex.target.clone());
            r.agreement = ex.agreement.clone();
            for m in &ex.models {
                for s in &m.sets {
                    let k = top_k(&s.global, s.global.len().min(10));
                    r.top_positions.push(TopPositions {
                        config: m.config.name().into(),
                        model: m.model.name().into(),
                        method: s.method.name().into(),
                        positions: k.into_iter().map(|i| s.position_names[i].clone()).collect(),
                    });
                }
            }
            if let (Some(c), Some(cl)) = (&collection, &clusters) {
                r.plots.extend(cluster_plots(c, cl, &ex, w)?);
            }
        }
    }
    w.write_json(REPORT_JSON, &r)?;
    Ok(r)
}
