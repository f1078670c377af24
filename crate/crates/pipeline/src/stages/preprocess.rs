use std::path::Path;

use serde::{Deserialize, Serialize};
use tsxplain::dataset::{
    drop_sparse, fill_missing_nearest, load_csv, minmax_scale, remove_outliers, series_ranges, slice_window,
    PreprocessReport,
};
use tsxplain::distance::pairwise_matrix;
use tsxplain::Collection;

use crate::config::RunConfig;
use crate::error::{PipelineError, Result};
use crate::manifest::ArtifactWriter;

pub const PREPROCESSED_CSV: &str = "preprocessed.csv";
pub const PREPROCESS_JSON: &str = "preprocess.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub loaded: usize,
    pub kept: usize,
    pub series_len: usize,
    /// Series dropped by the slice because of missing values in the window.
    pub dropped_by_slice: Vec<String>,
    pub report: PreprocessReport,
}

pub fn run(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<Collection> {
    let p = &cfg.dataset.preprocessing;
    let mut c: Collection = load_csv(&cfg.dataset.path)?;
    let loaded = c.len();
    let mut report = PreprocessReport::default();
    if let Some(t) = p.drop_sparse {
        let (kept, r) = drop_sparse(&c, t)?;
        c = kept;
        report.merge(r);
    }
    let mut dropped_by_slice = Vec::new();
    if let Some(s) = cfg.dataset.slice {
        let sliced = slice_window(&c, s.start, s.len)?;
        dropped_by_slice = c.ids().iter().filter(|id| !sliced.ids().contains(id)).cloned().collect();
        c = sliced;
    }
    if p.fill_missing {
        let (filled, n) = fill_missing_nearest(&c)?;
        c = filled;
        report.filled_count += n;
    }
    if !c.is_fully_observed() {
        return Err(PipelineError::Other(
            "collection still has missing values after preprocessing; enable fill_missing".into(),
        ));
    }
    if let Some([lo, hi]) = p.minmax {
        report.scaling = series_ranges(&c);
        c = minmax_scale(&c, lo, hi)?;
    }
    if p.remove_outliers {
        let d = pairwise_matrix(&c, &cfg.clustering.metric)?;
        let (kept, r) = remove_outliers(&c, &d)?;
        c = kept;
        report.merge(r);
    }
    if c.len() < 2 {
        return Err(PipelineError::Other(format!("only {} series left after preprocessing", c.len())));
    }
    w.write_with(PREPROCESSED_CSV, |b| c.write_csv(b))?;
    let summary = PreprocessSummary { loaded, kept: c.len(), series_len: c.series_len(), dropped_by_slice, report };
    w.write_json(PREPROCESS_JSON, &summary)?;
    Ok(c)
}

pub fn reload(root: &Path) -> Result<Collection> {
    Ok(load_csv(root.join(PREPROCESSED_CSV))?)
}
