use std::fs;
use std::path::Path;
use std::process::Command;

use tsxplain::classify::ModelKind;
use tsxplain::distance::Metric;
use tsxplain::explain::Method;
use tsxplain::features::FeatureConfig;
use tsxplain::synthgen::{gen_blobs, SyntheticSpec};
use tsxplain_pipeline::config::{Algorithm, KChoice, RunConfig};
use tsxplain_pipeline::report::Report;
use tsxplain_pipeline::{report_only, run, run_until, RunManifest, StageName, StageStatus};

fn blobs_csv(dir: &Path) -> std::path::PathBuf {
    let d = gen_blobs::<f64>(&SyntheticSpec::blobs(4, 12, 20, 0.2, 3)).unwrap();
    let path = dir.join("blobs.csv");
    d.collection.save_csv(&path).unwrap();
    path
}

/// Small, fast settings over the blobs file.
fn small_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::for_dataset(blobs_csv(dir));
    cfg.output_dir = dir.join("out");
    cfg.clustering.candidates = (2..=6).collect();
    cfg.classification.models = vec![ModelKind::Knn, ModelKind::Gbt];
    cfg.classification.configs = vec![FeatureConfig::Default];
    cfg.classification.seeds = vec![0, 1];
    cfg.classification.gbt_rounds = 5;
    cfg
}

fn status(m: &RunManifest, stage: &str) -> StageStatus {
    m.stage(stage).unwrap_or_else(|| panic!("no record for {stage}")).status
}

#[test]
fn invalid_config_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.clustering.metric = Metric::dtw();
    let err = run(&cfg).unwrap_err();
    assert!(err.to_string().contains("kmeans requires the euclidean metric"), "{err}");
    assert!(!cfg.output_dir.exists());
}

#[test]
fn auto_k_records_the_elbow_and_fits_three_levels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let m = run_until(&cfg, StageName::Cluster).unwrap();
    assert_eq!(status(&m, "selectk"), StageStatus::Completed);
    let out = tsxplain_pipeline::stages::cluster::reload(&cfg.output_dir).unwrap();
    let elbow = out.elbow.as_ref().unwrap();
    assert_eq!(elbow.ks, vec![2, 3, 4, 5, 6]);
    assert_eq!(out.k_medium, 4);
    assert_eq!(out.levels.iter().map(|l| l.k).collect::<Vec<_>>(), vec![2, 4, 8]);
    assert!(out.levels.iter().all(|l| l.validity.is_some()));
    let csv = fs::read_to_string(cfg.output_dir.join("elbow.csv")).unwrap();
    assert!(csv.starts_with("k,inertia\n2,"));
}

#[test]
fn kmedoids_with_dtw_caches_the_distance_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.clustering.algorithm = Algorithm::Kmedoids;
    cfg.clustering.metric = Metric::Dtw { band: Some(3) };
    cfg.clustering.k = KChoice::Fixed(4);
    let m = run_until(&cfg, StageName::Cluster).unwrap();
    let cached: Vec<_> = m.artifacts().filter(|a| a.path.starts_with("cache/")).collect();
    assert!(!cached.is_empty());
    assert!(cfg.output_dir.join(&cached[0].path).is_file());
    let out = tsxplain_pipeline::stages::cluster::reload(&cfg.output_dir).unwrap();
    assert_eq!(out.k_medium, 4);
    assert!(out.elbow.is_none());
}

#[test]
fn labels_as_clusters_skips_selection_and_explains() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.clustering.labels_as_clusters = true;
    cfg.explain.methods = vec![Method::TreeShap, Method::TreeGain];
    let m = run(&cfg).unwrap();
    assert_eq!(status(&m, "selectk"), StageStatus::Skipped);
    for s in ["preprocess", "cluster", "classify", "explain", "report"] {
        assert_eq!(status(&m, s), StageStatus::Completed, "{s}");
    }
    let out = &cfg.output_dir;
    let csv = fs::read_to_string(out.join("classification.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("blobs,default,knn,4->4,"));
    assert!(out.join("explain/k4_default_gbt_treeshap.csv").is_file());
    assert!(out.join("explain/k4_default_gbt_treeshap_windowed.csv").is_file());
    assert!(out.join("plots/k4_default_gbt_cluster0.svg").is_file());
    let agreement = fs::read_to_string(out.join("agreement.csv")).unwrap();
    assert!(agreement.contains("default,treeshap,tree_gain,10,"));
    let report: Report = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.classification.len(), 2);
    assert!(report.attribution_target.unwrap().contains("pre-softmax"));
    for a in m.artifacts() {
        assert!(out.join(&a.path).is_file(), "{} listed but missing", a.path);
    }
}

#[test]
fn rerun_reuses_upstream_and_recomputes_deleted_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.explain.enabled = false;
    run(&cfg).unwrap();
    fs::remove_file(cfg.output_dir.join("classification.csv")).unwrap();
    let m = run(&cfg).unwrap();
    assert_eq!(status(&m, "preprocess"), StageStatus::Cached);
    assert_eq!(status(&m, "selectk"), StageStatus::Cached);
    assert_eq!(status(&m, "cluster"), StageStatus::Cached);
    assert_eq!(status(&m, "classify"), StageStatus::Completed);
    assert_eq!(status(&m, "explain"), StageStatus::Skipped);
    assert!(cfg.output_dir.join("classification.csv").is_file());

    cfg.classification.seeds = vec![3];
    let m = run(&cfg).unwrap();
    assert_eq!(status(&m, "cluster"), StageStatus::Cached);
    assert_eq!(status(&m, "classify"), StageStatus::Completed);
}

#[test]
fn stage_failure_is_recorded_and_downstream_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.clustering.k = KChoice::Fixed(60);
    let err = run(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some("cluster"));
    let m = RunManifest::load(&cfg.output_dir).unwrap();
    assert_eq!(status(&m, "preprocess"), StageStatus::Completed);
    assert_eq!(status(&m, "cluster"), StageStatus::Failed);
    assert!(m.stage("cluster").unwrap().error.as_deref().unwrap().contains("needs more than 48 series"));
    for s in ["classify", "explain", "report"] {
        assert_eq!(status(&m, s), StageStatus::Skipped, "{s}");
    }
    assert!(cfg.output_dir.join("preprocessed.csv").is_file());
}

#[test]
fn clustering_only_report_has_validity_and_elbow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    run_until(&cfg, StageName::Cluster).unwrap();
    let m = report_only(&cfg).unwrap();
    assert_eq!(status(&m, "report"), StageStatus::Completed);
    let report: Report =
        serde_json::from_str(&fs::read_to_string(cfg.output_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.validity.len(), 3);
    assert!(report.classification.is_empty());
    assert_eq!(report.plots, vec!["elbow.svg".to_string()]);
}

#[test]
fn cli_names_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.dataset.path = dir.path().join("missing.csv");
    let path = dir.path().join("cfg.json");
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tsxplain")).args(["run", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error in stage preprocess"), "{stderr}");

    cfg.dataset.path = blobs_csv(dir.path());
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    let alt = dir.path().join("alt");
    let out = Command::new(env!("CARGO_BIN_EXE_tsxplain"))
        .args(["preprocess", "--seed", "5", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&alt)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = RunManifest::load(&alt).unwrap();
    assert_eq!(m.master_seed, 5);
    assert!(alt.join("preprocessed.csv").is_file());
}
