use std::path::Path;

use reorder_core::pipeline::{run_pipeline, run_stages, PipelineConfig, Stage, MANIFEST};
use reorder_core::Error;

fn small(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = seed;
    cfg.synth.seed = seed;
    cfg.synth.days = 2;
    cfg.synth.blocks_per_day = 60;
    cfg.synth.min_txs_per_block = 60;
    cfg.synth.max_txs_per_block = 100;
    cfg.sandwich.bootstrap_resamples = 199;
    cfg
}

fn synth_into(cfg: &PipelineConfig, dir: &Path) -> PipelineConfig {
    let mut c = cfg.clone();
    c.output_dir = dir.to_path_buf();
    let s = run_stages(&c, &[Stage::Synth]).unwrap();
    assert!(s.is_complete(), "{:?}", s.failures);
    PipelineConfig::load(&dir.join("pipeline.toml")).unwrap()
}

#[test]
fn synthetic_bundle_runs_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_into(&small(3), dir.path());
    assert_eq!(cfg.output_path(), dir.path().join("report"));
    let summary = run_pipeline(&cfg).unwrap();
    assert!(summary.is_complete(), "{:?}", summary.failures);
    for f in [
        "fit_20241001.txt",
        "fit_20241002.txt",
        "ame_20241001.csv",
        "insurance_daily.csv",
        "sandwich_tests.csv",
        "effect_regression_daily.csv",
        "skewness_daily.csv",
        "shares.csv",
        "revenue_daily.csv",
        "ingest_check.txt",
    ] {
        assert!(summary.files.contains_key(f), "missing {f}");
    }
    assert_eq!(summary.files["insurance_daily.csv"], 2);
    let fit = std::fs::read_to_string(cfg.output_path().join("fit_20241001.txt")).unwrap();
    assert!(fit.contains("converged = true"));
    let manifest = std::fs::read_to_string(cfg.output_path().join(MANIFEST)).unwrap();
    assert!(manifest.contains("status = complete"));
    assert!(!manifest.contains("not emitted"), "{manifest}");
    assert!(manifest.contains(&summary.config_hash));
}

#[test]
fn excluded_day_is_listed_not_analysed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth_into(&small(4), dir.path());
    let d = chrono::NaiveDate::from_ymd_opt(2024, 10, 2).unwrap();
    cfg.window.exclude.insert(d);
    let s = run_stages(&cfg, &[Stage::Fit, Stage::Concentration]).unwrap();
    assert!(s.files.contains_key("fit_20241001.txt"));
    assert!(!s.files.contains_key("fit_20241002.txt"));
    let rev = std::fs::read_to_string(cfg.output_path().join("revenue_daily.csv")).unwrap();
    assert!(rev.contains("2024-10-02,excluded"));
}

#[test]
fn extended_effects_need_sandwich_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth_into(&small(5), dir.path());
    cfg.inputs.sandwiches = None;
    cfg.model.extended = true;
    match run_stages(&cfg, &[Stage::Effects]) {
        Err(Error::Config(m)) => assert!(m.contains("sandwiches"), "{m}"),
        other => panic!("{other:?}"),
    }
    cfg.model.extended = false;
    let s = run_pipeline(&cfg).unwrap();
    assert!(!s.is_complete());
    let manifest = std::fs::read_to_string(cfg.output_path().join(MANIFEST)).unwrap();
    assert!(manifest.contains("sandwich: skipped"));
}
