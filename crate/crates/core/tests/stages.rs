use std::fs;
use std::path::Path;

use reba_core::config::ExperimentConfig;
use reba_core::datagen::{DatasetConfig, DiseaseSpec};
use reba_core::metrics::METRICS_JSON;
use reba_core::pipeline::{Layout, Outcome, Pipeline, RunOptions, Stage, STUDENT_CKPT};
use reba_core::volume::Shape;

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        dataset: DatasetConfig {
            shape: Shape::cube(16),
            n_regions: 4,
            n_networks: 2,
            n_hc_train: 20,
            n_hc_test: 10,
            diseases: vec![
                DiseaseSpec {
                    name: "pd".into(),
                    n_subjects: 6,
                    offset_years: 8.0,
                    regions: vec![1],
                },
                DiseaseSpec {
                    name: "ad".into(),
                    n_subjects: 6,
                    offset_years: 8.0,
                    regions: vec![4],
                },
            ],
            ..DatasetConfig::default()
        },
        ..ExperimentConfig::default()
    };
    c.model.embed_dim = 8;
    c.teacher.epochs = 5;
    c.student.epochs = 5;
    c
}

fn pipeline(dir: &Path, cached: bool) -> Pipeline {
    Pipeline::new(
        small(),
        Layout::new(dir),
        RunOptions {
            cached,
            ..RunOptions::default()
        },
    )
    .unwrap()
}

#[test]
fn rerunning_the_student_from_soft_labels_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), false);
    p.run_all().unwrap();
    let metrics = dir.path().join("eval").join(METRICS_JSON);
    let before = fs::read(&metrics).unwrap();

    fs::remove_file(dir.path().join("student").join(STUDENT_CKPT)).unwrap();
    let err = p.evaluate().unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");

    assert_eq!(p.train_student().unwrap(), Outcome::Ran);
    p.evaluate().unwrap();
    assert_eq!(fs::read(&metrics).unwrap(), before);
}

#[test]
fn every_stage_records_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), true);
    let report = p.run_all().unwrap();
    let hash = p.config.hash();
    assert_eq!(report.config_hash, hash);
    for stage in [Stage::Data, Stage::Teacher, Stage::Labels, Stage::Student, Stage::Eval] {
        let rec = p.verify(stage).unwrap();
        assert_eq!(rec.config_hash, hash, "{stage}");
        assert!(!rec.outputs.is_empty());
    }
    assert_eq!(p.gen_data().unwrap(), Outcome::Cached);
}

#[test]
fn raw_flag_adds_uncorrected_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.metric.raw = true;
    let p = Pipeline::new(cfg, Layout::new(dir.path()), RunOptions::default()).unwrap();
    let report = p.run_all().unwrap();
    let raw = report.raw.expect("raw block");
    assert_eq!(raw.hcs_per_region.len(), 4);
    let text = fs::read_to_string(dir.path().join("eval").join(METRICS_JSON)).unwrap();
    assert!(text.contains("\"raw\""));
}
