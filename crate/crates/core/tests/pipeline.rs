use std::fs;

use busvision::pipeline::{run_pipeline, PipelineConfig, PipelineError, Stage};

#[test]
fn desk_study_runs_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let report = run_pipeline(&PipelineConfig::desk_study(out.clone(), 3)).unwrap();
    assert_eq!(report.stages.len(), 8);
    assert!(report.stages.iter().all(|s| s.status == "ok"), "{}", report.summary_json());
    for stage in Stage::ALL {
        assert!(out.join(stage.dir_name()).is_dir());
    }
    assert_eq!(fs::read_to_string(out.join("summary.json")).unwrap(), report.summary_json());
    assert!(!out.join("error.json").exists());
    assert!(out.join("07_eval/confusion_sequence.svg").is_file());
    assert!(out.join("08_regress").read_dir().unwrap().count() > 0);
    println!("{}", report.summary_json());
}

#[test]
fn stage_failure_keeps_earlier_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut c = PipelineConfig::desk_study(out.clone(), 1);
    c.n_trips = 3;
    c.folds = 5;
    match run_pipeline(&c) {
        Err(PipelineError::Stage { stage, .. }) => {
            let report = fs::read_to_string(out.join("error.json")).unwrap();
            assert!(report.contains(stage.name()), "{report}");
            assert!(out.join("01_source").is_dir());
            let summary = fs::read_to_string(out.join("summary.json")).unwrap();
            assert!(summary.contains("\"failed\""));
            assert!(summary.contains("\"skipped\""));
        }
        other => panic!("expected a stage failure, got {other:?}"),
    }
}
