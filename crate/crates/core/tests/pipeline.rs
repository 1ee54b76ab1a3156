use std::path::Path;

use gpob::io::{read_field, FieldData};
use gpob::pipeline::*;

fn quiescent(dir: &Path) -> RunConfig {
    RunConfig {
        n_radial: 64,
        n_angular: 64,
        r_far: 8.0,
        radial_stretch: 1.05,
        cluster_centers: vec![],
        delta: 0.0,
        epsilons: vec![0.2],
        c_list: vec![0.6, 0.8],
        wave_box: 8.0,
        wave_h: 0.25,
        output_dir: dir.to_path_buf(),
        ..Default::default()
    }
}

#[test]
fn quiescent_run_is_degenerate_cached_on_rerun_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quiescent(tmp.path());
    let m = run_pipeline(&cfg).unwrap();
    let statuses: Vec<_> = m.stages.iter().map(|r| (r.stage, r.status.clone())).collect();
    assert_eq!(statuses.len(), 4, "{statuses:?}");
    for r in &m.stages[..3] {
        assert_eq!(r.status, StageStatus::Completed, "{:?}", r);
    }
    assert_eq!(m.stages[3].status, StageStatus::Degenerate("degenerate: no extrema".into()));
    m.verify(tmp.path()).unwrap();

    let u = read_field(&tmp.path().join("nucleate/eps_0.2/u_free.c64")).unwrap();
    match u.data {
        FieldData::Complex(v) => assert!(v.iter().all(|z| (z.re - 1.0).abs() < 1e-12 && z.im.abs() < 1e-12)),
        FieldData::Real(_) => panic!("expected a complex field"),
    }
    let first = write_summary(tmp.path()).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(doc["acceptance"]["nucleate"]["state"], "degenerate: no extrema");

    let again = run_pipeline(&cfg).unwrap();
    assert_eq!(again.total_solves(), 0);
    assert!(again.stages.iter().all(|r| matches!(r.status, StageStatus::Cached | StageStatus::Degenerate(_))));
    assert_eq!(write_summary(tmp.path()).unwrap(), first);
    assert!(!first.contains("NaN"));

    // A changed solver tolerance invalidates only the nucleation stage.
    let mut tighter = cfg.clone();
    tighter.tolerances.gp = 5e-11;
    let m3 = run_pipeline(&tighter).unwrap();
    let solved: Vec<_> = m3.stages.iter().filter(|r| r.solves > 0).map(|r| r.stage).collect();
    assert_eq!(solved, vec![Stage::Nucleate]);
    assert_ne!(m3.config_hash, m.config_hash);
}

#[test]
fn missing_wave_stage_marks_dependents_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quiescent(tmp.path());
    run_stages(&cfg, &[Stage::Flow, Stage::Layer]).unwrap();
    let doc = summarize(tmp.path()).unwrap();
    assert_eq!(doc["acceptance"]["flow"]["status"], "pass");
    assert_eq!(doc["acceptance"]["tw"]["status"], "skipped");
    assert_eq!(doc["acceptance"]["nucleate"]["status"], "skipped");
    assert_eq!(doc["c_branch"], "skipped");
    assert_eq!(doc["acceptance"]["all_pass"], false);
}

#[test]
fn summary_requires_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(summarize(tmp.path()), Err(gpob::Error::MissingArtifact(_))));
}

#[test]
fn reference_disk_run_completes_all_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig { output_dir: tmp.path().to_path_buf(), ..Default::default() };
    let m = run_pipeline(&cfg).unwrap();
    for r in &m.stages {
        assert_eq!(r.status, StageStatus::Completed, "{:?}", r);
    }
    m.verify(tmp.path()).unwrap();
    let doc = summarize(tmp.path()).unwrap();
    assert_eq!(doc["acceptance"]["all_pass"], true, "{doc:#}");
    let d = tmp.path().join("nucleate/eps_0.1");
    for f in ["report.json", "lambda.csv", "u_free.c64", "u_vortex.c64"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(d.join("lambda.csv")).unwrap();
    assert!(csv.starts_with("theta,lambda0,lambda1,dtau_speed2\n"));
}
