use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::config::{RunConfig, Stage};
use super::export::strict_json;
use super::manifest::{RunManifest, StageStatus};
use super::run::{FlowArtifact, CONFIG_FILE};
use crate::error::{Error, Result};

pub const SUMMARY_FILE: &str = "summary.json";

fn read<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    let text = fs::read_to_string(p).map_err(|_| Error::MissingArtifact(p.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
}

/// Numeric array with nulls read back as NaN.
fn floats(v: &Value) -> Vec<f64> {
    v.as_array().map(|a| a.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect()).unwrap_or_default()
}

fn stage_verdict(m: &RunManifest, s: Stage) -> Value {
    let Some(r) = m.stage(s) else {
        return json!({ "status": "skipped", "reason": "stage not run" });
    };
    let state = match &r.status {
        StageStatus::Failed(e) => return json!({ "status": "fail", "reason": e }),
        StageStatus::Skipped(why) => return json!({ "status": "skipped", "reason": why }),
        StageStatus::Degenerate(m) => m.clone(),
        StageStatus::Completed | StageStatus::Cached => "ok".into(),
    };
    json!({
        "status": if r.checks_pass() { "pass" } else { "fail" },
        "state": state,
        "checks": r.checks,
    })
}

/// One deterministic document for a run directory (no timings).
pub fn summarize(run_dir: &Path) -> Result<Value> {
    let m = RunManifest::load(run_dir)?;
    let cfg = RunConfig::load(&run_dir.join(CONFIG_FILE))?;
    let done = |s: Stage| m.stage(s).is_some_and(|r| r.status.is_done());
    let mut doc = Map::new();
    doc.insert("config_hash".into(), json!(m.config_hash));
    doc.insert("software_version".into(), json!(m.software_version));

    if done(Stage::Flow) {
        let f: FlowArtifact = read(&run_dir.join("flow/flow.json"))?;
        doc.insert("delta_star_bracket".into(), json!(f.delta_star_bracket));
        let ext: Vec<Value> = f.extrema.trace.extrema.iter().map(|e| json!({ "index": e.index, "theta": e.theta, "speed2": e.value, "kind": e.kind })).collect();
        doc.insert("boundary_extrema".into(), Value::from(ext));
        doc.insert("max_boundary_speed2".into(), json!(f.max_boundary_speed2));
    } else {
        doc.insert("delta_star_bracket".into(), Value::Null);
        doc.insert("boundary_extrema".into(), json!("skipped"));
    }

    if done(Stage::Tw) {
        let b: Value = read(&run_dir.join("tw/branch.json"))?;
        doc.insert("c_branch".into(), json!({ "samples": b["samples"], "c_end_observed": b["c_end_observed"], "termination": b["termination"] }));
    } else {
        doc.insert("c_branch".into(), json!("skipped"));
    }

    if done(Stage::Nucleate) {
        let mut rows = vec![];
        for &e in &cfg.epsilons {
            let r: Value = read(&run_dir.join("nucleate").join(format!("eps_{e:?}")).join("report.json"))?;
            let p = &r["projections"];
            let (theta, l1) = (floats(&p["boundary_points"]), floats(&p["lambda1"]));
            let n = l1.len();
            let zeros: Vec<f64> = (0..n).filter(|&q| l1[q] == 0.0 || (l1[q] > 0.0) != (l1[(q + 1) % n] > 0.0)).map(|q| theta[q]).collect();
            let branch = |k: &str| -> Value { r["vortex_branch"].as_array().map(|a| a.iter().map(|v| v[k].clone()).collect()).unwrap_or_default() };
            rows.push(json!({
                "epsilon": e,
                "lambda1_zeros_theta": zeros,
                "distinctness": branch("distinctness"),
                "site_distance": branch("site_distance"),
                "core_wall_distance": branch("core_wall_distance"),
                "free_min_modulus": r["vortex_free"]["min_modulus"],
                "degenerate": r["degenerate"],
            }));
        }
        doc.insert("nucleation".into(), Value::from(rows));
    } else {
        doc.insert("nucleation".into(), json!("skipped"));
    }

    let mut acc = Map::new();
    let mut all = true;
    for s in Stage::ALL {
        let v = stage_verdict(&m, s);
        all &= v["status"] == "pass";
        acc.insert(s.name().into(), v);
    }
    acc.insert("all_pass".into(), Value::Bool(all));
    doc.insert("acceptance".into(), Value::Object(acc));
    strict_json(&Value::Object(doc))
}

/// Writes summary.json and returns its text.
pub fn write_summary(run_dir: &Path) -> Result<String> {
    let text = serde_json::to_string_pretty(&summarize(run_dir)?)? + "\n";
    fs::write(run_dir.join(SUMMARY_FILE), &text)?;
    Ok(text)
}
