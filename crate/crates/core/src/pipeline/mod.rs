//! Run configuration, staged execution with a resumable manifest, field
//! export and run summaries.

mod config;
mod export;
mod manifest;
mod run;
mod summary;

pub use config::{parse_ini, RunConfig, Stage, Tolerances};
pub use export::{export_field, strict_json, write_csv_to, write_json, ExportFormat, NodeCoords};
pub use manifest::{RunManifest, StageRecord, StageStatus, MANIFEST_FILE};
pub use run::{nucleation_checks, run_pipeline, run_stages, thread_cap, write_nucleation, BranchArtifact, FlowArtifact, LayerArtifact, CONFIG_FILE};
pub use summary::{summarize, write_summary, SUMMARY_FILE};
