//! Synthetic videos with exact ground truth, and end-to-end verification
//! of the pipeline against them.

mod scenario;
mod verify;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

pub use scenario::{Actor, RenderedScenario, Scenario, Shape, Trajectory};
pub use verify::{click_prompts, verify_run, verify_run_with, Correspondence, VerifyReport};

use crate::backends::oracle::ScenarioOracle;
use crate::backends::Backends;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HarnessError {
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("cannot read scenario: {0}")]
    Io(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Oracle segmenter, detector and propagator for a rendered scenario.
pub fn oracle_bundle(scene: Arc<RenderedScenario>) -> Backends {
    ScenarioOracle::bundle(scene)
}

/// Scenario files (`*.toml`) in `dir`, sorted by name.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", dir.display()));
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "toml") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
