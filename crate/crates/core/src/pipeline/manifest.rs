//! On-disk run results: `00000.png`, `00001.png`, ... (indexed label maps)
//! plus `manifest.json`. The manifest is rewritten after every frame so a
//! failed run leaves readable partial results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{RunError, Session, SessionConfig};
use crate::cmr::CmrLogRecord;
use crate::mask::io::{self, LabelEncoding, LabelIoError};
use crate::mask::{LabelMap, ObjectId};
use crate::registry::{ObjectRegistry, Provenance};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Label(#[from] LabelIoError),
    #[error("malformed manifest: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryRecord {
    pub id: ObjectId,
    pub birth_frame: usize,
    pub provenance: Provenance,
    pub active: bool,
}

pub fn registry_records(registry: &ObjectRegistry) -> Vec<RegistryRecord> {
    registry
        .entries()
        .map(|(id, e)| RegistryRecord {
            id,
            birth_frame: e.birth_frame,
            provenance: e.provenance,
            active: e.active,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub frame_index: usize,
    pub code: String,
    pub message: String,
}

impl From<&RunError> for Failure {
    fn from(e: &RunError) -> Self {
        Failure {
            frame_index: e.frame_index,
            code: e.source.code().to_string(),
            message: e.source.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SessionConfig,
    pub frame_count: usize,
    pub frames_written: usize,
    pub label_encoding: LabelEncoding,
    pub registry: Vec<RegistryRecord>,
    pub cmr_log: Vec<CmrLogRecord>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, ManifestError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| ManifestError::Io {
            path,
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| ManifestError::Parse(e.to_string()))
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:05}.png")
}

pub struct ResultWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl ResultWriter {
    pub fn create(dir: impl Into<PathBuf>, config: &SessionConfig, frame_count: usize) -> Result<Self, ManifestError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| ManifestError::Io {
            path: dir.clone(),
            message: e.to_string(),
        })?;
        let w = Self {
            dir,
            manifest: Manifest {
                config: config.clone(),
                frame_count,
                frames_written: 0,
                label_encoding: LabelEncoding::Indexed8,
                registry: Vec::new(),
                cmr_log: Vec::new(),
                status: RunStatus::Running,
                failure: None,
            },
        };
        w.flush()?;
        Ok(w)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn write_frame(
        &mut self,
        index: usize,
        labels: &LabelMap,
        registry: &ObjectRegistry,
        cmr_log: &[CmrLogRecord],
    ) -> Result<(), ManifestError> {
        let enc = io::save_png(labels, self.dir.join(frame_file_name(index)))?;
        if enc == LabelEncoding::Gray16 {
            self.manifest.label_encoding = enc;
        }
        self.manifest.frames_written = self.manifest.frames_written.max(index + 1);
        self.manifest.registry = registry_records(registry);
        self.manifest.cmr_log = cmr_log.to_vec();
        self.flush()
    }

    /// Writes every frame the session has produced so far.
    pub fn write_session(&mut self, session: &Session) -> Result<(), ManifestError> {
        for (i, lm) in session.results().iter().enumerate().skip(self.manifest.frames_written) {
            self.write_frame(i, lm, session.registry(), session.cmr_log())?;
        }
        Ok(())
    }

    pub fn complete(&mut self) -> Result<(), ManifestError> {
        self.manifest.status = RunStatus::Complete;
        self.flush()
    }

    pub fn fail(&mut self, failure: Failure) -> Result<(), ManifestError> {
        self.manifest.status = RunStatus::Failed;
        self.manifest.failure = Some(failure);
        self.flush()
    }

    fn flush(&self) -> Result<(), ManifestError> {
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest always serializes");
        text.push('\n');
        // write-then-rename so readers never see a torn manifest
        let tmp = self.dir.join(".manifest.json.tmp");
        let io = |e: std::io::Error| ManifestError::Io {
            path: path.clone(),
            message: e.to_string(),
        };
        std::fs::write(&tmp, text).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)
    }
}

/// Runs `session` over `frames`, writing each frame as soon as it is
/// produced. On a step failure the partial results stay on disk and the
/// manifest records the failing frame.
pub fn run_to_dir(
    session: &mut Session,
    frames: &[crate::backends::Frame],
    dir: &Path,
) -> Result<Result<(), RunError>, ManifestError> {
    let mut writer = ResultWriter::create(dir, session.config(), frames.len())?;
    let outcome = (|| -> Result<Result<(), RunError>, ManifestError> {
        if let Err(e) = session.bootstrap(frames) {
            return Ok(Err(e));
        }
        writer.write_session(session)?;
        for frame in frames.iter().skip(session.frame_cursor()) {
            if let Err(source) = session.step(frame) {
                return Ok(Err(RunError {
                    frame_index: frame.index,
                    source,
                }));
            }
            writer.write_session(session)?;
        }
        Ok(Ok(()))
    })()?;
    match outcome {
        Ok(()) => writer.complete()?,
        Err(ref e) => writer.fail(Failure::from(e))?,
    }
    Ok(outcome)
}

/// Reads the label maps of a result directory in frame order.
pub fn load_results(dir: &Path) -> Result<(Manifest, Vec<LabelMap>), ManifestError> {
    let manifest = Manifest::load(dir)?;
    let mut maps = Vec::with_capacity(manifest.frames_written);
    for i in 0..manifest.frames_written {
        let (lm, _) = io::load_png(dir.join(frame_file_name(i)))?;
        maps.push(lm);
    }
    Ok((manifest, maps))
}
