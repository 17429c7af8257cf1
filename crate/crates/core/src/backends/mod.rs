//! Model interfaces standing in for the segmenter, the open-vocabulary
//! detector and the mask propagator, together with the propagation memory
//! they share with the pipeline.
//!
//! Three families implement them: scenario oracles ([`oracle`]), model-free
//! classical baselines ([`classical`]) and an HTTP client for a remote model
//! server ([`remote`], wire types in [`wire`]).

pub mod classical;
pub mod oracle;
pub mod remote;
pub mod wire;

use std::fmt;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{BoundingBox, LabelMap, Mask, MaskError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("no prompt given")]
    NoPrompt,
    #[error("prompt outside the {width}x{height} frame")]
    OutOfBounds { width: u32, height: u32 },
    #[error("propagation memory is empty")]
    EmptyMemory,
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("remote error {status} {code}: {message}")]
    Remote {
        status: u16,
        code: String,
        message: String,
    },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("operation not supported by this backend: {0}")]
    Unsupported(String),
    #[error("frame {0} is not known to this backend")]
    UnknownFrame(usize),
    #[error("memory frames must be appended in ascending order ({last} then {next})")]
    FrameOrder { last: usize, next: usize },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

impl BackendError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::NoPrompt => "NoPrompt",
            BackendError::OutOfBounds { .. } => "OutOfBounds",
            BackendError::EmptyMemory => "EmptyMemory",
            BackendError::Unavailable(_) => "BackendUnavailable",
            BackendError::Remote { .. } => "RemoteError",
            BackendError::Protocol(_) => "ProtocolError",
            BackendError::Unsupported(_) => "Unsupported",
            BackendError::UnknownFrame(_) => "UnknownFrame",
            BackendError::FrameOrder { .. } => "FrameOrder",
            BackendError::Config(_) => "BackendConfig",
            BackendError::Mask(MaskError::DimensionMismatch { .. }) => "DimensionMismatch",
            BackendError::Mask(_) => "MaskError",
        }
    }
}

/// A video frame: its position in the sequence and its pixels.
#[derive(Clone)]
pub struct Frame {
    pub index: usize,
    pub image: Arc<RgbImage>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Frame({} {}x{})", self.index, self.image.width(), self.image.height())
    }
}

impl Frame {
    pub fn new(index: usize, image: RgbImage) -> Self {
        Self {
            index,
            image: Arc::new(image),
        }
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn dims(&self) -> (u32, u32) {
        self.image.dimensions()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: u32,
    pub y: u32,
    pub polarity: Polarity,
}

impl PointPrompt {
    pub fn positive(x: u32, y: u32) -> Self {
        Self {
            x,
            y,
            polarity: Polarity::Positive,
        }
    }

    pub fn negative(x: u32, y: u32) -> Self {
        Self {
            x,
            y,
            polarity: Polarity::Negative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxPrompt {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Spatial prompt understood by a segmenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VisualPrompt {
    Point(PointPrompt),
    Box(BoxPrompt),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPrompt {
    pub phrase: String,
    #[serde(default = "default_score_threshold")]
    pub score_threshold: f64,
}

fn default_score_threshold() -> f64 {
    0.35
}

impl TextPrompt {
    pub fn new(phrase: impl Into<String>, score_threshold: f64) -> Self {
        Self {
            phrase: phrase.into(),
            score_threshold,
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.phrase.trim().is_empty() && (0.0..=1.0).contains(&self.score_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    pub phrase: String,
}

/// Checks the segment preconditions shared by every implementation.
pub fn check_prompts(frame: &Frame, prompts: &[VisualPrompt]) -> Result<(), BackendError> {
    if prompts.is_empty() {
        return Err(BackendError::NoPrompt);
    }
    let (w, h) = frame.dims();
    let inside = |p: &VisualPrompt| match p {
        VisualPrompt::Point(p) => p.x < w && p.y < h,
        VisualPrompt::Box(b) => b.bbox.is_valid_for(w, h),
    };
    if !prompts.iter().all(inside) {
        return Err(BackendError::OutOfBounds { width: w, height: h });
    }
    Ok(())
}

/// Applies the detector output contract: keep scores at or above the
/// threshold, order by descending score, then by raster order of the box
/// origin, with the remaining fields as final tie-breakers.
pub fn finalize_detections(mut dets: Vec<Detection>, score_threshold: f64) -> Vec<Detection> {
    dets.retain(|d| d.score >= score_threshold);
    dets.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.bbox.y_min.cmp(&b.bbox.y_min))
            .then(a.bbox.x_min.cmp(&b.bbox.x_min))
            .then(a.bbox.y_max.cmp(&b.bbox.y_max))
            .then(a.bbox.x_max.cmp(&b.bbox.x_max))
            .then_with(|| a.phrase.cmp(&b.phrase))
    });
    dets
}

pub trait Segmenter: Send + Sync {
    /// Mask of the single object indicated by `prompts`.
    fn segment(&self, frame: &Frame, prompts: &[VisualPrompt]) -> Result<Mask, BackendError>;

    /// Every discoverable object, labeled 1..k in raster order of first pixel.
    fn segment_everything(&self, frame: &Frame) -> Result<LabelMap, BackendError>;
}

pub trait Detector: Send + Sync {
    fn detect(&self, frame: &Frame, prompt: &TextPrompt) -> Result<Vec<Detection>, BackendError>;
}

pub trait Propagator: Send + Sync {
    /// Label map for `frame` over (a subset of) the IDs held in `memory`.
    fn propagate(&self, memory: &PropagationMemory, frame: &Frame) -> Result<LabelMap, BackendError>;

    /// Called before propagating when `memory.token` is unset, i.e. after
    /// the latest memory entry was set from an annotation rather than from
    /// propagation (reference commit, key-frame admissions). In-process
    /// propagators read memory directly and need nothing here.
    fn reinitialize(&self, _memory: &mut PropagationMemory) -> Result<(), BackendError> {
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MemoryEntry {
    pub frame: Frame,
    pub labels: LabelMap,
}

pub const DEFAULT_MEMORY_CAPACITY: usize = 8;

/// Past frames with their label maps. Entry 0 is the reference and is never
/// evicted; beyond `capacity` the oldest other entry is dropped.
#[derive(Clone, Debug)]
pub struct PropagationMemory {
    entries: Vec<MemoryEntry>,
    capacity: usize,
    /// Opaque server-side handle when the propagator is remote. `None`
    /// means the server has no session reflecting these entries yet.
    pub token: Option<String>,
}

impl Default for PropagationMemory {
    fn default() -> Self {
        Self::new(DEFAULT_MEMORY_CAPACITY)
    }
}

impl PropagationMemory {
    /// `capacity` is clamped to at least 2 (the reference plus one recent entry).
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: Vec::new(),
            capacity: capacity.max(2),
            token: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latest(&self) -> Option<&MemoryEntry> {
        self.entries.last()
    }

    pub fn dims(&self) -> Option<(u32, u32)> {
        self.entries.first().map(|e| e.labels.dims())
    }

    /// All object labels present in any entry, ascending.
    pub fn ids(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self.entries.iter().flat_map(|e| e.labels.ids()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn push(&mut self, frame: Frame, labels: LabelMap) -> Result<(), BackendError> {
        if frame.dims() != labels.dims() {
            return Err(dims_error(frame.dims(), labels.dims()));
        }
        if let Some(first) = self.entries.first() {
            if first.labels.dims() != labels.dims() {
                return Err(dims_error(first.labels.dims(), labels.dims()));
            }
        }
        if let Some(last) = self.entries.last() {
            if frame.index <= last.frame.index {
                return Err(BackendError::FrameOrder {
                    last: last.frame.index,
                    next: frame.index,
                });
            }
        }
        self.entries.push(MemoryEntry { frame, labels });
        if self.entries.len() > self.capacity {
            self.entries.remove(1);
        }
        Ok(())
    }
}

fn dims_error(a: (u32, u32), b: (u32, u32)) -> BackendError {
    MaskError::DimensionMismatch {
        left_w: a.0,
        left_h: a.1,
        right_w: b.0,
        right_h: b.1,
    }
    .into()
}

/// Functional form of [`PropagationMemory::push`].
pub fn update_memory(
    memory: &PropagationMemory,
    frame: Frame,
    labels: LabelMap,
) -> Result<PropagationMemory, BackendError> {
    let mut next = memory.clone();
    next.push(frame, labels)?;
    Ok(next)
}

/// The three interfaces a session runs against.
#[derive(Clone)]
pub struct Backends {
    pub segmenter: Arc<dyn Segmenter>,
    pub detector: Arc<dyn Detector>,
    pub propagator: Arc<dyn Propagator>,
}

/// Textual backend selector: `oracle:SCENARIO_FILE`, `classical` or
/// `remote:URL`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Oracle(String),
    Classical,
    Remote(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "classical" {
            return Ok(BackendSpec::Classical);
        }
        if let Some(path) = s.strip_prefix("oracle:").filter(|p| !p.is_empty()) {
            return Ok(BackendSpec::Oracle(path.to_string()));
        }
        if let Some(url) = s.strip_prefix("remote:").filter(|u| !u.is_empty()) {
            return Ok(BackendSpec::Remote(url.to_string()));
        }
        Err(format!(
            "unknown backend `{s}` (expected oracle:SCENARIO, classical or remote:URL)"
        ))
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(spec: BackendSpec) -> String {
        spec.to_string()
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Oracle(p) => write!(f, "oracle:{p}"),
            BackendSpec::Classical => f.write_str("classical"),
            BackendSpec::Remote(u) => write!(f, "remote:{u}"),
        }
    }
}

/// Backend choice per interface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendSelection {
    pub segmenter: BackendSpec,
    pub detector: BackendSpec,
    pub propagator: BackendSpec,
}

impl BackendSelection {
    pub fn uniform(spec: BackendSpec) -> Self {
        Self {
            segmenter: spec.clone(),
            detector: spec.clone(),
            propagator: spec,
        }
    }
}

/// Detector for backends that have none; every call is `Unsupported`.
#[derive(Debug, Clone, Default)]
pub struct NoDetector;

impl Detector for NoDetector {
    fn detect(&self, _frame: &Frame, _prompt: &TextPrompt) -> Result<Vec<Detection>, BackendError> {
        Err(BackendError::Unsupported("no text detector configured".into()))
    }
}

impl BackendSelection {
    /// Instantiates the selected backends. Oracle scenarios are rendered
    /// once per distinct file.
    pub fn build(&self) -> Result<Backends, BackendError> {
        let mut oracles: Vec<(String, Arc<oracle::ScenarioOracle>)> = Vec::new();
        let mut remotes: Vec<(String, Arc<remote::RemoteBackend>)> = Vec::new();
        let mut oracle_for = |path: &str| -> Result<Arc<oracle::ScenarioOracle>, BackendError> {
            if let Some((_, o)) = oracles.iter().find(|(p, _)| p == path) {
                return Ok(o.clone());
            }
            let scene = crate::harness::Scenario::load(path)
                .and_then(|s| s.render())
                .map_err(|e| BackendError::Config(format!("oracle scenario {path}: {e}")))?;
            let o = Arc::new(oracle::ScenarioOracle::new(Arc::new(scene)));
            oracles.push((path.to_string(), o.clone()));
            Ok(o)
        };
        let mut remote_for = |url: &str| -> Arc<remote::RemoteBackend> {
            if let Some((_, r)) = remotes.iter().find(|(u, _)| u == url) {
                return r.clone();
            }
            let r = Arc::new(remote::RemoteBackend::new(url));
            remotes.push((url.to_string(), r.clone()));
            r
        };
        let segmenter: Arc<dyn Segmenter> = match &self.segmenter {
            BackendSpec::Oracle(p) => oracle_for(p)?,
            BackendSpec::Classical => Arc::new(classical::ClassicalSegmenter),
            BackendSpec::Remote(u) => remote_for(u),
        };
        let detector: Arc<dyn Detector> = match &self.detector {
            BackendSpec::Oracle(p) => oracle_for(p)?,
            BackendSpec::Classical => Arc::new(NoDetector),
            BackendSpec::Remote(u) => remote_for(u),
        };
        let propagator: Arc<dyn Propagator> = match &self.propagator {
            BackendSpec::Oracle(p) => oracle_for(p)?,
            BackendSpec::Classical => Arc::new(classical::ClassicalPropagator::default()),
            BackendSpec::Remote(u) => remote_for(u),
        };
        Ok(Backends {
            segmenter,
            detector,
            propagator,
        })
    }
}
