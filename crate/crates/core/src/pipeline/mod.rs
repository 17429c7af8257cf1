//! Session engine: reference annotation from prompts, the per-frame
//! propagation loop, and key-frame admission of new objects.
//!
//! A session is a single writer. Frame 0 is the reference; every later
//! frame is propagated from memory, and in automatic or fusion mode every
//! frame whose index is a positive multiple of the key-frame interval also
//! goes through [`cmr::admit`].

pub mod manifest;
pub mod script;
pub mod video;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendError, BackendSelection, Backends, BoxPrompt, Frame, PointPrompt, PropagationMemory, TextPrompt,
    VisualPrompt, DEFAULT_MEMORY_CAPACITY,
};
use crate::cmr::{self, CmrConfig, CmrError, CmrLogRecord};
use crate::mask::{rasterize_by_area, LabelMap, Mask, MaskError};
use crate::registry::{ObjectRegistry, Provenance, RegistryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Interactive,
    Automatic,
    Fusion,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interactive" => Ok(Mode::Interactive),
            "automatic" => Ok(Mode::Automatic),
            "fusion" => Ok(Mode::Fusion),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyframeSource {
    SegmentEverything,
    ObjectOfInterest,
}

/// Threshold and minimum area for key-frame admission. A missing
/// `min_area` is derived from the frame size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmrSettings {
    pub t: f64,
    #[serde(default)]
    pub min_area: Option<u64>,
}

impl Default for CmrSettings {
    fn default() -> Self {
        Self { t: 0.8, min_area: None }
    }
}

impl CmrSettings {
    pub fn resolve(&self, width: u32, height: u32) -> CmrConfig {
        CmrConfig {
            t: self.t,
            min_area: self.min_area.unwrap_or_else(|| cmr::default_min_area(width, height)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: Mode,
    /// Key frames are the positive multiples of this interval.
    pub keyframe_interval: usize,
    pub keyframe_source: KeyframeSource,
    #[serde(default)]
    pub text_prompts: Vec<TextPrompt>,
    #[serde(default)]
    pub cmr: CmrSettings,
    #[serde(default = "default_capacity")]
    pub memory_capacity: usize,
    /// Echo of the backend choice; the engine itself runs on whatever
    /// [`Backends`] it is handed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backends: Option<BackendSelection>,
}

fn default_capacity() -> usize {
    DEFAULT_MEMORY_CAPACITY
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Interactive,
            keyframe_interval: 10,
            keyframe_source: KeyframeSource::SegmentEverything,
            text_prompts: Vec::new(),
            cmr: CmrSettings::default(),
            memory_capacity: DEFAULT_MEMORY_CAPACITY,
            backends: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.keyframe_interval == 0 {
            return bad("keyframe_interval must be at least 1");
        }
        if self.keyframe_source == KeyframeSource::ObjectOfInterest && self.text_prompts.is_empty() {
            return bad("object_of_interest key frames need at least one text prompt");
        }
        if self.text_prompts.iter().any(|p| !p.is_valid()) {
            return bad("text prompts need a non-empty phrase and a threshold in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.cmr.t) {
            return bad("cmr.t must lie in [0, 1]");
        }
        if self.memory_capacity < 2 {
            return bad("memory_capacity must be at least 2");
        }
        Ok(())
    }

    pub fn is_keyframe(&self, index: usize) -> bool {
        self.mode != Mode::Interactive && index > 0 && index.is_multiple_of(self.keyframe_interval)
    }
}

/// A user prompt on the reference frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prompt {
    Point(PointPrompt),
    /// Several clicks describing one object.
    Points { points: Vec<PointPrompt> },
    Box(BoxPrompt),
    Text(TextPrompt),
}

impl Prompt {
    fn provenance(&self) -> Provenance {
        match self {
            Prompt::Point(_) | Prompt::Points { .. } => Provenance::Click,
            Prompt::Box(_) => Provenance::Box,
            Prompt::Text(_) => Provenance::Text,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("reference already committed")]
    AlreadyCommitted,
    #[error("reference not committed")]
    NotCommitted,
    #[error("no staged masks to commit")]
    EmptyReference,
    #[error("reference frame not loaded")]
    NoReferenceFrame,
    #[error("no staged prompt with key {0}")]
    UnknownStage(u32),
    #[error("prompts are not accepted in automatic mode")]
    PromptsNotAllowed,
    #[error("expected frame {expected}, got {got}")]
    FrameOutOfOrder { expected: usize, got: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Cmr(#[from] CmrError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::InvalidConfig(_) => "InvalidConfig",
            PipelineError::AlreadyCommitted => "AlreadyCommitted",
            PipelineError::NotCommitted => "NotCommitted",
            PipelineError::EmptyReference => "EmptyReference",
            PipelineError::NoReferenceFrame => "NoReferenceFrame",
            PipelineError::UnknownStage(_) => "UnknownStage",
            PipelineError::PromptsNotAllowed => "PromptsNotAllowed",
            PipelineError::FrameOutOfOrder { .. } => "FrameOutOfOrder",
            PipelineError::Backend(e) => e.code(),
            PipelineError::Cmr(CmrError::Registry(_)) | PipelineError::Registry(_) => "IdSpaceExhausted",
            PipelineError::Cmr(_) => "CmrError",
            PipelineError::Mask(MaskError::DimensionMismatch { .. }) => "DimensionMismatch",
            PipelineError::Mask(_) => "MaskError",
        }
    }
}

/// A step failure tagged with the frame it happened on.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("frame {frame_index}: {source}")]
pub struct RunError {
    pub frame_index: usize,
    #[source]
    pub source: PipelineError,
}

/// A revocable preview mask from one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedMask {
    pub key: u32,
    pub mask: Mask,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_index: usize,
    pub labels: LabelMap,
    pub cmr: Option<CmrLogRecord>,
}

pub struct Session {
    config: SessionConfig,
    backends: Backends,
    registry: ObjectRegistry,
    memory: PropagationMemory,
    reference_frame: Option<Frame>,
    staged: Vec<StagedMask>,
    next_stage_key: u32,
    committed: bool,
    frame_cursor: usize,
    results: Vec<LabelMap>,
    cmr_log: Vec<CmrLogRecord>,
}

impl Session {
    pub fn new(config: SessionConfig, backends: Backends) -> Result<Self, PipelineError> {
        config.validate()?;
        let memory = PropagationMemory::new(config.memory_capacity);
        Ok(Self {
            config,
            backends,
            registry: ObjectRegistry::new(),
            memory,
            reference_frame: None,
            staged: Vec::new(),
            next_stage_key: 0,
            committed: false,
            frame_cursor: 0,
            results: Vec::new(),
            cmr_log: Vec::new(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn registry(&self) -> &ObjectRegistry {
        &self.registry
    }

    pub fn results(&self) -> &[LabelMap] {
        &self.results
    }

    pub fn cmr_log(&self) -> &[CmrLogRecord] {
        &self.cmr_log
    }

    pub fn frame_cursor(&self) -> usize {
        self.frame_cursor
    }

    pub fn is_committed(&self) -> bool {
        self.committed
    }

    pub fn staged(&self) -> &[StagedMask] {
        &self.staged
    }

    pub fn memory(&self) -> &PropagationMemory {
        &self.memory
    }

    /// Sets frame 0, which prompts refer to.
    pub fn load_reference(&mut self, frame: Frame) -> Result<(), PipelineError> {
        if self.committed {
            return Err(PipelineError::AlreadyCommitted);
        }
        if frame.index != 0 {
            return Err(PipelineError::FrameOutOfOrder {
                expected: 0,
                got: frame.index,
            });
        }
        self.reference_frame = Some(frame);
        Ok(())
    }

    /// Runs a prompt on the reference frame and stages the resulting
    /// preview masks: one for a click or box, one per detection for text.
    pub fn add_prompt(&mut self, prompt: &Prompt) -> Result<Vec<StagedMask>, PipelineError> {
        if self.committed {
            return Err(PipelineError::AlreadyCommitted);
        }
        if self.config.mode == Mode::Automatic {
            return Err(PipelineError::PromptsNotAllowed);
        }
        let frame = self.reference_frame.as_ref().ok_or(PipelineError::NoReferenceFrame)?;
        let seg = &self.backends.segmenter;
        let masks = match prompt {
            Prompt::Point(p) => vec![seg.segment(frame, &[VisualPrompt::Point(*p)])?],
            Prompt::Points { points } => {
                let prompts: Vec<_> = points.iter().map(|p| VisualPrompt::Point(*p)).collect();
                vec![seg.segment(frame, &prompts)?]
            }
            Prompt::Box(b) => vec![seg.segment(frame, &[VisualPrompt::Box(*b)])?],
            Prompt::Text(t) => {
                if !t.is_valid() {
                    return Err(PipelineError::InvalidConfig("text prompt needs a phrase".into()));
                }
                let dets = self.backends.detector.detect(frame, t)?;
                dets.iter()
                    .map(|d| seg.segment(frame, &[VisualPrompt::Box(BoxPrompt { bbox: d.bbox })]))
                    .collect::<Result<Vec<_>, _>>()?
            }
        };
        let provenance = prompt.provenance();
        let mut staged = Vec::with_capacity(masks.len());
        for mask in masks {
            let s = StagedMask {
                key: self.next_stage_key,
                mask,
                provenance,
            };
            self.next_stage_key += 1;
            staged.push(s);
        }
        self.staged.extend(staged.iter().cloned());
        Ok(staged)
    }

    pub fn revoke(&mut self, key: u32) -> Result<(), PipelineError> {
        if self.committed {
            return Err(PipelineError::AlreadyCommitted);
        }
        let pos = self
            .staged
            .iter()
            .position(|s| s.key == key)
            .ok_or(PipelineError::UnknownStage(key))?;
        self.staged.remove(pos);
        Ok(())
    }

    /// Rasterizes the staged masks in staging order (later stages win
    /// overlaps), issues permanent IDs in that order and seeds memory.
    pub fn commit_reference(&mut self) -> Result<LabelMap, PipelineError> {
        if self.committed {
            return Err(PipelineError::AlreadyCommitted);
        }
        let frame = self.reference_frame.clone().ok_or(PipelineError::NoReferenceFrame)?;
        let (w, h) = frame.dims();
        let mut by_stage = LabelMap::new(w, h)?;
        for (i, s) in self.staged.iter().enumerate() {
            by_stage.paint(&s.mask, i as u16 + 1)?;
        }
        let surviving = by_stage.ids();
        if surviving.is_empty() {
            return Err(PipelineError::EmptyReference);
        }
        let mut registry = self.registry.clone();
        let mut table = std::collections::BTreeMap::new();
        for &stage in &surviving {
            let provenance = self.staged[stage as usize - 1].provenance;
            table.insert(stage, registry.issue(0, provenance)?.get());
        }
        let reference = by_stage.relabel(|s| table[&s]);
        self.seed(frame, reference.clone(), registry, None)?;
        Ok(reference)
    }

    /// Bootstraps a session without user prompts: frame 0 is annotated by
    /// the configured key-frame source and every segment of at least
    /// `min_area` pixels becomes an initial object.
    pub fn auto_reference(&mut self) -> Result<LabelMap, PipelineError> {
        if self.committed {
            return Err(PipelineError::AlreadyCommitted);
        }
        let frame = self.reference_frame.clone().ok_or(PipelineError::NoReferenceFrame)?;
        let seg = self.keyframe_annotation(&frame)?;
        let cfg = self.config.cmr.resolve(frame.width(), frame.height());
        let mut registry = self.registry.clone();
        let outcome = cmr::admit_initial(&seg, &cfg, &mut registry, 0)?;
        let reference = outcome.refined_track.clone();
        self.seed(frame, reference.clone(), registry, Some(outcome.log_record()))?;
        Ok(reference)
    }

    fn seed(
        &mut self,
        frame: Frame,
        reference: LabelMap,
        mut registry: ObjectRegistry,
        log: Option<CmrLogRecord>,
    ) -> Result<(), PipelineError> {
        let mut memory = PropagationMemory::new(self.config.memory_capacity);
        memory.push(frame, reference.clone())?;
        refresh_active(&mut registry, &reference);
        self.registry = registry;
        self.memory = memory;
        self.results = vec![reference];
        self.cmr_log.extend(log);
        self.committed = true;
        self.staged.clear();
        self.frame_cursor = 1;
        Ok(())
    }

    fn keyframe_annotation(&self, frame: &Frame) -> Result<LabelMap, PipelineError> {
        match self.config.keyframe_source {
            KeyframeSource::SegmentEverything => Ok(self.backends.segmenter.segment_everything(frame)?),
            KeyframeSource::ObjectOfInterest => {
                let mut masks = Vec::new();
                for prompt in &self.config.text_prompts {
                    for d in self.backends.detector.detect(frame, prompt)? {
                        let m = self
                            .backends
                            .segmenter
                            .segment(frame, &[VisualPrompt::Box(BoxPrompt { bbox: d.bbox })])?;
                        if !m.is_empty() {
                            masks.push(m);
                        }
                    }
                }
                Ok(rasterize_by_area(frame.width(), frame.height(), &masks)?)
            }
        }
    }

    /// Processes the next frame. On error nothing is modified and the
    /// cursor stays put, so the step can be retried.
    pub fn step(&mut self, frame: &Frame) -> Result<FrameResult, PipelineError> {
        if !self.committed {
            return Err(PipelineError::NotCommitted);
        }
        if frame.index != self.frame_cursor {
            return Err(PipelineError::FrameOutOfOrder {
                expected: self.frame_cursor,
                got: frame.index,
            });
        }
        let mut memory = self.memory.clone();
        if memory.token.is_none() {
            self.backends.propagator.reinitialize(&mut memory)?;
        }
        let tracked = self.backends.propagator.propagate(&memory, frame)?;
        if tracked.dims() != frame.dims() {
            return Err(BackendError::Protocol("propagator changed the frame size".into()).into());
        }
        let known = memory.ids();
        if let Some(id) = tracked.ids().into_iter().find(|id| !known.contains(id)) {
            return Err(BackendError::Protocol(format!("propagator invented object {id}")).into());
        }
        let mut registry = self.registry.clone();
        let (labels, record) = if self.config.is_keyframe(frame.index) {
            let seg = self.keyframe_annotation(frame)?;
            let cfg = self.config.cmr.resolve(frame.width(), frame.height());
            let outcome = cmr::admit(&tracked, &seg, &cfg, &mut registry, frame.index)?;
            let record = outcome.log_record();
            memory.push(frame.clone(), outcome.refined_track.clone())?;
            if !outcome.admitted.is_empty() {
                tracing::debug!(frame = frame.index, admitted = outcome.admitted.len(), "key frame admissions");
                memory.token = None;
            }
            (outcome.refined_track, Some(record))
        } else {
            memory.push(frame.clone(), tracked.clone())?;
            (tracked, None)
        };
        refresh_active(&mut registry, &labels);
        self.registry = registry;
        self.memory = memory;
        self.results.push(labels.clone());
        self.cmr_log.extend(record.clone());
        self.frame_cursor += 1;
        Ok(FrameResult {
            frame_index: frame.index,
            labels,
            cmr: record,
        })
    }

    /// Steps through every frame from the cursor on. Frame 0 is used as the
    /// reference when the session has not been committed yet (automatic
    /// mode bootstraps it; other modes must have committed).
    pub fn run(&mut self, frames: &[Frame]) -> Result<&[LabelMap], RunError> {
        self.run_with(frames, |_| {})
    }

    /// Like [`run`](Self::run), calling `on_frame` after every frame.
    pub fn run_with(&mut self, frames: &[Frame], mut on_frame: impl FnMut(&FrameResult)) -> Result<&[LabelMap], RunError> {
        if let Some(first) = self.bootstrap(frames)? {
            on_frame(&first);
        }
        for frame in frames.iter().skip(self.frame_cursor) {
            let result = self.step(frame).map_err(|source| RunError {
                frame_index: frame.index,
                source,
            })?;
            on_frame(&result);
        }
        Ok(&self.results)
    }

    /// Makes sure a reference exists before stepping: automatic mode
    /// annotates frame 0 itself, other modes must already be committed.
    /// Returns the reference result when it was produced here.
    pub fn bootstrap(&mut self, frames: &[Frame]) -> Result<Option<FrameResult>, RunError> {
        let tag = |source: PipelineError| RunError { frame_index: 0, source };
        if self.committed {
            return Ok(None);
        }
        if self.config.mode != Mode::Automatic {
            return Err(tag(PipelineError::NotCommitted));
        }
        let first = frames.first().ok_or_else(|| tag(PipelineError::NoReferenceFrame))?;
        if self.reference_frame.is_none() {
            self.load_reference(first.clone()).map_err(tag)?;
        }
        self.auto_reference().map_err(tag)?;
        Ok(Some(FrameResult {
            frame_index: 0,
            labels: self.results[0].clone(),
            cmr: self.cmr_log.last().cloned(),
        }))
    }
}

fn refresh_active(registry: &mut ObjectRegistry, labels: &LabelMap) {
    let present = labels.ids();
    let ids: Vec<_> = registry.entries().map(|(id, _)| id).collect();
    for id in ids {
        registry.set_active(id, present.binary_search(&id.get()).is_ok());
    }
}
