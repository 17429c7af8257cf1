//! New-object admission at key frames.
//!
//! A fresh segmentation `seg` is compared with the tracker output `track`.
//! The new-objects map is `seg` restricted to the tracker's background, and
//! a segment is admitted when the share of its area that survives that
//! restriction is strictly above the configured threshold. Admitted segments
//! receive fresh IDs and are merged under the tracked objects, which keep
//! every pixel they already claim.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{LabelMap, MaskError, ObjectId, Precedence};
use crate::registry::{ObjectRegistry, Provenance, RegistryError};

/// Reference frame area for the default `min_area` (854x480).
const REFERENCE_AREA: f64 = 854.0 * 480.0;
const REFERENCE_MIN_AREA: f64 = 64.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmrError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("label {0} appears in the new-objects map but not in the segmentation")]
    LabelSpaceMismatch(u16),
    #[error("tracked label {0} is not registered in this session")]
    UnregisteredTrackLabel(u16),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmrConfig {
    /// Minimum share of a segment that must lie outside tracked regions.
    pub t: f64,
    /// Segments whose new area falls below this are discarded.
    pub min_area: u64,
}

impl Default for CmrConfig {
    fn default() -> Self {
        Self { t: 0.8, min_area: 64 }
    }
}

impl CmrConfig {
    pub fn new(t: f64, min_area: u64) -> Result<Self, CmrError> {
        let cfg = Self { t, min_area };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default threshold with `min_area` scaled from 64 px at 854x480 to the
    /// given frame size.
    pub fn for_frame(width: u32, height: u32) -> Self {
        Self {
            t: 0.8,
            min_area: default_min_area(width, height),
        }
    }

    pub fn validate(&self) -> Result<(), CmrError> {
        if !(0.0..=1.0).contains(&self.t) {
            return Err(CmrError::InvalidThreshold(self.t));
        }
        Ok(())
    }
}

pub fn default_min_area(width: u32, height: u32) -> u64 {
    let scaled = REFERENCE_MIN_AREA * (width as f64 * height as f64) / REFERENCE_AREA;
    scaled.ceil() as u64
}

/// Per-candidate areas and ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub source_label: u16,
    pub area_in_seg: u64,
    pub area_new: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub source_label: u16,
    pub id: ObjectId,
    pub area: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmrOutcome {
    pub frame_index: usize,
    /// Admitted objects under their fresh IDs, restricted to untracked pixels.
    pub new_objects: LabelMap,
    /// Tracker output with the admitted objects merged underneath.
    pub refined_track: LabelMap,
    pub admitted: Vec<Admission>,
    pub rejected: Vec<Candidate>,
}

/// Structured record of one key-frame decision, as written to run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmrLogRecord {
    pub frame_index: usize,
    pub admitted: Vec<Admission>,
    pub rejected: Vec<Candidate>,
}

impl CmrOutcome {
    pub fn log_record(&self) -> CmrLogRecord {
        CmrLogRecord {
            frame_index: self.frame_index,
            admitted: self.admitted.clone(),
            rejected: self.rejected.clone(),
        }
    }
}

/// `seg` restricted to the background of `track`, keeping `seg`'s labels.
pub fn new_object_mask(track: &LabelMap, seg: &LabelMap) -> Result<LabelMap, CmrError> {
    Ok(seg.restrict(&track.background())?)
}

/// Areas in `seg` and in `n_mask` for every label of `seg`, ascending by label.
pub fn candidates(n_mask: &LabelMap, seg: &LabelMap) -> Result<Vec<Candidate>, CmrError> {
    if n_mask.dims() != seg.dims() {
        let (a, b) = (n_mask.dims(), seg.dims());
        return Err(MaskError::DimensionMismatch {
            left_w: a.0,
            left_h: a.1,
            right_w: b.0,
            right_h: b.1,
        }
        .into());
    }
    let seg_areas = seg.areas();
    let n_areas = n_mask.areas();
    if let Some(&label) = n_areas.keys().find(|l| !seg_areas.contains_key(l)) {
        return Err(CmrError::LabelSpaceMismatch(label));
    }
    Ok(seg_areas
        .iter()
        .map(|(&label, &x_s)| {
            let x_n = n_areas.get(&label).copied().unwrap_or(0);
            Candidate {
                source_label: label,
                area_in_seg: x_s,
                area_new: x_n,
                ratio: x_n as f64 / x_s as f64,
            }
        })
        .collect())
}

fn passes(c: &Candidate, cfg: &CmrConfig) -> bool {
    c.area_new > 0 && c.ratio > cfg.t && c.area_new >= cfg.min_area
}

/// Source labels of `seg` accepted as new objects, ascending.
pub fn cmr_gate(n_mask: &LabelMap, seg: &LabelMap, cfg: &CmrConfig) -> Result<Vec<u16>, CmrError> {
    cfg.validate()?;
    Ok(candidates(n_mask, seg)?
        .into_iter()
        .filter(|c| passes(c, cfg))
        .map(|c| c.source_label)
        .collect())
}

/// Runs the full key-frame admission: gate, fresh IDs, refined maps.
pub fn admit(
    track: &LabelMap,
    seg: &LabelMap,
    cfg: &CmrConfig,
    registry: &mut ObjectRegistry,
    frame_index: usize,
) -> Result<CmrOutcome, CmrError> {
    cfg.validate()?;
    if let Some(&label) = track.ids().iter().find(|&&l| !registry.contains_label(l)) {
        return Err(CmrError::UnregisteredTrackLabel(label));
    }
    let n_mask = new_object_mask(track, seg)?;
    let (accepted, rejected): (Vec<_>, Vec<_>) = candidates(&n_mask, seg)?
        .into_iter()
        .partition(|c| passes(c, cfg));
    let admitted = issue_ids(&accepted, registry, frame_index, Provenance::Keyframe)?;
    let new_objects = remap(&n_mask, &admitted);
    let refined_track = track.compose(&new_objects, Precedence::BaseWins)?;
    Ok(CmrOutcome {
        frame_index,
        new_objects,
        refined_track,
        admitted,
        rejected,
    })
}

/// Admits every segment of `seg` with at least `cfg.min_area` pixels; used to
/// seed a session that has no user-annotated reference.
pub fn admit_initial(
    seg: &LabelMap,
    cfg: &CmrConfig,
    registry: &mut ObjectRegistry,
    frame_index: usize,
) -> Result<CmrOutcome, CmrError> {
    let empty = LabelMap::new(seg.width(), seg.height())?;
    let (accepted, rejected): (Vec<_>, Vec<_>) = candidates(seg, seg)?
        .into_iter()
        .partition(|c| c.area_new >= cfg.min_area);
    let admitted = issue_ids(&accepted, registry, frame_index, Provenance::Keyframe)?;
    let new_objects = remap(seg, &admitted);
    let refined_track = empty.compose(&new_objects, Precedence::BaseWins)?;
    Ok(CmrOutcome {
        frame_index,
        new_objects,
        refined_track,
        admitted,
        rejected,
    })
}

fn issue_ids(
    accepted: &[Candidate],
    registry: &mut ObjectRegistry,
    frame_index: usize,
    provenance: Provenance,
) -> Result<Vec<Admission>, CmrError> {
    // all-or-nothing: check headroom before touching the registry
    let headroom = registry
        .peek_next()
        .map(|next| ObjectId::MAX as u32 - next + 1)
        .unwrap_or(0);
    if (accepted.len() as u32) > headroom {
        return Err(RegistryError::IdSpaceExhausted { max: ObjectId::MAX }.into());
    }
    accepted
        .iter()
        .map(|c| {
            Ok(Admission {
                source_label: c.source_label,
                id: registry.issue(frame_index, provenance)?,
                area: c.area_new,
            })
        })
        .collect()
}

fn remap(n_mask: &LabelMap, admitted: &[Admission]) -> LabelMap {
    let table: BTreeMap<u16, u16> = admitted.iter().map(|a| (a.source_label, a.id.get())).collect();
    n_mask.relabel(|l| table.get(&l).copied().unwrap_or(0))
}
