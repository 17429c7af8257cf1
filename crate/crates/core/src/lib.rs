//! Core engine for prompt-driven multi-object video segmentation and tracking.
//!
//! The pipeline annotates a reference frame from user prompts, carries the
//! resulting label map forward frame by frame through a pluggable
//! propagator, and on every n-th frame admits objects that the tracker does
//! not yet cover. Everything is expressed in terms of [`LabelMap`]s.

pub mod backends;
pub mod cmr;
pub mod harness;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod registry;

pub use cmr::{CmrConfig, CmrOutcome};
pub use mask::{BoundingBox, LabelMap, Mask, MaskError, ObjectId, Precedence, RleMask};
pub use registry::{ObjectRegistry, Provenance};
