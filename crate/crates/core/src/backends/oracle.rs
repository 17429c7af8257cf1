//! Perfect-model stand-ins answering every request from a rendered
//! scenario's ground truth. Outputs are pure functions of the scenario, the
//! frame index and the inputs.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{
    check_prompts, finalize_detections, BackendError, Backends, Detection, Detector, Frame, Polarity,
    PropagationMemory, Propagator, Segmenter, TextPrompt, VisualPrompt,
};
use crate::harness::RenderedScenario;
use crate::mask::{LabelMap, Mask};

#[derive(Clone)]
pub struct ScenarioOracle {
    scene: Arc<RenderedScenario>,
}

impl ScenarioOracle {
    pub fn new(scene: Arc<RenderedScenario>) -> Self {
        Self { scene }
    }

    pub fn scene(&self) -> &RenderedScenario {
        &self.scene
    }

    /// The same oracle behind all three interfaces.
    pub fn bundle(scene: Arc<RenderedScenario>) -> Backends {
        let oracle = Arc::new(Self::new(scene));
        Backends {
            segmenter: oracle.clone(),
            detector: oracle.clone(),
            propagator: oracle,
        }
    }

    fn gt(&self, frame: &Frame) -> Result<&LabelMap, BackendError> {
        let gt = self.scene.gt.get(frame.index).ok_or(BackendError::UnknownFrame(frame.index))?;
        if gt.dims() != frame.dims() {
            return Err(BackendError::UnknownFrame(frame.index));
        }
        Ok(gt)
    }

    /// Actor whose visible box best overlaps `bbox`; lowest label on ties.
    fn actor_for_box(gt: &LabelMap, bbox: &crate::mask::BoundingBox) -> Option<u16> {
        let mut best: Option<(f64, u16)> = None;
        for label in gt.ids() {
            let Ok(actor_box) = gt.extract(label).bounding_box() else { continue };
            let iou = actor_box.iou(bbox);
            if iou > 0.0 && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, label));
            }
        }
        best.map(|(_, l)| l)
    }
}

impl Segmenter for ScenarioOracle {
    fn segment(&self, frame: &Frame, prompts: &[VisualPrompt]) -> Result<Mask, BackendError> {
        check_prompts(frame, prompts)?;
        let gt = self.gt(frame)?;
        let mut negatives = Vec::new();
        let mut positives = Vec::new();
        for p in prompts {
            match p {
                VisualPrompt::Point(pt) => {
                    let label = gt.get(pt.x, pt.y);
                    match pt.polarity {
                        Polarity::Positive => positives.push(label),
                        Polarity::Negative => negatives.push(label),
                    }
                }
                VisualPrompt::Box(b) => positives.extend(Self::actor_for_box(gt, &b.bbox)),
            }
        }
        let chosen = positives.into_iter().find(|&l| l != 0 && !negatives.contains(&l));
        Ok(match chosen {
            Some(label) => gt.extract(label),
            None => Mask::new(frame.width(), frame.height())?,
        })
    }

    fn segment_everything(&self, frame: &Frame) -> Result<LabelMap, BackendError> {
        Ok(self.gt(frame)?.canonicalize())
    }
}

impl Detector for ScenarioOracle {
    fn detect(&self, frame: &Frame, prompt: &TextPrompt) -> Result<Vec<Detection>, BackendError> {
        let gt = self.gt(frame)?;
        let wanted = prompt.phrase.trim().to_lowercase();
        let mut dets = Vec::new();
        for label in gt.ids() {
            let phrase = self.scene.actor_phrase(label).unwrap_or_default();
            if phrase.trim().to_lowercase() != wanted {
                continue;
            }
            dets.push(Detection {
                bbox: gt.extract(label).bounding_box()?,
                score: 1.0,
                phrase: phrase.to_string(),
            });
        }
        Ok(finalize_detections(dets, prompt.score_threshold))
    }
}

impl Propagator for ScenarioOracle {
    fn propagate(&self, memory: &PropagationMemory, frame: &Frame) -> Result<LabelMap, BackendError> {
        if memory.is_empty() {
            return Err(BackendError::EmptyMemory);
        }
        let gt = self.gt(frame)?;
        let mut out = LabelMap::new(frame.width(), frame.height())?;
        for (id, actor) in self.correspondence(memory)? {
            if !gt.contains_label(actor) {
                continue;
            }
            for (dst, &g) in out.labels_mut().iter_mut().zip(gt.labels()) {
                if g == actor && *dst == 0 {
                    *dst = id;
                }
            }
        }
        Ok(out)
    }
}

impl ScenarioOracle {
    /// Maps each memory ID to the actor it overlaps most in the latest
    /// entry that contains it.
    fn correspondence(&self, memory: &PropagationMemory) -> Result<BTreeMap<u16, u16>, BackendError> {
        let mut map = BTreeMap::new();
        for id in memory.ids() {
            let entry = memory
                .entries()
                .iter()
                .rev()
                .find(|e| e.labels.contains_label(id))
                .expect("id came from memory");
            let gt = self
                .scene
                .gt
                .get(entry.frame.index)
                .ok_or(BackendError::UnknownFrame(entry.frame.index))?;
            let mut overlap: BTreeMap<u16, u64> = BTreeMap::new();
            for (&l, &g) in entry.labels.labels().iter().zip(gt.labels()) {
                if l == id && g != 0 {
                    *overlap.entry(g).or_insert(0) += 1;
                }
            }
            // max overlap, lowest actor label on ties
            if let Some((&actor, _)) = overlap.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
                map.insert(id, actor);
            }
        }
        Ok(map)
    }
}
