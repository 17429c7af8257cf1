use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{oracle_bundle, RenderedScenario, Scenario};
use crate::backends::PointPrompt;
use crate::cmr::CmrLogRecord;
use crate::mask::LabelMap;
use crate::metrics::{evaluate, EvalOptions, GroundTruthSequence};
use crate::pipeline::manifest::Failure;
use crate::pipeline::{KeyframeSource, Mode, Prompt, RunError, Session, SessionConfig};

/// Emitted ID matched to a ground-truth actor (label = actor index + 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correspondence {
    pub id: u16,
    pub actor: u16,
    pub birth_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub passed: bool,
    pub frames: usize,
    pub correspondence: Vec<Correspondence>,
    /// Actors the run should have picked up but did not.
    pub unmatched_actors: Vec<u16>,
    /// Emitted IDs that match no actor, or an already matched one.
    pub unmatched_ids: Vec<u16>,
    pub first_divergent_frame: Option<usize>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub cmr_log: Vec<CmrLogRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    #[serde(skip)]
    pub results: Vec<LabelMap>,
}

/// One positive click per actor, on the first raster pixel it shows in
/// frame 0. Actors not visible at frame 0 are skipped.
pub fn click_prompts(scene: &RenderedScenario, actors: &[u16]) -> Vec<Prompt> {
    actors
        .iter()
        .filter_map(|&a| scene.gt[0].extract(a).first_pixel())
        .map(|(x, y)| Prompt::Point(PointPrompt::positive(x, y)))
        .collect()
}

/// Runs the pipeline on oracle backends, clicking every actor visible in
/// frame 0 unless the mode is automatic.
pub fn verify_run(scenario: &Scenario, config: &SessionConfig) -> VerifyReport {
    match scenario.render() {
        Ok(scene) => {
            let scene = Arc::new(scene);
            let clicked = scene.gt[0].ids();
            verify_run_with(scene, config, &clicked)
        }
        Err(e) => VerifyReport {
            scenario: scenario.name.clone(),
            passed: false,
            frames: scenario.frames,
            correspondence: Vec::new(),
            unmatched_actors: Vec::new(),
            unmatched_ids: Vec::new(),
            first_divergent_frame: Some(0),
            mean_j: 0.0,
            mean_f: 0.0,
            cmr_log: Vec::new(),
            failure: Some(Failure {
                frame_index: 0,
                code: "InvalidScenario".into(),
                message: e.to_string(),
            }),
            results: Vec::new(),
        },
    }
}

/// Like [`verify_run`] with an explicit set of clicked actors.
pub fn verify_run_with(scene: Arc<RenderedScenario>, config: &SessionConfig, clicked: &[u16]) -> VerifyReport {
    let (results, cmr_log, failure, births) = drive(&scene, config, clicked);
    let n_frames = scene.frames.len();

    let mut correspondence = Vec::new();
    let mut unmatched_ids = Vec::new();
    let mut taken = BTreeSet::new();
    for &(id, birth) in &births {
        let actor = results.get(birth).and_then(|r| best_actor(&r.extract(id), &scene.gt[birth]));
        match actor {
            Some(a) if taken.insert(a) => correspondence.push(Correspondence {
                id,
                actor: a,
                birth_frame: birth,
            }),
            _ => unmatched_ids.push(id),
        }
    }

    let unmatched_actors: Vec<u16> = expected_actors(&scene, config, clicked)
        .into_iter()
        .filter(|a| !taken.contains(a))
        .collect();

    let expected: Vec<LabelMap> = (0..n_frames).map(|f| expected_map(&scene.gt[f], &correspondence, f)).collect();
    let first_divergent_frame = (0..n_frames).find(|&f| results.get(f) != Some(&expected[f]));

    let (mean_j, mean_f) = score(&results, &expected, &correspondence);
    let passed = failure.is_none()
        && first_divergent_frame.is_none()
        && unmatched_actors.is_empty()
        && unmatched_ids.is_empty();
    VerifyReport {
        scenario: scene.scenario.name.clone(),
        passed,
        frames: n_frames,
        correspondence,
        unmatched_actors,
        unmatched_ids,
        first_divergent_frame,
        mean_j,
        mean_f,
        cmr_log,
        failure,
        results,
    }
}

type Driven = (Vec<LabelMap>, Vec<CmrLogRecord>, Option<Failure>, Vec<(u16, usize)>);

fn drive(scene: &Arc<RenderedScenario>, config: &SessionConfig, clicked: &[u16]) -> Driven {
    let fail = |e: &RunError| Some(Failure::from(e));
    let mut session = match Session::new(config.clone(), oracle_bundle(scene.clone())) {
        Ok(s) => s,
        Err(source) => {
            return (Vec::new(), Vec::new(), fail(&RunError { frame_index: 0, source }), Vec::new());
        }
    };
    let mut failure = None;
    if config.mode != Mode::Automatic {
        let setup = (|| {
            session.load_reference(scene.frames[0].clone())?;
            for p in click_prompts(scene, clicked) {
                session.add_prompt(&p)?;
            }
            session.commit_reference().map(|_| ())
        })();
        if let Err(source) = setup {
            failure = fail(&RunError { frame_index: 0, source });
        }
    }
    if failure.is_none() {
        if let Err(e) = session.run(&scene.frames) {
            failure = fail(&e);
        }
    }
    let births = session
        .registry()
        .entries()
        .map(|(id, e)| (id.get(), e.birth_frame))
        .collect();
    (session.results().to_vec(), session.cmr_log().to_vec(), failure, births)
}

/// Actor with IoU above one half against `mask`, if any.
fn best_actor(mask: &crate::mask::Mask, gt: &LabelMap) -> Option<u16> {
    gt.ids().into_iter().find(|&a| {
        let g = gt.extract(a);
        let inter = mask.intersection_area(&g).unwrap_or(0) as f64;
        let union = mask.union_area(&g).unwrap_or(0) as f64;
        union > 0.0 && inter / union > 0.5
    })
}

/// Actors the run is responsible for: clicked ones (or, in automatic mode,
/// everything large enough at frame 0) plus anything visible and large
/// enough at a key frame that the key-frame source would report.
fn expected_actors(scene: &RenderedScenario, config: &SessionConfig, clicked: &[u16]) -> Vec<u16> {
    let (w, h) = scene.gt[0].dims();
    let cmr = config.cmr.resolve(w, h);
    let reportable = |label: u16| match config.keyframe_source {
        KeyframeSource::SegmentEverything => true,
        KeyframeSource::ObjectOfInterest => scene
            .actor_phrase(label)
            .is_some_and(|p| config.text_prompts.iter().any(|t| t.phrase.eq_ignore_ascii_case(p))),
    };
    let mut out = BTreeSet::new();
    if config.mode == Mode::Automatic {
        for (l, a) in scene.gt[0].areas() {
            if a >= cmr.min_area && reportable(l) {
                out.insert(l);
            }
        }
    } else {
        out.extend(clicked.iter().copied().filter(|&a| scene.gt[0].contains_label(a)));
    }
    for f in (1..scene.gt.len()).filter(|&f| config.is_keyframe(f)) {
        for (l, a) in scene.gt[f].areas() {
            if a >= cmr.min_area && reportable(l) {
                out.insert(l);
            }
        }
    }
    out.into_iter().collect()
}

fn expected_map(gt: &LabelMap, corr: &[Correspondence], frame: usize) -> LabelMap {
    let live: Vec<_> = corr.iter().filter(|c| c.birth_frame <= frame).collect();
    gt.relabel(|l| live.iter().find(|c| c.actor == l).map_or(0, |c| c.id))
}

fn score(results: &[LabelMap], expected: &[LabelMap], corr: &[Correspondence]) -> (f64, f64) {
    if results.len() != expected.len() || corr.is_empty() {
        return (0.0, 0.0);
    }
    let Ok(gt) = GroundTruthSequence::new("verify", expected.to_vec()) else {
        return (0.0, 0.0);
    };
    let opts = EvalOptions {
        exclude_first: expected.len() > 1,
        ..EvalOptions::default()
    };
    match evaluate(results, &gt, &opts) {
        Ok(r) => (r.mean_j, r.mean_f),
        Err(_) => (0.0, 0.0),
    }
}
