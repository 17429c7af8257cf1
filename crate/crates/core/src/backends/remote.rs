//! Client for a remote model server speaking the [`wire`](super::wire)
//! protocol. Segment and detect calls are stateless; propagation keeps its
//! memory server-side behind an opaque session token stored on the
//! [`PropagationMemory`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, ErrorBody};
use super::{
    check_prompts, finalize_detections, BackendError, Detection, Detector, Frame, PropagationMemory,
    Propagator, Segmenter, TextPrompt, VisualPrompt,
};
use crate::mask::{rasterize_by_area, LabelMap, Mask, RleMask};

pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
    // one in-flight propagate per server session
    in_flight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_timeout(base_url, Duration::from_secs(120))
    }

    pub fn with_timeout(base_url: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent: config.into(),
            in_flight: Mutex::new(HashMap::new()),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        tracing::trace!(%url, "remote call");
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| BackendError::Unavailable(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Unavailable(format!("{url}: {e}")))?;
        if status >= 400 {
            let err: ErrorBody = serde_json::from_str(&text).unwrap_or(ErrorBody {
                code: "Unknown".into(),
                message: text,
            });
            return Err(BackendError::Remote {
                status,
                code: err.code,
                message: err.message,
            });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("{url}: {e}")))
    }

    fn session_lock(&self, token: &str) -> Arc<Mutex<()>> {
        self.in_flight
            .lock()
            .expect("lock poisoned")
            .entry(token.to_string())
            .or_default()
            .clone()
    }

    fn init_session(&self, memory: &PropagationMemory) -> Result<String, BackendError> {
        let latest = memory.latest().ok_or(BackendError::EmptyMemory)?;
        let req = wire::PropagateInitRequest {
            frame: wire::encode_frame(&latest.frame.image),
            objects: wire::objects_of(&latest.labels),
        };
        let resp: wire::PropagateInitResponse = self.post(wire::PROPAGATE_INIT, &req)?;
        Ok(resp.session_token)
    }
}

fn decode_sized(rle: &RleMask, frame: &Frame) -> Result<Mask, BackendError> {
    let mask = rle.decode()?;
    if mask.dims() != frame.dims() {
        return Err(BackendError::Protocol(format!(
            "mask is {}x{}, frame is {}x{}",
            mask.width(),
            mask.height(),
            frame.width(),
            frame.height()
        )));
    }
    Ok(mask)
}

impl Segmenter for RemoteBackend {
    fn segment(&self, frame: &Frame, prompts: &[VisualPrompt]) -> Result<Mask, BackendError> {
        check_prompts(frame, prompts)?;
        let req = wire::SegmentRequest {
            frame: wire::encode_frame(&frame.image),
            prompts: prompts.to_vec(),
        };
        let rle: RleMask = self.post(wire::SEGMENT, &req)?;
        decode_sized(&rle, frame)
    }

    fn segment_everything(&self, frame: &Frame) -> Result<LabelMap, BackendError> {
        let req = wire::FrameRequest {
            frame: wire::encode_frame(&frame.image),
        };
        let masks: wire::SegmentEverythingResponse = self.post(wire::SEGMENT_EVERYTHING, &req)?;
        let masks = masks.iter().map(|r| decode_sized(r, frame)).collect::<Result<Vec<_>, _>>()?;
        Ok(rasterize_by_area(frame.width(), frame.height(), &masks)?)
    }
}

impl Detector for RemoteBackend {
    fn detect(&self, frame: &Frame, prompt: &TextPrompt) -> Result<Vec<Detection>, BackendError> {
        let req = wire::DetectRequest {
            frame: wire::encode_frame(&frame.image),
            phrase: prompt.phrase.clone(),
            threshold: prompt.score_threshold,
        };
        let dets: wire::DetectResponse = self.post(wire::DETECT, &req)?;
        let (w, h) = frame.dims();
        if let Some(d) = dets.iter().find(|d| !d.bbox.is_valid_for(w, h) || !(0.0..=1.0).contains(&d.score)) {
            return Err(BackendError::Protocol(format!("invalid detection {d:?}")));
        }
        Ok(finalize_detections(dets, prompt.score_threshold))
    }
}

impl Propagator for RemoteBackend {
    fn propagate(&self, memory: &PropagationMemory, frame: &Frame) -> Result<LabelMap, BackendError> {
        if memory.is_empty() {
            return Err(BackendError::EmptyMemory);
        }
        let token = match &memory.token {
            Some(t) => t.clone(),
            None => self.init_session(memory)?,
        };
        let lock = self.session_lock(&token);
        let _guard = lock.lock().expect("lock poisoned");
        let req = wire::PropagateRequest {
            session_token: token,
            frame: wire::encode_frame(&frame.image),
        };
        let mut objects: wire::PropagateResponse = self.post(wire::PROPAGATE, &req)?;
        let known = memory.ids();
        if let Some(o) = objects.iter().find(|o| !known.contains(&o.object_id.get())) {
            return Err(BackendError::Protocol(format!(
                "server returned object {} which is not in memory",
                o.object_id
            )));
        }
        objects.sort_by_key(|o| o.object_id);
        wire::label_map_from_objects(frame.width(), frame.height(), &objects)
    }

    fn reinitialize(&self, memory: &mut PropagationMemory) -> Result<(), BackendError> {
        let token = self.init_session(memory)?;
        memory.token = Some(token);
        Ok(())
    }
}
