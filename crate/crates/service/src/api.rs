//! Session lifecycle endpoints.
//!
//! | method | path                               | effect                                   |
//! |--------|------------------------------------|------------------------------------------|
//! | POST   | `/sessions`                        | create from `{config}`, 201              |
//! | GET    | `/sessions/{id}`                   | handle with state and progress           |
//! | DELETE | `/sessions/{id}`                   | cancel tracking and drop the session     |
//! | POST   | `/sessions/{id}/video`             | `{path}` or `{frames: [base64 png]}`     |
//! | POST   | `/sessions/{id}/prompts`           | `{prompt}` -> staged preview masks       |
//! | DELETE | `/sessions/{id}/prompts/{key}`     | revoke a staged mask                     |
//! | POST   | `/sessions/{id}/commit`            | reference label map summary              |
//! | POST   | `/sessions/{id}/track`             | start tracking in the background, 202    |
//! | GET    | `/sessions/{id}/events`            | server-sent progress events              |
//! | GET    | `/sessions/{id}/results/{frame}`   | label map PNG + per-object RLE           |
//! | GET    | `/sessions/{id}/manifest`          | run manifest including the key-frame log |

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use futures::stream::{self, Stream, StreamExt};
use samtrack_core::backends::{wire, Frame};
use samtrack_core::mask::io::encode_png;
use samtrack_core::mask::{BoundingBox, RleMask};
use samtrack_core::pipeline::manifest::{Failure, Manifest, ResultWriter};
use samtrack_core::pipeline::{video, Mode, Prompt, Session, SessionConfig};
use samtrack_core::registry::Provenance;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::state::{AppState, ProgressEvent, SessionSlot};
use crate::ServiceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Annotating,
    Tracking,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub id: String,
    pub state: SessionState,
    pub committed: bool,
    pub progress: Progress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

/// JSON body whose rejections come back as 422 with an error body.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(rej) => Err(ApiError::malformed(rej.body_text())),
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

pub fn router(config: ServiceConfig) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/video", post(load_video))
        .route("/sessions/{id}/prompts", post(add_prompt))
        .route("/sessions/{id}/prompts/{key}", delete(revoke_prompt))
        .route("/sessions/{id}/commit", post(commit))
        .route("/sessions/{id}/track", post(track))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/results/{frame}", get(result_frame))
        .route("/sessions/{id}/manifest", get(manifest))
        .with_state(AppState::new(config))
}

fn handle(slot: &SessionSlot) -> SessionHandle {
    let st = slot.status();
    SessionHandle {
        id: slot.id.clone(),
        state: st.state,
        committed: st.committed,
        progress: Progress {
            completed: st.results.len(),
            total: st.frames.len(),
        },
        failure: st.failure.clone(),
    }
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    config: SessionConfig,
}

async fn create_session(
    State(state): State<AppState>,
    Body(req): Body<CreateSession>,
) -> Result<(StatusCode, Json<SessionHandle>), ApiError> {
    let mut config = req.config;
    config.validate()?;
    let selection = config
        .backends
        .clone()
        .or_else(|| state.config().default_backends.clone())
        .ok_or_else(|| ApiError::malformed("config names no backends and the service has no default"))?;
    config.backends = Some(selection.clone());
    let st = state.clone();
    let slot = blocking(move || {
        let backends = selection.build()?;
        let session = Session::new(config.clone(), backends.clone())?;
        Ok(st.insert(config, backends, session))
    })
    .await?;
    tracing::debug!(id = %slot.id, "session created");
    Ok((StatusCode::CREATED, Json(handle(&slot))))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionHandle>, ApiError> {
    let slot = state.get(&id)?;
    Ok(Json(handle(&slot)))
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let slot = state.remove(&id)?;
    slot.cancel();
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum VideoSource {
    Path { path: PathBuf },
    Frames { frames: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoInfo {
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
    /// First frame as base64 PNG.
    pub preview: String,
}

fn require_annotating(slot: &SessionSlot) -> Result<(), ApiError> {
    if slot.status().state != SessionState::Annotating {
        return Err(ApiError::conflict("InvalidState", "session is no longer annotating"));
    }
    Ok(())
}

async fn load_video(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Body(source): Body<VideoSource>,
) -> Result<Json<VideoInfo>, ApiError> {
    let slot = state.get(&id)?;
    blocking(move || {
        let frames = match source {
            VideoSource::Path { path } => video::load_video(&path).map_err(|e| ApiError::malformed(e.to_string()))?,
            VideoSource::Frames { frames } => {
                let mut out: Vec<Frame> = Vec::with_capacity(frames.len());
                for (i, f) in frames.iter().enumerate() {
                    let img = wire::decode_frame(f).map_err(|e| ApiError::malformed(e.to_string()))?;
                    if out.first().is_some_and(|first| first.image.dimensions() != img.dimensions()) {
                        return Err(ApiError::malformed(format!("frame {i} changes the frame size")));
                    }
                    out.push(Frame::new(i, img));
                }
                if out.is_empty() {
                    return Err(ApiError::malformed("no frames"));
                }
                out
            }
        };
        let mut work = slot.work();
        if slot.status().state != SessionState::Annotating || work.session.is_committed() {
            return Err(ApiError::conflict("AlreadyCommitted", "video can only change before commit"));
        }
        // a new video starts annotation over
        let mut session = Session::new(work.config.clone(), work.backends.clone())?;
        session.load_reference(frames[0].clone())?;
        let info = VideoInfo {
            frame_count: frames.len(),
            width: frames[0].width(),
            height: frames[0].height(),
            preview: wire::encode_frame(&frames[0].image),
        };
        work.session = session;
        slot.status().frames = Arc::new(frames);
        Ok(Json(info))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct PromptRequest {
    prompt: Prompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagedView {
    pub key: u32,
    pub provenance: Provenance,
    pub mask: RleMask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagedResponse {
    pub staged: Vec<StagedView>,
}

async fn add_prompt(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<PromptRequest>,
) -> Result<Json<StagedResponse>, ApiError> {
    let slot = state.get(&id)?;
    blocking(move || {
        require_annotating(&slot)?;
        let mut work = slot.work();
        let staged = work.session.add_prompt(&req.prompt).map_err(|e| ApiError::from(e).at_frame(0))?;
        Ok(Json(StagedResponse {
            staged: staged
                .into_iter()
                .map(|s| StagedView {
                    key: s.key,
                    provenance: s.provenance,
                    mask: s.mask.rle_encode(),
                })
                .collect(),
        }))
    })
    .await
}

async fn revoke_prompt(
    State(state): State<AppState>,
    Path((id, key)): Path<(String, String)>,
) -> Result<StatusCode, ApiError> {
    let slot = state.get(&id)?;
    let key: u32 = key.parse().map_err(|_| ApiError::malformed(format!("bad stage key `{key}`")))?;
    require_annotating(&slot)?;
    slot.work().session.revoke(key)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSummary {
    pub id: u16,
    pub area: u64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitSummary {
    pub frame_index: usize,
    pub objects: Vec<ObjectSummary>,
}

async fn commit(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<CommitSummary>, ApiError> {
    let slot = state.get(&id)?;
    blocking(move || {
        require_annotating(&slot)?;
        let mut work = slot.work();
        let reference = if work.config.mode == Mode::Automatic {
            work.session.auto_reference()
        } else {
            work.session.commit_reference()
        }
        .map_err(|e| ApiError::from(e).at_frame(0))?;
        slot.publish(&work.session);
        let registry = work.session.registry();
        let objects = reference
            .areas()
            .into_iter()
            .map(|(id, area)| ObjectSummary {
                id,
                area,
                bbox: reference.extract(id).bounding_box().expect("present objects are non-empty"),
                provenance: registry
                    .entries()
                    .find(|(oid, _)| oid.get() == id)
                    .map(|(_, e)| e.provenance)
                    .expect("committed ids are registered"),
            })
            .collect();
        Ok(Json(CommitSummary { frame_index: 0, objects }))
    })
    .await
}

async fn track(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<(StatusCode, Json<SessionHandle>), ApiError> {
    let slot = state.get(&id)?;
    {
        let work = slot.work();
        let mut st = slot.status();
        if st.state != SessionState::Annotating {
            return Err(ApiError::conflict("InvalidState", "tracking already started"));
        }
        if st.frames.is_empty() {
            return Err(ApiError::conflict("NoVideo", "load a video first"));
        }
        if !work.session.is_committed() && work.config.mode != Mode::Automatic {
            return Err(ApiError::conflict("NotCommitted", "commit the reference first"));
        }
        st.state = SessionState::Tracking;
    }
    let worker = slot.clone();
    tokio::task::spawn_blocking(move || track_worker(&worker));
    Ok((StatusCode::ACCEPTED, Json(handle(&slot))))
}

fn frame_event(index: usize, completed: usize, total: usize, admitted: Vec<u16>) -> ProgressEvent {
    ProgressEvent {
        kind: "frame".into(),
        frame_index: Some(index),
        completed,
        total,
        admitted,
        failure: None,
    }
}

/// Background tracking loop. Every frame is written to the session
/// directory before its progress event goes out.
fn track_worker(slot: &SessionSlot) {
    let frames = slot.status().frames.clone();
    let config = slot.work().config.clone();
    let total = frames.len();
    let outcome = (|| -> Result<(), Failure> {
        let io_failure = |frame_index: usize, e: &dyn std::fmt::Display| Failure {
            frame_index,
            code: "ResultWriteFailed".into(),
            message: e.to_string(),
        };
        let mut writer = ResultWriter::create(&slot.dir, &config, total).map_err(|e| io_failure(0, &e))?;
        let result = (|| {
            {
                let mut work = slot.work();
                let boot = work.session.bootstrap(&frames).map_err(|e| Failure::from(&e))?;
                writer.write_session(&work.session).map_err(|e| io_failure(0, &e))?;
                slot.publish(&work.session);
                if boot.is_some() {
                    let admitted = admitted_at(&work.session, 0);
                    slot.emit(frame_event(0, work.session.results().len(), total, admitted));
                }
            }
            loop {
                let mut work = slot.work();
                let cursor = work.session.frame_cursor();
                if slot.is_cancelled() {
                    return Err(Failure {
                        frame_index: cursor,
                        code: "Cancelled".into(),
                        message: "session deleted".into(),
                    });
                }
                let Some(frame) = frames.get(cursor) else { break };
                let step = work.session.step(frame).map_err(|source| {
                    Failure::from(&samtrack_core::pipeline::RunError {
                        frame_index: cursor,
                        source,
                    })
                })?;
                writer.write_session(&work.session).map_err(|e| io_failure(cursor, &e))?;
                slot.publish(&work.session);
                let admitted = step.cmr.map(|r| r.admitted.iter().map(|a| a.id.get()).collect()).unwrap_or_default();
                slot.emit(frame_event(cursor, work.session.results().len(), total, admitted));
            }
            Ok(())
        })();
        match &result {
            Ok(()) => writer.complete().map_err(|e| io_failure(total, &e))?,
            Err(f) => writer.fail(f.clone()).map_err(|e| io_failure(f.frame_index, &e))?,
        }
        result
    })();
    let mut st = slot.status();
    let event = match outcome {
        Ok(()) => {
            st.state = SessionState::Done;
            ProgressEvent {
                kind: "done".into(),
                frame_index: None,
                completed: st.results.len(),
                total,
                admitted: Vec::new(),
                failure: None,
            }
        }
        Err(failure) => {
            tracing::warn!(id = %slot.id, code = %failure.code, frame = failure.frame_index, "tracking failed");
            st.state = SessionState::Failed;
            st.failure = Some(failure.clone());
            ProgressEvent {
                kind: "failed".into(),
                frame_index: Some(failure.frame_index),
                completed: st.results.len(),
                total,
                admitted: Vec::new(),
                failure: Some(failure),
            }
        }
    };
    drop(st);
    slot.emit(event);
}

fn admitted_at(session: &Session, frame: usize) -> Vec<u16> {
    session
        .registry()
        .entries()
        .filter(|(_, e)| e.birth_frame == frame)
        .map(|(id, _)| id.get())
        .collect()
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let slot = state.get(&id)?;
    // subscribe before taking the snapshot so nothing falls in between
    let rx = slot.events.subscribe();
    let snapshot = handle(&slot);
    let finished = matches!(snapshot.state, SessionState::Done | SessionState::Failed);
    let first = Event::default()
        .event("snapshot")
        .json_data(&snapshot)
        .expect("handles serialize");
    let rest = stream::unfold((rx, finished), |(mut rx, finished)| async move {
        if finished {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let done = ev.is_terminal();
                    let sse = Event::default().event(ev.kind.clone()).json_data(&ev).expect("events serialize");
                    return Some((sse, (rx, done)));
                }
                Err(tokio::sync::broadcast::error::RecvError::Lagged(_)) => continue,
                Err(tokio::sync::broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let all = stream::once(async move { first }).chain(rest).map(Ok);
    Ok(Sse::new(all).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
struct ResultQuery {
    #[serde(default)]
    format: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameView {
    pub frame_index: usize,
    /// Label map as base64 indexed PNG, byte-identical to the file on disk.
    pub label_png: String,
    pub objects: Vec<wire::ObjectMask>,
}

async fn result_frame(
    State(state): State<AppState>,
    Path((id, frame)): Path<(String, String)>,
    Query(q): Query<ResultQuery>,
) -> Result<Response, ApiError> {
    let slot = state.get(&id)?;
    let index: usize = frame
        .trim_end_matches(".png")
        .parse()
        .map_err(|_| ApiError::malformed(format!("bad frame index `{frame}`")))?;
    let want_png = q.format.as_deref() == Some("png") || frame.ends_with(".png");
    let labels = {
        let st = slot.status();
        match st.results.get(index) {
            Some(lm) => lm.clone(),
            None if index >= st.frames.len() => {
                return Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownFrame", format!("no frame {index}")))
            }
            None => {
                if let (SessionState::Failed, Some(f)) = (st.state, &st.failure) {
                    return Err(ApiError::new(StatusCode::BAD_GATEWAY, &f.code, f.message.clone()).at_frame(f.frame_index));
                }
                return Err(ApiError::conflict("FrameNotReady", format!("frame {index} is not processed yet")));
            }
        }
    };
    let png = encode_png(&labels).map_err(|e| ApiError::internal(e.to_string()))?;
    if want_png {
        return Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response());
    }
    Ok(Json(FrameView {
        frame_index: index,
        label_png: STANDARD.encode(png),
        objects: wire::objects_of(&labels),
    })
    .into_response())
}

async fn manifest(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Manifest>, ApiError> {
    let slot = state.get(&id)?;
    let dir = slot.dir.clone();
    blocking(move || {
        if !dir.join(samtrack_core::pipeline::manifest::MANIFEST_FILE).exists() {
            return Err(ApiError::conflict("NotTracking", "no results yet"));
        }
        Manifest::load(&dir).map(Json).map_err(|e| ApiError::internal(e.to_string()))
    })
    .await
}
