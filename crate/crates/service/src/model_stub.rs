//! Model server speaking the remote backend protocol, answering from a
//! rendered scenario through the oracle backends. Frames are identified by
//! pixel equality with the scenario's rendered frames.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use samtrack_core::backends::oracle::ScenarioOracle;
use samtrack_core::backends::wire::{self, ErrorBody};
use samtrack_core::backends::{BackendError, Detector, Frame, PropagationMemory, Propagator, Segmenter, TextPrompt};
use samtrack_core::harness::RenderedScenario;
use samtrack_core::mask::RleMask;

use crate::api::Body;
use crate::error::ApiError;

#[derive(Debug, Clone, Default)]
pub struct StubOptions {
    /// Answer `/v1/propagate` with 503 for this frame index and later.
    pub fail_propagate_from: Option<usize>,
}

struct StubState {
    oracle: ScenarioOracle,
    options: StubOptions,
    sessions: Mutex<HashMap<String, PropagationMemory>>,
}

#[derive(Clone)]
struct Stub(Arc<StubState>);

struct WireError(StatusCode, ErrorBody);

impl IntoResponse for WireError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<BackendError> for WireError {
    fn from(e: BackendError) -> Self {
        let status = match e {
            BackendError::NoPrompt | BackendError::OutOfBounds { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            BackendError::UnknownFrame(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        WireError(
            status,
            ErrorBody {
                code: e.code().to_string(),
                message: e.to_string(),
            },
        )
    }
}

impl From<ApiError> for WireError {
    fn from(e: ApiError) -> Self {
        WireError(
            StatusCode::from_u16(e.status).unwrap_or(StatusCode::BAD_REQUEST),
            ErrorBody {
                code: e.code,
                message: e.message,
            },
        )
    }
}

impl Stub {
    /// Index of the rendered frame equal to `data`, preferring indices
    /// after `after` (identical frames are interchangeable for the oracle
    /// but memory needs ascending indices).
    fn frame(&self, data: &str, after: Option<usize>) -> Result<Frame, WireError> {
        let img = wire::decode_frame(data)?;
        let frames = &self.0.oracle.scene().frames;
        let matches = |f: &&Frame| *f.image == img;
        let start = after.map_or(0, |a| a + 1);
        let found = frames[start.min(frames.len())..]
            .iter()
            .find(matches)
            .or_else(|| frames.iter().find(matches))
            .ok_or_else(|| WireError::from(BackendError::Protocol("frame is not part of this scenario".into())))?;
        Ok(Frame::new(found.index, img))
    }
}

pub fn router(scene: Arc<RenderedScenario>, options: StubOptions) -> Router {
    let state = Stub(Arc::new(StubState {
        oracle: ScenarioOracle::new(scene),
        options,
        sessions: Mutex::new(HashMap::new()),
    }));
    Router::new()
        .route(wire::SEGMENT, post(segment))
        .route(wire::SEGMENT_EVERYTHING, post(segment_everything))
        .route(wire::DETECT, post(detect))
        .route(wire::PROPAGATE_INIT, post(propagate_init))
        .route(wire::PROPAGATE, post(propagate))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, scene: Arc<RenderedScenario>, options: StubOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "model stub listening");
    axum::serve(listener, router(scene, options)).await
}

/// Binds an ephemeral local port and serves in the background; for tests.
pub async fn spawn(scene: Arc<RenderedScenario>, options: StubOptions) -> std::io::Result<SocketAddr> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move {
        let _ = axum::serve(listener, router(scene, options)).await;
    });
    Ok(addr)
}

async fn segment(State(stub): State<Stub>, Body(req): Body<wire::SegmentRequest>) -> Result<Json<RleMask>, WireError> {
    let frame = stub.frame(&req.frame, None)?;
    Ok(Json(stub.0.oracle.segment(&frame, &req.prompts)?.rle_encode()))
}

async fn segment_everything(
    State(stub): State<Stub>,
    Body(req): Body<wire::FrameRequest>,
) -> Result<Json<wire::SegmentEverythingResponse>, WireError> {
    let frame = stub.frame(&req.frame, None)?;
    let lm = stub.0.oracle.segment_everything(&frame)?;
    Ok(Json(lm.ids().into_iter().map(|l| lm.extract(l).rle_encode()).collect()))
}

async fn detect(
    State(stub): State<Stub>,
    Body(req): Body<wire::DetectRequest>,
) -> Result<Json<wire::DetectResponse>, WireError> {
    let frame = stub.frame(&req.frame, None)?;
    let prompt = TextPrompt::new(req.phrase, req.threshold);
    Ok(Json(stub.0.oracle.detect(&frame, &prompt)?))
}

async fn propagate_init(
    State(stub): State<Stub>,
    Body(req): Body<wire::PropagateInitRequest>,
) -> Result<Json<wire::PropagateInitResponse>, WireError> {
    let frame = stub.frame(&req.frame, None)?;
    let labels = wire::label_map_from_objects(frame.width(), frame.height(), &req.objects)?;
    let mut memory = PropagationMemory::default();
    memory.push(frame, labels)?;
    let token = uuid::Uuid::new_v4().simple().to_string();
    stub.0.sessions.lock().expect("lock poisoned").insert(token.clone(), memory);
    Ok(Json(wire::PropagateInitResponse { session_token: token }))
}

async fn propagate(
    State(stub): State<Stub>,
    Body(req): Body<wire::PropagateRequest>,
) -> Result<Json<wire::PropagateResponse>, WireError> {
    let mut sessions = stub.0.sessions.lock().expect("lock poisoned");
    let memory = sessions.get_mut(&req.session_token).ok_or_else(|| {
        WireError(
            StatusCode::NOT_FOUND,
            ErrorBody {
                code: "UnknownSession".into(),
                message: "unknown session token".into(),
            },
        )
    })?;
    let last = memory.latest().map(|e| e.frame.index);
    let frame = stub.frame(&req.frame, last)?;
    if stub.0.options.fail_propagate_from.is_some_and(|f| frame.index >= f) {
        return Err(WireError(
            StatusCode::SERVICE_UNAVAILABLE,
            ErrorBody {
                code: "Injected".into(),
                message: format!("injected failure at frame {}", frame.index),
            },
        ));
    }
    let labels = stub.0.oracle.propagate(memory, &frame)?;
    memory.push(frame, labels.clone())?;
    Ok(Json(wire::objects_of(&labels)))
}
