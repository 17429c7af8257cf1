use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use samtrack_core::backends::{Backends, Frame};
use samtrack_core::pipeline::manifest::Failure;
use samtrack_core::mask::LabelMap;
use samtrack_core::pipeline::{Session, SessionConfig};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::api::SessionState;
use crate::error::ApiError;
use crate::ServiceConfig;

/// One server-sent event on a session's progress stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    /// `frame`, `done` or `failed`.
    pub kind: String,
    pub frame_index: Option<usize>,
    pub completed: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub admitted: Vec<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

impl ProgressEvent {
    pub fn is_terminal(&self) -> bool {
        self.kind != "frame"
    }
}

/// The engine side of a session. Held for the duration of a backend call.
pub(crate) struct Work {
    pub config: SessionConfig,
    pub backends: Backends,
    pub session: Session,
}

/// What readers see. Only ever locked briefly, so result reads do not wait
/// on a running step. Lock order: `work` before `status`.
pub(crate) struct Status {
    pub state: SessionState,
    pub committed: bool,
    pub frames: Arc<Vec<Frame>>,
    pub results: Vec<LabelMap>,
    pub failure: Option<Failure>,
}

pub(crate) struct SessionSlot {
    pub id: String,
    pub dir: PathBuf,
    work: Mutex<Work>,
    status: Mutex<Status>,
    pub events: broadcast::Sender<ProgressEvent>,
    cancelled: AtomicBool,
}

fn relock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // a panic inside a backend must not wedge the session forever
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl SessionSlot {
    pub fn work(&self) -> MutexGuard<'_, Work> {
        relock(&self.work)
    }

    pub fn status(&self) -> MutexGuard<'_, Status> {
        relock(&self.status)
    }

    /// Copies the session's results and commit flag into the read side.
    pub fn publish(&self, session: &Session) {
        let mut st = self.status();
        st.committed = session.is_committed();
        let have = st.results.len();
        st.results.extend(session.results()[have.min(session.results().len())..].iter().cloned());
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::SeqCst)
    }

    pub fn emit(&self, event: ProgressEvent) {
        // no subscribers is fine
        let _ = self.events.send(event);
    }
}

pub(crate) struct Inner {
    pub config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<SessionSlot>>>,
}

#[derive(Clone)]
pub(crate) struct AppState(pub Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self(Arc::new(Inner {
            config,
            sessions: Mutex::new(HashMap::new()),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    pub fn insert(&self, config: SessionConfig, backends: Backends, session: Session) -> Arc<SessionSlot> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.0.config.data_dir.join(&id);
        let (events, _) = broadcast::channel(256);
        let slot = Arc::new(SessionSlot {
            id: id.clone(),
            dir,
            work: Mutex::new(Work {
                config,
                backends,
                session,
            }),
            status: Mutex::new(Status {
                state: SessionState::Annotating,
                committed: false,
                frames: Arc::new(Vec::new()),
                results: Vec::new(),
                failure: None,
            }),
            events,
            cancelled: AtomicBool::new(false),
        });
        self.sessions().insert(id, slot.clone());
        slot
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.sessions().get(id).cloned().ok_or_else(|| ApiError::unknown_session(id))
    }

    pub fn remove(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.sessions().remove(id).ok_or_else(|| ApiError::unknown_session(id))
    }

    fn sessions(&self) -> MutexGuard<'_, HashMap<String, Arc<SessionSlot>>> {
        relock(&self.0.sessions)
    }
}
