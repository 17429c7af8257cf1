#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use samtrack_core::backends::{BackendSelection, BackendSpec};
use samtrack_core::harness::{click_prompts, oracle_bundle, scenario_files, RenderedScenario, Scenario};
use samtrack_core::pipeline::manifest::run_to_dir;
use samtrack_core::pipeline::{video, Prompt, Session, SessionConfig};
use samtrack_service::{router, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture_paths() -> Vec<PathBuf> {
    scenario_files(&workspace().join("fixtures/scenarios")).unwrap()
}

pub struct Fixture {
    pub path: PathBuf,
    pub scene: Arc<RenderedScenario>,
    pub frames_dir: tempfile::TempDir,
}

impl Fixture {
    pub fn load(path: &Path) -> Fixture {
        let scene = Arc::new(Scenario::load(path).unwrap().render().unwrap());
        let frames_dir = tempfile::tempdir().unwrap();
        video::save_video(frames_dir.path(), &scene.frames).unwrap();
        Fixture {
            path: path.to_path_buf(),
            scene,
            frames_dir,
        }
    }

    pub fn oracle_config(&self, base: &SessionConfig) -> SessionConfig {
        SessionConfig {
            backends: Some(BackendSelection::uniform(BackendSpec::Oracle(
                self.path.to_string_lossy().into_owned(),
            ))),
            ..base.clone()
        }
    }

    pub fn clicks(&self) -> Vec<Prompt> {
        click_prompts(&self.scene, &self.scene.gt[0].ids())
    }
}

pub fn app(data_dir: &Path) -> Router {
    router(ServiceConfig {
        data_dir: data_dir.to_path_buf(),
        default_backends: None,
    })
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body).await;
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, v)
}

pub async fn call_raw(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn create(app: &Router, config: &SessionConfig) -> String {
    let (status, v) = call(app, Method::POST, "/sessions", Some(json!({ "config": config }))).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

pub async fn wait_finished(app: &Router, id: &str) -> Value {
    for _ in 0..2000 {
        let (_, v) = call(app, Method::GET, &format!("/sessions/{id}"), None).await;
        if v["state"] == "done" || v["state"] == "failed" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("session {id} did not finish");
}

/// Drives a full run through the API and returns the session's result dir.
pub async fn api_run(app: &Router, data_dir: &Path, fx: &Fixture, config: &SessionConfig) -> PathBuf {
    let id = create(app, config).await;
    let (s, v) = call(
        app,
        Method::POST,
        &format!("/sessions/{id}/video"),
        Some(json!({ "path": fx.frames_dir.path() })),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    if config.mode != samtrack_core::pipeline::Mode::Automatic {
        for p in fx.clicks() {
            let (s, v) = call(app, Method::POST, &format!("/sessions/{id}/prompts"), Some(json!({ "prompt": p }))).await;
            assert_eq!(s, StatusCode::OK, "{v}");
        }
        let (s, v) = call(app, Method::POST, &format!("/sessions/{id}/commit"), None).await;
        assert_eq!(s, StatusCode::OK, "{v}");
    }
    let (s, v) = call(app, Method::POST, &format!("/sessions/{id}/track"), None).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let v = wait_finished(app, &id).await;
    assert_eq!(v["state"], "done", "{v}");
    data_dir.join(id)
}

/// The same run through the engine directly, written to `out`.
pub fn direct_run(fx: &Fixture, config: &SessionConfig, out: &Path) {
    let frames = video::load_video(fx.frames_dir.path()).unwrap();
    let mut s = Session::new(config.clone(), oracle_bundle(fx.scene.clone())).unwrap();
    if config.mode != samtrack_core::pipeline::Mode::Automatic {
        s.load_reference(frames[0].clone()).unwrap();
        for p in fx.clicks() {
            s.add_prompt(&p).unwrap();
        }
        s.commit_reference().unwrap();
    }
    run_to_dir(&mut s, &frames, out).unwrap().unwrap();
}

/// Sorted (name, bytes) of every file in a result dir.
pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}
