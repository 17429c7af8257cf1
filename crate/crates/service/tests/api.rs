mod common;

use std::sync::Arc;

use axum::http::{Method, StatusCode};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use common::*;
use http_body_util::BodyExt;
use proptest::prelude::*;
use samtrack_core::backends::{wire, BackendSelection, BackendSpec};
use samtrack_core::harness::Scenario;
use samtrack_core::mask::io::decode_png;
use samtrack_core::pipeline::manifest::load_results;
use samtrack_core::pipeline::{Mode, SessionConfig};
use samtrack_service::model_stub::{self, StubOptions};
use serde_json::json;
use tower::ServiceExt;

fn fixture(name: &str) -> Fixture {
    let path = fixture_paths().into_iter().find(|p| p.to_string_lossy().contains(name)).unwrap();
    Fixture::load(&path)
}

async fn annotated(app: &axum::Router, fx: &Fixture, config: &SessionConfig) -> String {
    let id = create(app, &fx.oracle_config(config)).await;
    let (s, _) = call(
        app,
        Method::POST,
        &format!("/sessions/{id}/video"),
        Some(json!({ "path": fx.frames_dir.path() })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    id
}

#[tokio::test]
async fn unknown_session_is_404() {
    let data = tempfile::tempdir().unwrap();
    let app = app(data.path());
    let (s, v) = call(&app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "UnknownSession");
    let (s, _) = call(&app, Method::POST, "/sessions/nope/commit", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn create_validates_config() {
    let data = tempfile::tempdir().unwrap();
    let app = app(data.path());
    // no backends and no service default
    let (s, v) = call(&app, Method::POST, "/sessions", Some(json!({ "config": SessionConfig::default() }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let bad = SessionConfig {
        keyframe_interval: 0,
        backends: Some(BackendSelection::uniform(BackendSpec::Classical)),
        ..SessionConfig::default()
    };
    let (s, v) = call(&app, Method::POST, "/sessions", Some(json!({ "config": bad }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "InvalidConfig");
    let (s, _) = call(&app, Method::POST, "/sessions", Some(json!({ "nonsense": 1 }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn state_machine_conflicts() {
    let data = tempfile::tempdir().unwrap();
    let app = app(data.path());
    let fx = fixture("02_static_pair");
    let id = create(&app, &fx.oracle_config(&SessionConfig::default())).await;

    // prompt and track before a video is loaded
    let p = json!({ "prompt": fx.clicks()[0] });
    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/prompts"), Some(p.clone())).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/track"), None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("NoVideo")));

    let (s, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/video"),
        Some(json!({ "path": fx.frames_dir.path() })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);

    // commit with nothing staged, track before commit
    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/commit"), None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("EmptyReference")));
    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/track"), None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("NotCommitted")));

    // malformed prompt
    let (s, v) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/prompts"),
        Some(json!({ "prompt": { "kind": "stroke" } })),
    )
    .await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("MalformedRequest")));
    let (s, v) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/prompts"),
        Some(json!({ "prompt": { "kind": "point", "x": 500, "y": 1, "polarity": "positive" } })),
    )
    .await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("OutOfBounds")));

    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/prompts"), Some(p.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["staged"].as_array().unwrap().len(), 1);
    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/commit"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["objects"][0]["id"], 1);
    assert_eq!(v["objects"][0]["provenance"], "click");

    // after commit
    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/prompts"), Some(p)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("AlreadyCommitted")));
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/commit"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/video"), Some(json!({ "path": fx.frames_dir.path() }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, v) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(v["state"], "annotating");
    assert_eq!(v["committed"], true);
}

#[tokio::test]
async fn revoke_staged_prompt() {
    let data = tempfile::tempdir().unwrap();
    let app = app(data.path());
    let fx = fixture("02_static_pair");
    let id = annotated(&app, &fx, &SessionConfig::default()).await;
    let clicks = fx.clicks();
    let (_, a) = call(&app, Method::POST, &format!("/sessions/{id}/prompts"), Some(json!({ "prompt": clicks[0] }))).await;
    call(&app, Method::POST, &format!("/sessions/{id}/prompts"), Some(json!({ "prompt": clicks[1] }))).await;
    let key = a["staged"][0]["key"].as_u64().unwrap();
    let (s, _) = call(&app, Method::DELETE, &format!("/sessions/{id}/prompts/{key}"), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, v) = call(&app, Method::DELETE, &format!("/sessions/{id}/prompts/{key}"), None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownStage")));
    let (_, v) = call(&app, Method::POST, &format!("/sessions/{id}/commit"), None).await;
    let objects = v["objects"].as_array().unwrap();
    assert_eq!(objects.len(), 1);
    assert_eq!(objects[0]["area"], fx.scene.gt[0].areas()[&2]);
}

#[tokio::test]
async fn text_prompt_previews_decode_to_ground_truth() {
    let data = tempfile::tempdir().unwrap();
    let app = app(data.path());
    let fx = fixture("14_two_discs_text");
    let id = annotated(&app, &fx, &SessionConfig::default()).await;
    let (s, v) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/prompts"),
        Some(json!({ "prompt": { "kind": "text", "phrase": "disc" } })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let staged = v["staged"].as_array().unwrap();
    assert_eq!(staged.len(), 2);
    let masks: Vec<_> = staged
        .iter()
        .map(|m| serde_json::from_value::<samtrack_core::RleMask>(m["mask"].clone()).unwrap().decode().unwrap())
        .collect();
    let mut want = vec![fx.scene.gt[0].extract(1), fx.scene.gt[0].extract(2)];
    want.sort_by_key(|m| m.first_pixel());
    let mut got = masks.clone();
    got.sort_by_key(|m| m.first_pixel());
    assert_eq!(got, want);
}

#[tokio::test]
async fn round_trip_matches_ground_truth_and_serves_results() {
    let data = tempfile::tempdir().unwrap();
    let app = app(data.path());
    let fx = fixture("12_mixed");
    let config = fx.oracle_config(&SessionConfig::default());
    let dir = api_run(&app, data.path(), &fx, &config).await;
    let id = dir.file_name().unwrap().to_string_lossy().into_owned();
    let (manifest, maps) = load_results(&dir).unwrap();
    assert_eq!(maps.len(), fx.scene.frames.len());
    let clicked = fx.scene.gt[0].ids();
    for (f, lm) in maps.iter().enumerate() {
        let want = fx.scene.gt[f].relabel(|l| if clicked.contains(&l) { l } else { 0 });
        assert_eq!(lm, &want, "frame {f}");
    }
    assert_eq!(manifest.registry.len(), clicked.len());

    // JSON view, raw PNG and the file on disk agree
    let (s, v) = call(&app, Method::GET, &format!("/sessions/{id}/results/3"), None).await;
    assert_eq!(s, StatusCode::OK);
    let png = STANDARD.decode(v["label_png"].as_str().unwrap()).unwrap();
    assert_eq!(png, std::fs::read(dir.join("00003.png")).unwrap());
    assert_eq!(decode_png(&png).unwrap().0, maps[3]);
    let objects: Vec<wire::ObjectMask> = serde_json::from_value(v["objects"].clone()).unwrap();
    assert_eq!(wire::label_map_from_objects(96, 64, &objects).unwrap(), maps[3]);
    let (s, raw) = call_raw(&app, Method::GET, &format!("/sessions/{id}/results/3?format=png"), None).await;
    assert_eq!((s, raw), (StatusCode::OK, png));
    let (s, _) = call(&app, Method::GET, &format!("/sessions/{id}/results/99"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, Method::GET, &format!("/sessions/{id}/manifest"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "complete");

    // tracking twice is a conflict
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/track"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn automatic_mode_commit_bootstraps() {
    let data = tempfile::tempdir().unwrap();
    let app = app(data.path());
    let fx = fixture("06_enter_late");
    let config = SessionConfig {
        mode: Mode::Automatic,
        keyframe_interval: 2,
        ..SessionConfig::default()
    };
    let id = annotated(&app, &fx, &config).await;
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/prompts"), Some(json!({ "prompt": fx.clicks()[0] }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/commit"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["objects"][0]["provenance"], "keyframe");
    call(&app, Method::POST, &format!("/sessions/{id}/track"), None).await;
    let v = wait_finished(&app, &id).await;
    assert_eq!(v["state"], "done");
    let (_, m) = call(&app, Method::GET, &format!("/sessions/{id}/manifest"), None).await;
    let admitted_at: Vec<_> = m["cmr_log"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| !r["admitted"].as_array().unwrap().is_empty())
        .map(|r| r["frame_index"].as_u64().unwrap())
        .collect();
    assert_eq!(admitted_at, vec![0, 4]);
}

#[tokio::test]
async fn uploaded_frames_work_like_a_directory() {
    let data = tempfile::tempdir().unwrap();
    let app = app(data.path());
    let fx = fixture("03_translate_right");
    let id = create(&app, &fx.oracle_config(&SessionConfig::default())).await;
    let frames: Vec<_> = fx.scene.frames.iter().map(|f| wire::encode_frame(&f.image)).collect();
    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/video"), Some(json!({ "frames": frames }))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["frame_count"], 10);
    assert_eq!(wire::decode_frame(v["preview"].as_str().unwrap()).unwrap(), *fx.scene.frames[0].image);
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/video"), Some(json!({ "frames": ["@@"] }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn event_stream_reports_every_frame() {
    let data = tempfile::tempdir().unwrap();
    let app = app(data.path());
    let fx = fixture("06_enter_late");
    let config = SessionConfig {
        mode: Mode::Fusion,
        keyframe_interval: 2,
        ..SessionConfig::default()
    };
    let id = annotated(&app, &fx, &config).await;
    call(&app, Method::POST, &format!("/sessions/{id}/prompts"), Some(json!({ "prompt": fx.clicks()[0] }))).await;
    call(&app, Method::POST, &format!("/sessions/{id}/commit"), None).await;

    let req = axum::http::Request::builder()
        .uri(format!("/sessions/{id}/events"))
        .body(axum::body::Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/track"), None).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    // the stream ends after the terminal event
    let text = String::from_utf8(resp.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    let events: Vec<(String, serde_json::Value)> = text
        .split("\n\n")
        .filter(|b| b.contains("data:"))
        .map(|b| {
            let name = b.lines().find_map(|l| l.strip_prefix("event: ")).unwrap_or("").to_string();
            let data = b.lines().find_map(|l| l.strip_prefix("data: ")).unwrap();
            (name, serde_json::from_str(data).unwrap())
        })
        .collect();
    assert_eq!(events[0].0, "snapshot");
    let frames: Vec<_> = events.iter().filter(|(n, _)| n == "frame").map(|(_, v)| v["frame_index"].as_u64().unwrap()).collect();
    assert_eq!(frames, (1..10).collect::<Vec<_>>());
    let admission = events.iter().find(|(_, v)| v["frame_index"] == 4).unwrap();
    assert_eq!(admission.1["admitted"], json!([2]));
    assert_eq!(events.last().unwrap().0, "done");
}

#[tokio::test]
async fn delete_session() {
    let data = tempfile::tempdir().unwrap();
    let app = app(data.path());
    let fx = fixture("01_static_disc");
    let id = annotated(&app, &fx, &SessionConfig::default()).await;
    let (s, _) = call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, _) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn remote_backends_match_oracle_and_failures_are_502() {
    let fx = fixture("12_mixed");
    let addr = model_stub::spawn(fx.scene.clone(), StubOptions::default()).await.unwrap();
    let url = format!("http://{addr}");
    let base = SessionConfig {
        mode: Mode::Fusion,
        keyframe_interval: 3,
        ..SessionConfig::default()
    };
    let remote = SessionConfig {
        backends: Some(BackendSelection::uniform(BackendSpec::Remote(url))),
        ..base.clone()
    };
    let data = tempfile::tempdir().unwrap();
    let app = app(data.path());
    let remote_dir = api_run(&app, data.path(), &fx, &remote).await;
    let oracle_dir = api_run(&app, data.path(), &fx, &fx.oracle_config(&base)).await;
    let (_, a) = load_results(&remote_dir).unwrap();
    let (_, b) = load_results(&oracle_dir).unwrap();
    assert_eq!(a, b);

    // injected propagate failure: partial results kept, later frames 502
    let failing = model_stub::spawn(
        fx.scene.clone(),
        StubOptions {
            fail_propagate_from: Some(4),
        },
    )
    .await
    .unwrap();
    let config = SessionConfig {
        backends: Some(BackendSelection::uniform(BackendSpec::Remote(format!("http://{failing}")))),
        ..SessionConfig::default()
    };
    let id = create(&app, &config).await;
    call(&app, Method::POST, &format!("/sessions/{id}/video"), Some(json!({ "path": fx.frames_dir.path() }))).await;
    call(&app, Method::POST, &format!("/sessions/{id}/prompts"), Some(json!({ "prompt": fx.clicks()[0] }))).await;
    call(&app, Method::POST, &format!("/sessions/{id}/commit"), None).await;
    call(&app, Method::POST, &format!("/sessions/{id}/track"), None).await;
    let v = wait_finished(&app, &id).await;
    assert_eq!(v["state"], "failed");
    assert_eq!(v["failure"]["frame_index"], 4);
    assert_eq!(v["failure"]["code"], "RemoteError");
    assert_eq!(v["progress"]["completed"], 4);
    let (s, e) = call(&app, Method::GET, &format!("/sessions/{id}/results/5"), None).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(e["frame_index"], 4);
    let (s, _) = call(&app, Method::GET, &format!("/sessions/{id}/results/3"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, m) = call(&app, Method::GET, &format!("/sessions/{id}/manifest"), None).await;
    assert_eq!(m["status"], "failed");
    assert_eq!(m["frames_written"], 4);
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Video,
    Prompt,
    Commit,
    Track,
}

const SCRIPT: [Op; 4] = [Op::Video, Op::Prompt, Op::Commit, Op::Track];

async fn apply(app: &axum::Router, id: &str, fx: &Fixture, op: Op) {
    let (s, v) = match op {
        Op::Video => {
            call(app, Method::POST, &format!("/sessions/{id}/video"), Some(json!({ "path": fx.frames_dir.path() }))).await
        }
        Op::Prompt => call(app, Method::POST, &format!("/sessions/{id}/prompts"), Some(json!({ "prompt": fx.clicks()[0] }))).await,
        Op::Commit => call(app, Method::POST, &format!("/sessions/{id}/commit"), None).await,
        Op::Track => call(app, Method::POST, &format!("/sessions/{id}/track"), None).await,
    };
    assert!(s.is_success(), "{op:?}: {v}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    // two sessions on different scenarios, steps interleaved at random,
    // must each end up with the results of an isolated run
    #[test]
    fn interleaved_sessions_stay_isolated(order in proptest::collection::vec(any::<bool>(), 8)) {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let fxs = [Arc::new(fixture("04_translate_diagonal")), Arc::new(fixture("10_occlusion_cross"))];
            let data = tempfile::tempdir().unwrap();
            let app = app(data.path());
            let config = SessionConfig::default();
            let ids = [
                create(&app, &fxs[0].oracle_config(&config)).await,
                create(&app, &fxs[1].oracle_config(&config)).await,
            ];
            let mut next = [0usize, 0];
            for pick in order.iter().map(|&b| usize::from(b)).chain([0, 1, 0, 1, 0, 1, 0, 1]) {
                if next[pick] < SCRIPT.len() {
                    apply(&app, &ids[pick], &fxs[pick], SCRIPT[next[pick]]).await;
                    next[pick] += 1;
                }
            }
            for k in 0..2 {
                wait_finished(&app, &ids[k]).await;
                let (_, got) = load_results(&data.path().join(&ids[k])).unwrap();
                let direct = tempfile::tempdir().unwrap();
                let mut fxc = fxs[k].oracle_config(&config);
                fxc.backends = None;
                let single = Fixture { path: fxs[k].path.clone(), scene: fxs[k].scene.clone(), frames_dir: tempfile::tempdir().unwrap() };
                samtrack_core::pipeline::video::save_video(single.frames_dir.path(), &single.scene.frames).unwrap();
                // one click only, as in the script
                let mut s = samtrack_core::pipeline::Session::new(fxc, samtrack_core::harness::oracle_bundle(single.scene.clone())).unwrap();
                s.load_reference(single.scene.frames[0].clone()).unwrap();
                s.add_prompt(&single.clicks()[0]).unwrap();
                s.commit_reference().unwrap();
                let want = s.run(&single.scene.frames).unwrap().to_vec();
                assert_eq!(got, want);
                drop(direct);
            }
        });
    }
}

#[test]
fn scenario_fixture_is_parseable() {
    for p in fixture_paths() {
        Scenario::load(&p).unwrap();
    }
}
