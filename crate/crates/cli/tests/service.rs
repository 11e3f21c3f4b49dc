use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use pushcraft::demo::{select_demo, DemoLibrary, Demonstration};
use pushcraft::dynamics::{step, ContactFace, ControlInput, PhysicalParams, SystemState};
use pushcraft::planner::{initial_state, plan, PlanMethod, PlanRequest, PlanSettings};
use pushcraft_cli::service::{router, AppState};

fn app(dir: &Path) -> Router {
    router(Arc::new(AppState::new(dir)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn new_session(app: &Router) -> String {
    let (status, body) = call(app, "POST", "/session", None).await;
    assert_eq!(status, StatusCode::OK);
    body["id"].as_str().unwrap().to_string()
}

async fn drive(app: &Router, id: &str, v: [f64; 2]) -> Value {
    let (status, body) = call(app, "POST", &format!("/session/{id}/step"), Some(json!({ "v_cmd": v }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body
}

fn state_of(v: &Value) -> [f64; 7] {
    serde_json::from_value(v["state"].clone()).unwrap()
}

#[tokio::test]
async fn new_sessions_start_at_rest_behind_the_left_face() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, "POST", "/session", None).await;
    assert_eq!(status, StatusCode::OK);
    let expected = initial_state(ContactFace::Left, &PhysicalParams::default()).to_array();
    assert_eq!(state_of(&body), expected);
    assert_eq!(body["face"], "Left");
    assert_eq!(body["mode"], "Separation");

    let (_, top) = call(&app, "POST", "/session", Some(json!({ "face": "Top" }))).await;
    assert_eq!(top["face"], "Top");
    assert_eq!(state_of(&top)[4], 0.0845);
}

#[tokio::test]
async fn pushing_forward_sticks_and_matches_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = new_session(&app).await;
    let params = PhysicalParams::default();
    let mut local = initial_state(ContactFace::Left, &params);
    let mut touched = None;
    for k in 0..30 {
        let v = [0.04, 0.0];
        let body = drive(&app, &id, v).await;
        let u = ControlInput::new((v[0] - local.velocity.x) / params.dt, (v[1] - local.velocity.y) / params.dt);
        local = step(&local, &u, ContactFace::Left, &params).unwrap().0;
        assert_eq!(state_of(&body), local.to_array(), "step {k}");
        assert_eq!(body["steps"], k + 1);
        // the pusher starts a little behind the face, then sticks for good
        match touched {
            None if body["mode"] == "Sticking" => touched = Some(k),
            None => assert_eq!(body["mode"], "Separation", "step {k}"),
            Some(_) => assert_eq!(body["mode"], "Sticking", "step {k}"),
        }
    }
    assert!(touched.unwrap() < 15);
    assert!(local.pose.x > 0.02);
}

#[tokio::test]
async fn face_switch_requires_separation() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = new_session(&app).await;
    for _ in 0..20 {
        drive(&app, &id, [0.04, 0.0]).await;
    }
    let uri = format!("/session/{id}/switch-face");
    let (status, body) = call(&app, "POST", &uri, Some(json!({ "face": "Top" }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "in_contact");

    let last = drive(&app, &id, [-0.04, 0.0]).await;
    assert_eq!(last["mode"], "Separation");
    let (status, body) = call(&app, "POST", &uri, Some(json!({ "face": "Top" }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["face"], "Top");
    assert_eq!(state_of(&body), state_of(&last));
}

/// Drives a one-switch recording: push on the left face, back off, switch
/// to the bottom face and wander off in free space.
async fn record_one_switch(app: &Router, id: &str) {
    for _ in 0..50 {
        drive(app, id, [0.04, 0.0]).await;
    }
    for _ in 0..4 {
        drive(app, id, [-0.04, 0.0]).await;
    }
    let (status, _) = call(app, "POST", &format!("/session/{id}/switch-face"), Some(json!({ "face": "Bottom" }))).await;
    assert_eq!(status, StatusCode::OK);
    for _ in 0..40 {
        drive(app, id, [0.0, -0.05]).await;
    }
    for _ in 0..20 {
        drive(app, id, [0.0, 0.0]).await;
    }
}

#[tokio::test]
async fn finished_demos_are_valid_listed_and_replay_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = new_session(&app).await;
    record_one_switch(&app, &id).await;

    let (status, body) = call(&app, "POST", &format!("/session/{id}/finish"), Some(json!({ "label": "one switch" }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let demo_id = body["demo_id"].as_str().unwrap().to_string();
    assert!(demo_id.starts_with("one-switch-"));

    let (status, list) = call(&app, "GET", "/demos", None).await;
    assert_eq!(status, StatusCode::OK);
    let entry = list.as_array().unwrap().iter().find(|d| d["id"] == demo_id.as_str()).unwrap();
    assert_eq!(entry["switch_count"], 1);
    assert_eq!(entry["horizon"], 114);

    let (status, stored) = call(&app, "GET", &format!("/demos/{demo_id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let demo = Demonstration::from_json(&stored.to_string()).unwrap();
    demo.validate().unwrap();
    assert_eq!(demo.switch_times, vec![54]);

    // replay on a fresh plant
    let params = PhysicalParams::default();
    let mut x: SystemState = demo.states[0];
    for t in 0..demo.horizon() {
        x = step(&x, &demo.controls[t], demo.faces[t], &params).unwrap().0;
        assert_eq!(x, demo.states[t + 1], "step {t}");
    }

    // the session is consumed
    let (status, _) = call(&app, "POST", &format!("/session/{id}/step"), Some(json!({ "v_cmd": [0.0, 0.0] }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // duplicate labels get distinct ids
    let again = new_session(&app).await;
    drive(&app, &again, [0.01, 0.0]).await;
    let (_, body) = call(&app, "POST", &format!("/session/{again}/finish"), Some(json!({ "label": "one switch" }))).await;
    assert_ne!(body["demo_id"].as_str().unwrap(), demo_id);
}

#[tokio::test]
async fn recorded_demos_feed_the_planner() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = new_session(&app).await;
    for _ in 0..80 {
        drive(&app, &id, [0.03, 0.004]).await;
    }
    let (status, _) = call(&app, "POST", &format!("/session/{id}/finish"), Some(json!({ "label": "straight" }))).await;
    assert_eq!(status, StatusCode::OK);

    let library = DemoLibrary::load_dir(dir.path()).unwrap();
    let demo = &library.demos[0];
    assert_eq!(select_demo(&library, &demo.reached).unwrap(), 0);
    let request = PlanRequest {
        target: demo.reached,
        method: PlanMethod::DemoPrior,
        settings: PlanSettings::default(),
    };
    let report = plan(&request, &library).unwrap();
    assert!(report.success, "{:?}", report.errors());
}

#[tokio::test]
async fn sessions_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let inputs_a: Vec<[f64; 2]> = (0..30).map(|k| [0.04, 0.002 * (k as f64).sin()]).collect();
    let inputs_b: Vec<[f64; 2]> = (0..30).map(|k| [0.03 - 0.002 * k as f64, 0.01]).collect();

    let (a, b) = (new_session(&app).await, new_session(&app).await);
    let (mut inter_a, mut inter_b) = (Vec::new(), Vec::new());
    for k in 0..30 {
        inter_a.push(state_of(&drive(&app, &a, inputs_a[k]).await));
        inter_b.push(state_of(&drive(&app, &b, inputs_b[k]).await));
    }

    let (c, d) = (new_session(&app).await, new_session(&app).await);
    let mut seq_a = Vec::new();
    for v in &inputs_a {
        seq_a.push(state_of(&drive(&app, &c, *v).await));
    }
    let mut seq_b = Vec::new();
    for v in &inputs_b {
        seq_b.push(state_of(&drive(&app, &d, *v).await));
    }
    assert_eq!(inter_a, seq_a);
    assert_eq!(inter_b, seq_b);
}

#[tokio::test]
async fn concurrent_sessions_do_not_interfere() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let ids: Vec<String> = open_sessions(&app, 8).await;
    let tasks: Vec<_> = ids
        .iter()
        .cloned()
        .map(|id| {
            let app = app.clone();
            tokio::spawn(async move {
                let mut last = [0.0; 7];
                for _ in 0..25 {
                    last = state_of(&drive(&app, &id, [0.04, 0.0]).await);
                }
                last
            })
        })
        .collect();
    let mut finals = Vec::new();
    for t in tasks {
        finals.push(t.await.unwrap());
    }
    assert!(finals.windows(2).all(|w| w[0] == w[1]));
}

async fn open_sessions(app: &Router, n: usize) -> Vec<String> {
    let mut ids = Vec::new();
    for _ in 0..n {
        ids.push(new_session(app).await);
    }
    ids
}

#[tokio::test]
async fn errors_are_structured_json() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());

    let (status, body) = call(&app, "POST", "/session/nope/step", Some(json!({ "v_cmd": [0.0, 0.0] }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");

    let id = new_session(&app).await;
    let (status, body) = call(&app, "POST", &format!("/session/{id}/step"), Some(json!({ "v_cmd": [1.0] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"].as_str().unwrap().contains("invalid body"));

    let (status, body) = call(&app, "POST", &format!("/session/{id}/finish"), Some(json!({ "label": "empty" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "too_short");

    let bad_params = json!({ "params": { "mu_p": -1.0, "mu_g": 0.35, "c": 0.0459, "r_s": 0.06, "r_p": 0.005, "dt": 0.05 } });
    let (status, body) = call(&app, "POST", "/session", Some(bad_params)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    let (status, _) = call(&app, "POST", &format!("/session/{id}/switch-face"), Some(json!({ "face": "Diagonal" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = call(&app, "GET", "/demos/..%2Fsecret", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = call(&app, "GET", "/demos/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");

    let (status, body) = call(&app, "GET", "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");

    let (status, _) = call(&app, "DELETE", &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, "DELETE", &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn empty_or_missing_demo_directory_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("not-yet-created"));
    let (status, body) = call(&app, "GET", "/demos", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([]));
}
