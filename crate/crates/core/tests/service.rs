use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sketchpose::body_model::{fit_primitives, forward_kinematics, JointId, Pose, SkeletonTemplate};
use sketchpose::camera::Camera;
use sketchpose::interpret::RawStroke;
use sketchpose::metrics::mpjpe;
use sketchpose::render::render_sketch;
use sketchpose::service::{router, ServiceConfig};
use tower::ServiceExt;

fn t() -> &'static SkeletonTemplate {
    SkeletonTemplate::canonical()
}

fn app() -> Router {
    router(ServiceConfig::default()).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn new_session(app: &Router) -> String {
    let (status, v) = call(app, "POST", "/session", None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["revision"], 0);
    v["id"].as_str().unwrap().to_string()
}

fn rest_strokes() -> Value {
    let sketch = render_sketch(&fit_primitives(t(), &Pose::standing(t())).unwrap(), &Camera::default()).unwrap();
    serde_json::to_value(RawStroke::from_sketch(&sketch)).unwrap()
}

fn pose_of(v: &Value) -> Pose {
    serde_json::from_value(v["pose"].clone()).unwrap()
}

#[tokio::test]
async fn healthz_reports_ok() {
    let (status, v) = call(&app(), "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn rest_sketch_lifts_to_rest_pose() {
    let app = app();
    let id = new_session(&app).await;
    let (status, v) = call(&app, "POST", &format!("/session/{id}/sketch"), Some(json!({ "strokes": rest_strokes() }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["revision"], 1);
    let got = forward_kinematics(t(), &pose_of(&v)).unwrap();
    let want = forward_kinematics(t(), &Pose::standing(t())).unwrap();
    let err = mpjpe(&got.0, &want.0).unwrap();
    assert!(err <= 0.02, "MPJPE vs rest {err}");
    assert!(v["body"]["primitives"].as_array().unwrap().len() >= 21);
    assert_eq!(v["labels"].as_array().unwrap().len(), rest_strokes().as_array().unwrap().len());
    assert!(v["diagnostics"]["objective"].as_f64().unwrap().is_finite());

    let (status, e) = call(&app, "GET", &format!("/session/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(pose_of(&e), pose_of(&v));
    assert_eq!(e["provenance"]["from_sketch"], true);
    assert_eq!(e["provenance"]["revision"], 1);
}

#[tokio::test]
async fn fk_in_limits_is_echoed_exactly() {
    let app = app();
    let id = new_session(&app).await;
    let (status, v) =
        call(&app, "POST", &format!("/session/{id}/fk"), Some(json!({ "joint": "l_elbow", "rotation": [0.0, -0.7, 0.0] }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["revision"], 1);
    let pose = pose_of(&v);
    assert_eq!(pose.rotation(JointId::LElbow), nalgebra::Vector3::new(0.0, -0.7, 0.0));
    let (_, g) = call(&app, "GET", &format!("/session/{id}/pose"), None).await;
    assert_eq!(pose_of(&g), pose);
}

#[tokio::test]
async fn fk_out_of_limits_is_clamped() {
    let app = app();
    let id = new_session(&app).await;
    let (_, v) =
        call(&app, "POST", &format!("/session/{id}/fk"), Some(json!({ "joint": "l_knee", "rotation": [9.0, 0.0, 0.0] }))).await;
    let r = pose_of(&v).rotation(JointId::LKnee);
    assert!(t().limits[JointId::LKnee].contains(&r, 1e-12), "{r:?}");
    let (status, _) =
        call(&app, "POST", &format!("/session/{id}/fk"), Some(json!({ "joint": "pelvis", "rotation": [0.1, 0.0, 0.0] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn ik_to_current_wrist_is_a_fixpoint() {
    let app = app();
    let id = new_session(&app).await;
    let rest = Pose::standing(t());
    let wrist = forward_kinematics(t(), &rest).unwrap()[JointId::RWrist];
    let body = json!({ "effector": "r_wrist", "target": [wrist.x, wrist.y, wrist.z] });
    let (status, v) = call(&app, "POST", &format!("/session/{id}/ik"), Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["error"].as_f64().unwrap(), 0.0);
    assert_eq!(pose_of(&v), rest);
}

#[tokio::test]
async fn ik_moves_wrist_to_reachable_target() {
    let app = app();
    let id = new_session(&app).await;
    let mut moved = Pose::standing(t());
    moved.set_rotation_unclamped(JointId::RElbow, nalgebra::Vector3::new(0.0, 0.6, 0.0));
    let target = forward_kinematics(t(), &moved).unwrap()[JointId::RWrist];
    let body = json!({ "effector": "r_wrist", "target": [target.x, target.y, target.z], "chain_root": "r_shoulder" });
    let (status, v) = call(&app, "POST", &format!("/session/{id}/ik"), Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert!(v["error"].as_f64().unwrap() <= 1e-3, "{}", v["error"]);
}

#[tokio::test]
async fn error_statuses() {
    let app = app();
    let (status, v) = call(&app, "GET", "/session/nope/pose", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("nope"));
    let id = new_session(&app).await;
    let fk = json!({ "joint": "l_elbow", "rotation": [0.0, -0.3, 0.0], "revision": 0 });
    let (status, _) = call(&app, "POST", &format!("/session/{id}/fk"), Some(fk.clone())).await;
    assert_eq!(status, StatusCode::OK);
    // Same base revision again is stale.
    let (status, v) = call(&app, "POST", &format!("/session/{id}/fk"), Some(fk)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("stale"));
    let (status, v) = call(&app, "POST", &format!("/session/{id}/sketch"), Some(json!({ "strokes": [] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("uninterpretable"));
    let scribble = json!({ "strokes": [[[10.0, 10.0], [20.0, 12.0], [30.0, 9.0]]] });
    let (status, _) = call(&app, "POST", &format!("/session/{id}/sketch"), Some(scribble)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    // Failed calls leave the session untouched.
    let (_, v) = call(&app, "GET", &format!("/session/{id}/pose"), None).await;
    assert_eq!(v["revision"], 1);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = app();
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    assert_ne!(a, b);
    call(&app, "POST", &format!("/session/{a}/fk"), Some(json!({ "joint": "r_knee", "rotation": [-0.5, 0.0, 0.0] }))).await;
    let (_, v) = call(&app, "GET", &format!("/session/{b}/pose"), None).await;
    assert_eq!(v["revision"], 0);
    assert_eq!(pose_of(&v), Pose::standing(t()));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_mutations_serialize_without_gaps() {
    let app = app();
    let id = new_session(&app).await;
    let mut tasks = Vec::new();
    for k in 0..16 {
        let (app, id) = (app.clone(), id.clone());
        tasks.push(tokio::spawn(async move {
            let body = json!({ "joint": "l_shoulder", "rotation": [0.0, 0.0, 0.01 * k as f64] });
            call(&app, "POST", &format!("/session/{id}/fk"), Some(body)).await
        }));
    }
    let mut revisions = Vec::new();
    for t in tasks {
        let (status, v) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        revisions.push(v["revision"].as_u64().unwrap());
    }
    revisions.sort();
    assert_eq!(revisions, (1..=16).collect::<Vec<_>>());
}

#[tokio::test]
async fn replaying_the_request_log_reproduces_the_pose() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("requests.jsonl");
    let logged = router(ServiceConfig { request_log: Some(log.clone()), ..Default::default() }).unwrap();
    let id = new_session(&logged).await;
    call(&logged, "POST", &format!("/session/{id}/sketch"), Some(json!({ "strokes": rest_strokes() }))).await;
    call(&logged, "POST", &format!("/session/{id}/fk"), Some(json!({ "joint": "l_elbow", "rotation": [0.0, -0.4, 0.0] }))).await;
    let wrist = [0.35, 1.2, -0.1];
    call(&logged, "POST", &format!("/session/{id}/ik"), Some(json!({ "effector": "r_wrist", "target": wrist }))).await;
    let (_, original) = call(&logged, "GET", &format!("/session/{id}/pose"), None).await;

    let fresh = app();
    for line in std::fs::read_to_string(&log).unwrap().lines() {
        let entry: Value = serde_json::from_str(line).unwrap();
        let body = (!entry["body"].is_null()).then(|| entry["body"].clone());
        call(&fresh, entry["method"].as_str().unwrap(), entry["path"].as_str().unwrap(), body).await;
    }
    let (_, replayed) = call(&fresh, "GET", &format!("/session/{id}/pose"), None).await;
    assert_eq!(replayed, original);
    assert_eq!(replayed["revision"], 3);
}
