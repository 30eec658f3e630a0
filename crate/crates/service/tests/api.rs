use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use ndp_core::fixtures::two_state_ab;
use ndp_core::io::mdp_to_json;
use ndp_service::{router, AppState, Transcript};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn load_fixture(app: &Router) -> u64 {
    let req = Request::post("/mdps").body(Body::from(mdp_to_json(&two_state_ab()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["states"], 2);
    assert_eq!(v["pairs"], 3);
    v["id"].as_u64().unwrap()
}

async fn open(app: &Router, params: Value) -> u64 {
    let (status, v) = call(app, "POST", "/sessions", Some(params)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["id"].as_u64().unwrap()
}

fn app() -> Router {
    router(AppState::new(), None)
}

#[tokio::test]
async fn fixture_suggests_both_actions_at_s0() {
    let app = app();
    let mdp = load_fixture(&app).await;
    let id = open(&app, json!({"mdp_id": mdp, "epsilon": 0.1})).await;
    let (status, s) = call(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["state"], 0);
    assert_eq!(s["state_label"], "s0");
    let actions = s["actions"].as_array().unwrap();
    let labels: Vec<&str> = actions.iter().map(|a| a["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["a", "b"]);
    assert!((actions[0]["worst_case_q"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((actions[1]["worst_case_q"].as_f64().unwrap() - 0.95).abs() < 1e-6);
    assert_eq!(actions[0]["is_optimal"], true);
    assert_eq!(actions[1]["is_optimal"], false);
    assert!((s["v_star"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((s["worst_case_v"].as_f64().unwrap() - 0.95).abs() < 1e-6);
    assert_eq!(s["epsilon"], 0.1);
}

#[tokio::test]
async fn zero_epsilon_gives_singletons() {
    let app = app();
    let mdp = load_fixture(&app).await;
    for algorithm in ["conservative", "search_full", "exact"] {
        let id = open(&app, json!({"mdp_id": mdp, "epsilon": 0.0, "algorithm": algorithm})).await;
        let (_, s) = call(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
        let actions = s["actions"].as_array().unwrap();
        assert_eq!(actions.len(), 1, "{algorithm}");
        assert_eq!(actions[0]["label"], "a");
    }
}

#[tokio::test]
async fn choosing_b_pays_its_mean_reward() {
    let app = app();
    let mdp = load_fixture(&app).await;
    let id = open(&app, json!({"mdp_id": mdp, "epsilon": 0.1, "horizon": 3})).await;
    let (status, out) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": 1}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(out["reward"], 0.95);
    assert_eq!(out["next_state"], 1);
    assert_eq!(out["done"], false);
    assert_eq!(out["return_so_far"], 0.95);
    let (_, s) = call(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
    assert_eq!(s["state_label"], "s1");
    assert_eq!(s["step"], 1);
}

#[tokio::test]
async fn off_policy_action_needs_override() {
    let app = app();
    let mdp = load_fixture(&app).await;
    let id = open(&app, json!({"mdp_id": mdp, "epsilon": 0.0})).await;
    let uri = format!("/sessions/{id}/step");
    let (status, err) = call(&app, "POST", &uri, Some(json!({"action": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "not_suggested");
    assert!(err["detail"].as_str().unwrap().contains("[0]"));
    let (status, _) = call(&app, "POST", &uri, Some(json!({"action": 1, "allow_override": true}))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, t) = call(&app, "GET", &format!("/sessions/{id}/transcript"), None).await;
    assert_eq!(t["entries"].as_array().unwrap().len(), 1);
    assert_eq!(t["entries"][0]["override"], true);
    assert_eq!(t["entries"][0]["suggested"], json!([0]));
}

#[tokio::test]
async fn invalid_action_is_rejected() {
    let app = app();
    let mdp = load_fixture(&app).await;
    let id = open(&app, json!({"mdp_id": mdp, "epsilon": 0.1})).await;
    let (status, err) =
        call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": 7, "allow_override": true}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "invalid_action");
}

#[tokio::test]
async fn finished_episode_reports_completion() {
    let app = app();
    let mdp = load_fixture(&app).await;
    let id = open(&app, json!({"mdp_id": mdp, "epsilon": 0.1, "horizon": 2})).await;
    let uri = format!("/sessions/{id}/step");
    call(&app, "POST", &uri, Some(json!({"action": 0}))).await;
    let (_, out) = call(&app, "POST", &uri, Some(json!({"action": 0}))).await;
    assert_eq!(out["done"], true);
    let (status, err) = call(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "episode_complete");
    let (status, _) = call(&app, "POST", &uri, Some(json!({"action": 0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn terminal_state_ends_the_episode() {
    let app = app();
    let text = mdp_to_json(&ndp_core::fixtures::exclusive_options());
    let (status, v) = call(&app, "POST", "/mdps", Some(serde_json::from_str(&text).unwrap())).await;
    assert_eq!(status, StatusCode::CREATED);
    let mdp = v["id"].as_u64().unwrap();
    let id = open(&app, json!({"mdp_id": mdp, "epsilon": 0.05, "start_state": 2})).await;
    let (_, out) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": 0}))).await;
    assert_eq!(out["next_state"], Value::Null);
    assert_eq!(out["done"], true);
    let (status, err) = call(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "episode_complete");
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let app = app();
    let (status, err) = call(&app, "POST", "/sessions", Some(json!({"mdp_id": 99, "epsilon": 0.1}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "not_found");
    for uri in ["/sessions/42/suggestions", "/sessions/xyz/transcript", "/nowhere"] {
        let (status, err) = call(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(err["error"], "not_found");
    }
}

#[tokio::test]
async fn bad_requests_are_reported_as_json() {
    let app = app();
    let mdp = load_fixture(&app).await;
    let cases = [
        (json!({"mdp_id": mdp, "epsilon": 1.5}), StatusCode::UNPROCESSABLE_ENTITY, "invalid_epsilon"),
        (json!({"mdp_id": mdp, "epsilon": 0.1, "horizon": 0}), StatusCode::BAD_REQUEST, "invalid_request"),
        (json!({"mdp_id": mdp, "epsilon": 0.1, "start_state": 5}), StatusCode::BAD_REQUEST, "invalid_request"),
        (json!({"mdp_id": mdp, "epsilon": 0.1, "algorithm": "magic"}), StatusCode::BAD_REQUEST, "invalid_request"),
    ];
    for (body, status, code) in cases {
        let (got, err) = call(&app, "POST", "/sessions", Some(body.clone())).await;
        assert_eq!(got, status, "{body}");
        assert_eq!(err["error"], code, "{body}");
    }
    let (status, err) = call(&app, "POST", "/mdps", Some(json!({"name": "x", "gamma": 2.0}))).await;
    assert!(status.is_client_error());
    assert!(err["detail"].is_string());
}

#[tokio::test]
async fn search_dag_needs_an_acyclic_mdp() {
    let app = app();
    let mdp = load_fixture(&app).await;
    let (status, err) =
        call(&app, "POST", "/sessions", Some(json!({"mdp_id": mdp, "epsilon": 0.1, "algorithm": "search_dag"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "not_dag");
}

async fn play(app: &Router, mdp: u64, seed: u64, choices: &[usize]) -> Transcript {
    let id = open(app, json!({"mdp_id": mdp, "epsilon": 0.1, "seed": seed, "horizon": choices.len()})).await;
    for &a in choices {
        let (status, _) =
            call(app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": a, "allow_override": true}))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, t) = call(app, "GET", &format!("/sessions/{id}/transcript"), None).await;
    serde_json::from_value(t).unwrap()
}

fn stochastic_json() -> String {
    let mut rng = ndp_testkit::rng(31);
    let mdp = ndp_testkit::random_mdp(&mut rng, 5, 3, 3);
    mdp_to_json(&mdp)
}

#[tokio::test]
async fn replay_is_deterministic_and_returns_recompute() {
    let app = app();
    let text = stochastic_json();
    let (_, v) = call(&app, "POST", "/mdps", Some(serde_json::from_str(&text).unwrap())).await;
    let mdp = v["id"].as_u64().unwrap();
    let gamma = ndp_core::io::parse_mdp(&text).unwrap().gamma();
    let choices = [0, 1, 2, 0, 1, 2, 2, 1, 0, 0, 1, 2];
    let first = play(&app, mdp, 5, &choices).await;
    let second = play(&app, mdp, 5, &choices).await;
    assert_eq!(first.entries, second.entries);
    assert_eq!(first.return_so_far, second.return_so_far);
    assert!((first.recomputed_return(gamma) - first.return_so_far).abs() <= 1e-12);
    assert!(first.done);
    let other = play(&app, mdp, 6, &choices).await;
    let states = |t: &Transcript| t.entries.iter().map(|e| e.next_state).collect::<Vec<_>>();
    assert_ne!(states(&first), states(&other));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_are_isolated() {
    let app = app();
    let text = stochastic_json();
    let (_, v) = call(&app, "POST", "/mdps", Some(serde_json::from_str(&text).unwrap())).await;
    let mdp = v["id"].as_u64().unwrap();
    let choices: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let solo = play(&app, mdp, 11, &choices).await;
    let mut handles = Vec::new();
    for _ in 0..8 {
        let app = app.clone();
        let choices = choices.clone();
        handles.push(tokio::spawn(async move { play(&app, mdp, 11, &choices).await }));
    }
    for h in handles {
        let t = h.await.unwrap();
        assert_eq!(t.entries, solo.entries);
        assert_eq!(t.return_so_far, solo.return_so_far);
    }
}

#[tokio::test]
async fn static_ui_is_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>advisor</html>").unwrap();
    let app = router(AppState::new(), Some(dir.path().to_path_buf()));
    let resp = app.clone().oneshot(Request::get("/ui/index.html").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<html>advisor</html>");
    let resp = app.oneshot(Request::get("/ui/").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}
