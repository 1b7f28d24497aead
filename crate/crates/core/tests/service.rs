mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::{cli, toy_config};
use kgaudit::service::{self, ApiError, DisagreementView, ServiceError};
use kgaudit::store::RunStore;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config(dir.path());
        let config = config.to_str().unwrap();
        assert_eq!(cli(&["--config", config, "sample", "--kg", "toy"], "").0, 0);
        assert_eq!(cli(&["--config", config, "classify", "--kg", "toy", "--model", "mock", "--run-id", "r1"], "").0, 0);
        Self { dir }
    }

    fn app(&self) -> Router {
        service::router(RunStore::new(self.dir.path().join("data")), None)
    }

    fn config(&self) -> String {
        self.dir.path().join("config.toml").to_string_lossy().into_owned()
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

async fn json_of(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, "GET", uri, None).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn annotation(record_id: &str, cause: &str) -> Value {
    json!({"record_id": record_id, "annotator_id": "alice", "human_verdict": "positive", "cause": cause, "note": "n"})
}

#[tokio::test]
async fn empty_store_lists_no_runs() {
    let dir = tempfile::tempdir().unwrap();
    let app = service::router(RunStore::new(dir.path()), None);
    assert_eq!(json_of(&app, "/api/v1/runs").await, (StatusCode::OK, json!([])));
    let (status, body) = json_of(&app, "/api/v1/nothing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
}

#[tokio::test]
async fn runs_and_disagreements() {
    let f = Fixture::new();
    let app = f.app();
    let (_, runs) = json_of(&app, "/api/v1/runs").await;
    assert_eq!(runs[0]["run_id"], "r1");
    assert_eq!(runs[0]["disagreements"], 3);
    assert_eq!(runs[0]["corrupt"], false);

    let (status, all) = json_of(&app, "/api/v1/runs/r1/disagreements").await;
    assert_eq!(status, StatusCode::OK);
    let all: Vec<DisagreementView> = serde_json::from_value(all).unwrap();
    assert_eq!(all.len(), 3);
    let uri = "/api/v1/runs/r1/disagreements?class=http%3A%2F%2Fexample.org%2Fzoo%2FBird";
    let (_, birds) = json_of(&app, uri).await;
    assert_eq!(birds.as_array().unwrap().len(), 1);

    let (status, body) = json_of(&app, "/api/v1/runs/nope/disagreements").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let err: ApiError = serde_json::from_value(body).unwrap();
    assert_eq!((err.status, err.code.as_str()), (404, "unknown_run"));
}

#[tokio::test]
async fn annotation_lifecycle() {
    let f = Fixture::new();
    let app = f.app();
    let (_, all) = json_of(&app, "/api/v1/runs/r1/disagreements").await;
    let id = all[0]["record_id"].as_str().unwrap().to_string();
    let post = |body| call(&app, "POST", "/api/v1/runs/r1/annotations", Some(body));

    let (status, body) = post(annotation(&id, "missing_relation")).await;
    assert_eq!(status, StatusCode::CREATED);
    let stored: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(stored["cause"], "missing_relation");
    assert_eq!(post(annotation(&id, "missing_data")).await.0, StatusCode::OK);
    let (status, body) = post(annotation(&id, "typo_cause")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["code"], "invalid_cause");
    let mut bad_verdict = annotation(&id, "missing_data");
    bad_verdict["human_verdict"] = json!("maybe");
    assert_eq!(post(bad_verdict).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post(annotation("0000000000000000", "missing_data")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(post(json!({"record_id": id})).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        call(&app, "POST", "/api/v1/runs/nope/annotations", Some(annotation(&id, "missing_data"))).await.0,
        StatusCode::NOT_FOUND
    );

    let (_, open) = json_of(&app, "/api/v1/runs/r1/disagreements?annotated=false").await;
    assert_eq!(open.as_array().unwrap().len(), 2);
    let (_, done) = json_of(&app, "/api/v1/runs/r1/disagreements?annotated=true").await;
    assert_eq!(done[0]["annotations"][0]["cause"], "missing_data");

    // A fresh service over the same directory replays the log.
    let (_, again) = json_of(&f.app(), "/api/v1/runs/r1/disagreements?annotated=true").await;
    assert_eq!(again, done);
}

#[tokio::test]
async fn report_is_identical_to_cli_output() {
    let f = Fixture::new();
    let app = f.app();
    let (status, body) = json_of(&app, "/api/v1/runs/r1/report").await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["error_analysis"]["human_kg_kappa"]["value"].is_null());
    assert_eq!(body["error_analysis"]["human_kg_kappa"]["reason"], "no annotations");

    let (_, all) = json_of(&app, "/api/v1/runs/r1/disagreements").await;
    let causes = ["missing_data", "missing_relation", "incorrect_reasoning"];
    for (record, cause) in all.as_array().unwrap().iter().zip(causes) {
        let id = record["record_id"].as_str().unwrap();
        assert_eq!(call(&app, "POST", "/api/v1/runs/r1/annotations", Some(annotation(id, cause))).await.0, StatusCode::CREATED);
    }
    for format in ["json", "text", "csv", "markdown"] {
        let (status, api) = call(&app, "GET", &format!("/api/v1/runs/r1/report?format={format}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let (code, out, _) = cli(&["--config", &f.config(), "report", "r1", "--format", format], "");
        assert_eq!(code, 0);
        assert_eq!(String::from_utf8(api).unwrap(), out, "{format}");
    }
    let (_, report) = json_of(&app, "/api/v1/runs/r1/report").await;
    let total: f64 = report["error_analysis"]["causes"]["causes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["percent"].as_f64().unwrap())
        .sum();
    // Four one-decimal shares drift from 100 by at most 0.2.
    assert!((total - 100.0).abs() <= 0.2 + 1e-9, "{total}");
    assert_eq!(call(&app, "GET", "/api/v1/runs/r1/report?format=xml", None).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "GET", "/api/v1/runs/zz/report", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_assets_are_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>review</h1>").unwrap();
    let app = service::router(RunStore::new(dir.path().join("data")), Some(dir.path().to_path_buf()));
    let (status, body) = call(&app, "GET", "/index.html", None).await;
    assert_eq!((status, body.as_slice()), (StatusCode::OK, b"<h1>review</h1>".as_slice()));
    let (_, runs) = json_of(&app, "/api/v1/runs").await;
    assert_eq!(runs, json!([]));
}

#[tokio::test]
async fn port_conflict_is_reported() {
    let first = service::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = first.local_addr().unwrap();
    assert!(matches!(service::bind(addr).await, Err(ServiceError::AddressInUse(a)) if a == addr));

    let dir = tempfile::tempdir().unwrap();
    let config = toy_config(dir.path());
    let (code, _, err) = tokio::task::spawn_blocking(move || {
        cli(&["--config", config.to_str().unwrap(), "serve", "--bind", &addr.to_string()], "")
    })
    .await
    .unwrap();
    assert_eq!(code, 1);
    assert!(err.contains("already in use"), "{err}");
}

#[tokio::test]
async fn serves_until_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    let listener = service::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(service::serve(
        listener,
        service::router(RunStore::new(dir.path()), None),
        async {
            let _ = rx.await;
        },
    ));
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    stream
        .write_all(b"GET /api/v1/runs HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).await.unwrap();
    assert!(response.starts_with("HTTP/1.1 200"));
    assert!(response.ends_with("[]"));
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}
