use std::sync::Arc;

use adboin12::{DesignParams, TrialState};
use adboin12_cli::report;
use adboin12_cli::service::{replay_wal, router, Service};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn params18() -> DesignParams {
    DesignParams {
        max_n: 18,
        ..DesignParams::default()
    }
}

async fn call(app: &Router, method: &str, path: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(path);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn raw(app: &Router, path: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::builder()
        .method("POST")
        .uri(path)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn cohort(dose: usize, a: u32, b: u32, c: u32, d: u32) -> Value {
    json!({ "dose": dose, "a": a, "b": b, "c": c, "d": d })
}

fn app(params: DesignParams) -> Router {
    router(Arc::new(Service::ephemeral(params).unwrap()))
}

async fn state(app: &Router) -> TrialState {
    let (status, v) = call(app, "GET", "/state", None).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_value(v).unwrap()
}

/// The report the `decide` command prints for the state the service holds.
async fn decide_text(app: &Router) -> String {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    std::fs::write(&path, state(app).await.to_json()).unwrap();
    let cli = <adboin12_cli::Cli as clap::Parser>::try_parse_from(["adboin12", "decide", "--state", path.to_str().unwrap()])
        .unwrap();
    let mut out = Vec::new();
    adboin12_cli::run(&cli, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[tokio::test]
async fn cohort_then_decision_matches_decide() {
    let app = app(params18());
    let (status, v) = call(&app, "GET", "/decision", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["summary"], "start at dose 1, cohort size 3");

    let (status, v) = call(&app, "POST", "/cohort", Some(cohort(0, 1, 0, 2, 0))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["summary"], "escalate to dose 2, cohort size 3");

    let (_, v) = call(&app, "GET", "/decision", None).await;
    assert_eq!(v["summary"], "escalate to dose 2, cohort size 3");
    assert_eq!(v["report"].as_str().unwrap(), decide_text(&app).await);
}

#[tokio::test]
async fn whatif_does_not_mutate() {
    let app = app(params18());
    call(&app, "POST", "/cohort", Some(cohort(0, 1, 0, 2, 0))).await;
    let before = state(&app).await;
    let (status, preview) = call(&app, "POST", "/whatif", Some(cohort(1, 2, 0, 1, 0))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state(&app).await, before);
    let (_, committed) = call(&app, "POST", "/cohort", Some(cohort(1, 2, 0, 1, 0))).await;
    assert_eq!(preview["decision"], committed["decision"]);
    assert_eq!(preview["summary"], "stay at dose 2, cohort size 6");
}

#[tokio::test]
async fn errors_are_machine_readable() {
    let app = app(params18());
    let (status, v) = call(&app, "POST", "/cohort", Some(cohort(2, 1, 0, 2, 0))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"]["code"], "dose_mismatch");

    let (status, v) = call(&app, "POST", "/cohort", Some(cohort(0, 1, 0, 1, 0))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "cohort_size_mismatch");

    let (status, v) = raw(&app, "/cohort", "{\"dose\": 0, \"a\": 1").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "invalid_json");

    let (status, v) = raw(&app, "/cohort", r#"{"dose":0,"a":1,"b":0,"c":2,"d":0,"extra":1}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "invalid_json");

    let (status, v) = raw(&app, "/reset", r#"{"params":{"phi_t":2.0}}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "configuration");

    // Nothing above changed the trial.
    assert_eq!(state(&app).await, TrialState::new(params18()).unwrap());
}

#[tokio::test]
async fn stopped_trial() {
    let app = app(params18());
    let (_, v) = call(&app, "POST", "/cohort", Some(cohort(0, 0, 0, 0, 3))).await;
    assert_eq!(v["summary"], "trial stopped (stopped_no_admissible)");
    let (status, v) = call(&app, "POST", "/cohort", Some(cohort(0, 0, 0, 0, 3))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "trial_stopped");
    let (status, _) = call(&app, "POST", "/whatif", Some(cohort(0, 3, 0, 0, 0))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, v) = call(&app, "GET", "/decision", None).await;
    assert!(v["report"].as_str().unwrap().contains("selected OBD: none"));

    let (status, v) = call(&app, "POST", "/reset", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "active");
    assert_eq!(state(&app).await, TrialState::new(params18()).unwrap());
}

#[tokio::test]
async fn design_tables_and_audit() {
    let app = app(params18());
    let (_, design) = call(&app, "GET", "/design", None).await;
    assert_eq!(serde_json::from_value::<DesignParams>(design).unwrap(), params18());
    let (_, tables) = call(&app, "GET", "/tables", None).await;
    assert_eq!(tables["safety"].as_array().unwrap().len(), 5);
    assert_eq!(tables["expansion"][0]["rows"].as_array().unwrap().len(), 9);
    call(&app, "POST", "/cohort", Some(cohort(0, 1, 0, 2, 0))).await;
    let (_, audit) = call(&app, "GET", "/audit", None).await;
    let kinds: Vec<&str> = audit["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["event"]["kind"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["cohort", "decision"]);
}

#[tokio::test]
async fn audit_file_replays_to_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let wal = dir.path().join("audit.jsonl");
    let live = router(Arc::new(Service::open(params18(), &wal).unwrap()));
    for body in [cohort(0, 1, 0, 2, 0), cohort(1, 2, 0, 1, 0), cohort(1, 2, 1, 2, 1)] {
        let (status, _) = call(&live, "POST", "/cohort", Some(body)).await;
        assert_eq!(status, StatusCode::OK);
    }
    // Rejected requests never reach the file.
    call(&live, "POST", "/cohort", Some(cohort(4, 1, 0, 2, 0))).await;
    let expected = state(&live).await;

    let text = std::fs::read_to_string(&wal).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(replay_wal(&text).unwrap().unwrap(), expected);

    // A torn final write is ignored on recovery.
    std::fs::write(&wal, format!("{text}{{\"op\":\"cohort\",\"dose\"")).unwrap();
    let recovered = router(Arc::new(Service::open(DesignParams::default(), &wal).unwrap()));
    assert_eq!(state(&recovered).await, expected);
    let next = expected.pending.unwrap();
    let body = cohort(next.dose, next.cohort_size, 0, 0, 0);
    let (status, _) = call(&recovered, "POST", "/cohort", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    let again = router(Arc::new(Service::open(DesignParams::default(), &wal).unwrap()));
    assert_eq!(state(&again).await, state(&recovered).await);
}

/// Random outcome sequences: the service's decision equals the engine's and
/// the CLI report for the same state.
#[tokio::test]
async fn randomized_parity() {
    let mut seed = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = move || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        seed
    };
    for _ in 0..20 {
        let app = app(DesignParams::default());
        let mut engine = TrialState::new(DesignParams::default()).unwrap();
        while engine.is_active() {
            let assign = engine.pending.unwrap();
            let mut counts = [0u32; 4];
            for _ in 0..assign.cohort_size {
                counts[(next() % 4) as usize] += 1;
            }
            let body = cohort(assign.dose, counts[0], counts[1], counts[2], counts[3]);
            let (status, v) = call(&app, "POST", "/cohort", Some(body)).await;
            assert_eq!(status, StatusCode::OK);
            let d = engine
                .submit_cohort(assign.dose, adboin12::OutcomeCounts2x2::new(counts[0], counts[1], counts[2], counts[3]), None)
                .unwrap();
            assert_eq!(v["summary"], d.to_string());
            let (_, shown) = call(&app, "GET", "/decision", None).await;
            assert_eq!(shown["report"].as_str().unwrap(), report::render(&engine).unwrap());
        }
        let (_, shown) = call(&app, "GET", "/decision", None).await;
        assert_eq!(shown["report"].as_str().unwrap(), decide_text(&app).await);
    }
}
