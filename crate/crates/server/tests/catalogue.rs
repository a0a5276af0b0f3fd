mod common;

use std::collections::BTreeSet;

use axum::http::{Method as HttpMethod, StatusCode};
use common::App;
use kcap_server::catalogue::{render_markdown, Method, CATALOGUE, DOC_END, DOC_START};

/// Operations of the service modules that must each be reachable through
/// exactly one endpoint. `serve` is the process itself and has none.
const MODULE_OPERATIONS: &[&str] = &[
    "register_actor",
    "create_decision_problem",
    "define_stake",
    "advance_phase",
    "create_annotation",
    "follow_up",
    "reuse_annotation",
    "resolve_anchor",
    "list_thread",
    "declare",
    "append_version",
    "validate",
    "get_history",
    "snapshot_at",
    "explore",
    "query",
    "analyze",
    "record_feedback",
    "recommend",
    "join",
    "heartbeat",
    "leave",
    "publish_event",
    "presence_roster",
    "replay_since",
    "seed_fixture",
    "export_log",
];

#[test]
fn every_module_operation_has_exactly_one_endpoint() {
    for op in MODULE_OPERATIONS {
        let n = CATALOGUE.iter().filter(|e| e.operation == *op).count();
        assert_eq!(n, 1, "{op} appears {n} times");
    }
    let names: BTreeSet<_> = CATALOGUE.iter().map(|e| e.operation).collect();
    assert_eq!(names.len(), CATALOGUE.len(), "operation names repeat");
    let routes: BTreeSet<_> = CATALOGUE.iter().map(|e| (format!("{:?}", e.method), e.path)).collect();
    assert_eq!(routes.len(), CATALOGUE.len(), "method and path pairs repeat");
}

#[test]
fn api_reference_matches_the_catalogue() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/API.md");
    let doc = std::fs::read_to_string(path).unwrap();
    let start = doc.find(DOC_START).expect("start marker") + DOC_START.len();
    let end = doc.find(DOC_END).expect("end marker");
    let expected = format!("\n{}", render_markdown());
    if std::env::var_os("KCAP_BLESS").is_some() && doc[start..end] != expected {
        std::fs::write(path, format!("{}{}{}", &doc[..start], expected, &doc[end..])).unwrap();
        return;
    }
    assert_eq!(doc[start..end], expected, "docs/API.md is stale; rerun this test with KCAP_BLESS=1");
}

fn concrete(path: &str) -> String {
    path.replace("{actor_id}", "actor-404")
        .replace("{dp_id}", "dp-404")
        .replace("{annotation_id}", "ann-404")
        .replace("{kr_id}", "kr-404")
        .replace("{version}", "1")
        .replace("{seq}", "0")
        .replace("{session_id}", "session-404")
        .replace("{name}", "nothing")
}

#[tokio::test]
async fn every_catalogued_route_is_served() {
    let app = App::in_memory();
    let (_, token) = app.register("probe", "DecisionMaker").await;
    for e in CATALOGUE {
        let method = match e.method {
            Method::GET => HttpMethod::GET,
            Method::POST => HttpMethod::POST,
            Method::DELETE => HttpMethod::DELETE,
        };
        let (status, body) = app.call(method, &concrete(e.path), Some(&token), Some(serde_json::json!({}))).await;
        assert_ne!(status, StatusCode::METHOD_NOT_ALLOWED, "{}", e.operation);
        // A missing route answers 404 with an empty body; handlers always explain.
        if status == StatusCode::NOT_FOUND {
            assert!(body["error"]["code"].is_string(), "{} is not routed", e.operation);
        }
    }
    let (status, _) = app.call(HttpMethod::GET, "/api/not-an-endpoint", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn catalogue_endpoint_serves_the_catalogue() {
    let app = App::in_memory();
    let served = app.get("/api/catalogue").await;
    assert_eq!(served, serde_json::to_value(CATALOGUE).unwrap());
}

#[tokio::test]
async fn auth_marked_endpoints_reject_anonymous_calls() {
    let app = App::in_memory();
    for e in CATALOGUE.iter().filter(|e| e.auth) {
        let method = match e.method {
            Method::GET => HttpMethod::GET,
            Method::POST => HttpMethod::POST,
            Method::DELETE => HttpMethod::DELETE,
        };
        let (status, body) = app.call(method.clone(), &concrete(e.path), None, Some(serde_json::json!({}))).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED, "{}", e.operation);
        assert_eq!(common::error_code(&body), "UNAUTHORIZED");
        let (status, _) = app.call(method, &concrete(e.path), Some("bogus"), Some(serde_json::json!({}))).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED, "{}", e.operation);
    }
}
