#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use kcap_core::awareness::ManualClock;
use kcap_core::{KnowledgeService, ServiceConfig};
use kcap_server::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

pub struct App {
    pub state: AppState,
    pub router: Router,
    pub clock: Arc<ManualClock>,
}

impl App {
    pub fn in_memory() -> Self {
        let clock = Arc::new(ManualClock::default());
        let svc = KnowledgeService::in_memory(ServiceConfig::default(), clock.clone()).unwrap();
        Self::wrap(svc, clock)
    }

    pub fn wrap(svc: KnowledgeService, clock: Arc<ManualClock>) -> Self {
        let state = AppState::new(svc);
        Self { router: router(state.clone()), state, clock }
    }

    pub async fn raw(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> axum::response::Response {
        let mut req = Request::builder().method(method).uri(path);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        self.router.clone().oneshot(req).await.unwrap()
    }

    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let res = self.raw(method, path, token, body).await;
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()))
        };
        (status, value)
    }

    pub async fn get(&self, path: &str) -> Value {
        let (status, v) = self.call(Method::GET, path, None, None).await;
        assert!(status.is_success(), "GET {path}: {status} {v}");
        v
    }

    pub async fn post(&self, path: &str, token: &str, body: Value) -> Value {
        let (status, v) = self.call(Method::POST, path, Some(token), Some(body)).await;
        assert!(status.is_success(), "POST {path}: {status} {v}");
        v
    }

    /// Registers an actor and returns (actor_id, token).
    pub async fn register(&self, name: &str, role: &str) -> (String, String) {
        let (status, v) = self
            .call(Method::POST, "/api/actors", None, Some(json!({"display_name": name, "role": role})))
            .await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        (v["actor"]["actor_id"].as_str().unwrap().into(), v["token"].as_str().unwrap().into())
    }
}

pub fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap_or("")
}

/// Reads server-sent event frames from a streaming body until `want` data
/// frames arrived or the timeout passes. Returns the parsed `data` payloads.
pub async fn read_frames(body: &mut Body, want: usize, timeout: Duration) -> Vec<Value> {
    let mut buffer = String::new();
    let mut frames = Vec::new();
    let deadline = tokio::time::Instant::now() + timeout;
    while frames.len() < want {
        let next = tokio::time::timeout_at(deadline, body.frame()).await;
        let Ok(Some(Ok(frame))) = next else { break };
        if let Ok(data) = frame.into_data() {
            buffer.push_str(std::str::from_utf8(&data).unwrap());
        }
        while let Some(end) = buffer.find("\n\n") {
            let block: String = buffer.drain(..end + 2).collect();
            for line in block.lines() {
                if let Some(data) = line.strip_prefix("data: ").or_else(|| line.strip_prefix("data:")) {
                    frames.push(serde_json::from_str(data).unwrap());
                }
            }
        }
    }
    frames
}
