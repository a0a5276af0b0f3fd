//! HTTP front door for [`KnowledgeService`]: JSON request/response endpoints
//! listed in [`catalogue::CATALOGUE`] plus a server-sent event stream per
//! awareness session.

pub mod catalogue;
pub mod error;
mod handlers;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::extract::{FromRequest, FromRequestParts, Query, Request};
use axum::http::request::Parts;
use axum::routing::{on, MethodFilter, MethodRouter};
use axum::{Json, Router};
use kcap_core::awareness::EventReceiver;
use kcap_core::domain::Actor;
use kcap_core::ids::SessionId;
use kcap_core::{KnowledgeService, ServiceConfig};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use tokio::net::TcpListener;

use catalogue::{Endpoint, Method, CATALOGUE};
pub use error::ApiError;

/// Live channel of a joined session, parked until its event stream opens.
struct Pending {
    receiver: EventReceiver,
    high_water: u64,
}

struct Shared {
    service: KnowledgeService,
    streams: Mutex<HashMap<SessionId, Pending>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(service: KnowledgeService) -> Self {
        Self(Arc::new(Shared {
            service,
            streams: Mutex::new(HashMap::new()),
        }))
    }

    pub fn service(&self) -> &KnowledgeService {
        &self.0.service
    }

    fn park(&self, session: SessionId, receiver: EventReceiver, high_water: u64) {
        self.0.streams.lock().insert(session, Pending { receiver, high_water });
    }

    fn unpark(&self, session: &SessionId) -> Option<Pending> {
        self.0.streams.lock().remove(session)
    }

    /// Expires silent sessions and drops parked channels they leave behind.
    pub fn sweep(&self) {
        self.service().sweep_sessions();
        let svc = self.service();
        self.0.streams.lock().retain(|id, _| svc.session(id).is_some());
    }
}

/// The authenticated caller. The token comes from the `Authorization: Bearer`
/// header, or from an `access_token` query parameter for clients that cannot
/// set headers on event streams.
pub struct Caller(pub Actor);

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let header = parts
            .headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::to_owned);
        let token = header.or_else(|| {
            #[derive(serde::Deserialize)]
            struct Token {
                access_token: Option<String>,
            }
            Query::<Token>::try_from_uri(&parts.uri)
                .ok()
                .and_then(|q| q.0.access_token)
        });
        token
            .and_then(|t| state.service().authenticate(t.trim()))
            .map(Caller)
            .ok_or(ApiError::Unauthorized)
    }
}

/// JSON body whose parse failures are reported in the service's error format.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|e| ApiError::MalformedRequest(e.body_text()))
    }
}

/// Query string counterpart of [`Body`].
pub struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, ApiError> {
        Query::<T>::try_from_uri(&parts.uri)
            .map(|Query(v)| Params(v))
            .map_err(|e| ApiError::MalformedRequest(e.body_text()))
    }
}

fn method_router(endpoint: &Endpoint) -> MethodRouter<AppState> {
    use handlers::*;
    let filter = match endpoint.method {
        Method::GET => MethodFilter::GET,
        Method::POST => MethodFilter::POST,
        Method::DELETE => MethodFilter::DELETE,
    };
    match endpoint.operation {
        "health" => on(filter, health),
        "catalogue" => on(filter, list_catalogue),
        "register_actor" => on(filter, register_actor),
        "list_actors" => on(filter, list_actors),
        "get_actor" => on(filter, get_actor),
        "authenticate" => on(filter, authenticate),
        "create_decision_problem" => on(filter, create_decision_problem),
        "list_problems" => on(filter, list_problems),
        "get_problem" => on(filter, get_problem),
        "define_stake" => on(filter, define_stake),
        "current_stake" => on(filter, current_stake),
        "advance_phase" => on(filter, advance_phase),
        "add_document" => on(filter, add_document),
        "get_document" => on(filter, get_document),
        "create_annotation" => on(filter, create_annotation),
        "annotations_for" => on(filter, annotations_for),
        "get_annotation" => on(filter, get_annotation),
        "follow_up" => on(filter, follow_up),
        "reuse_annotation" => on(filter, reuse_annotation),
        "list_thread" => on(filter, list_thread),
        "annotation_lineage" => on(filter, annotation_lineage),
        "resolve_anchor" => on(filter, resolve_anchor),
        "declare" => on(filter, declare),
        "append_version" => on(filter, append_version),
        "get_resource" => on(filter, get_resource),
        "validate" => on(filter, validate),
        "get_history" => on(filter, get_history),
        "snapshot_at" => on(filter, snapshot_at),
        "explore" => on(filter, explore),
        "query" => on(filter, query),
        "analyze" => on(filter, analyze),
        "record_feedback" => on(filter, record_feedback),
        "recommend" => on(filter, recommend),
        "join" => on(filter, join),
        "heartbeat" => on(filter, heartbeat),
        "leave" => on(filter, leave),
        "subscribe" => on(filter, subscribe),
        "publish_event" => on(filter, publish_event),
        "replay_since" => on(filter, replay_since),
        "presence_roster" => on(filter, presence_roster),
        "seed_fixture" => on(filter, seed_fixture),
        "export_log" => on(filter, export_log),
        other => panic!("catalogue lists {other} but no handler exists"),
    }
}

/// Builds the router from the catalogue. Panics when the catalogue names an
/// operation without a handler or lists a method/path pair twice.
pub fn router(state: AppState) -> Router {
    CATALOGUE
        .iter()
        .fold(Router::new(), |r, e| r.route(e.path, method_router(e)))
        .with_state(state)
}

/// A bound, not yet running server.
pub struct Server {
    listener: TcpListener,
    state: AppState,
}

impl Server {
    /// Opens the data directory (replaying the log) and binds the listen
    /// address. Fails on a corrupt log or an unbindable address.
    pub async fn bind(config: ServiceConfig) -> anyhow::Result<Self> {
        let service = KnowledgeService::open(config.clone())?;
        let listener = TcpListener::bind(&config.listen_address)
            .await
            .with_context(|| format!("bind failure on {}", config.listen_address))?;
        Ok(Self {
            listener,
            state: AppState::new(service),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn state(&self) -> AppState {
        self.state.clone()
    }

    pub async fn run(self, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> anyhow::Result<()> {
        let sweeper = {
            let state = self.state.clone();
            let every = Duration::from_secs(state.service().config().heartbeat_interval_s);
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(every);
                loop {
                    tick.tick().await;
                    state.sweep();
                }
            })
        };
        let result = axum::serve(self.listener, router(self.state))
            .with_graceful_shutdown(shutdown)
            .await;
        sweeper.abort();
        Ok(result?)
    }
}

/// Parses a log file and replays it into a scratch service, so both
/// malformed lines and records that contradict earlier ones are reported
/// with their 1-based line number. Returns the record count.
pub fn check_log(path: &std::path::Path) -> kcap_core::Result<usize> {
    let file = std::fs::File::open(path)?;
    let entries = kcap_core::log::parse_log(file)?;
    let count = entries.len();
    KnowledgeService::replay(
        ServiceConfig::default(),
        Arc::new(kcap_core::awareness::SystemClock),
        entries,
    )?;
    Ok(count)
}
