//! HTTP JSON API under /api/v1.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use lookalike_core::registry::{AttackCategory, RegistryId};
use lookalike_core::store::{AllowListAction, AllowListKind, AllowLists};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::alerts::{Alert, AlertFilter, AlertStats, AlertStatus, AllowListAddition};
use crate::engine::Engine;
use crate::error::ServiceError;

pub type SharedEngine = Arc<RwLock<Engine>>;

pub const DEFAULT_LIMIT: usize = 50;
pub const MAX_LIMIT: usize = 1000;

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(ServiceError::InvalidRequest(e.body_text()))
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError(ServiceError::InvalidRequest(e.body_text()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::AlertNotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::AlertClosed { .. } => StatusCode::CONFLICT,
            ServiceError::InvalidRequest(_) | ServiceError::Name(_) | ServiceError::EmptyDataset => {
                StatusCode::BAD_REQUEST
            }
            ServiceError::Store(lookalike_core::error::StoreError::InvalidValue(_)) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({ "code": self.0.code(), "message": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn read(engine: &SharedEngine) -> std::sync::RwLockReadGuard<'_, Engine> {
    engine.read().unwrap_or_else(|p| p.into_inner())
}

fn write(engine: &SharedEngine) -> std::sync::RwLockWriteGuard<'_, Engine> {
    engine.write().unwrap_or_else(|p| p.into_inner())
}

pub fn router(engine: SharedEngine) -> Router {
    let api = Router::new()
        .route("/alerts", get(list_alerts))
        .route("/alerts/{id}", get(get_alert))
        .route("/alerts/{id}/verdict", post(post_verdict))
        .route("/stats", get(stats))
        .route("/allowlist", post(post_allowlist))
        .route("/health", get(health));
    Router::new()
        .nest("/api/v1", api)
        .fallback(not_found)
        .with_state(engine)
}

async fn not_found() -> Response {
    let body = json!({ "code": "not_found", "message": "no such endpoint" });
    (StatusCode::NOT_FOUND, Json(body)).into_response()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListQuery {
    pub status: Option<String>,
    pub registry: Option<String>,
    pub category: Option<String>,
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AlertList {
    pub alerts: Vec<Alert>,
    pub total: usize,
}

fn parse_filter(q: &ListQuery) -> Result<AlertFilter, ServiceError> {
    let bad = |what: &str, v: &str| ServiceError::InvalidRequest(format!("unknown {what} {v:?}"));
    let status = match q.status.as_deref() {
        None | Some("") => None,
        Some(s) => Some(
            AlertStatus::ALL
                .into_iter()
                .find(|x| x.as_str() == s)
                .ok_or_else(|| bad("status", s))?,
        ),
    };
    let registry = match q.registry.as_deref() {
        None | Some("") => None,
        Some(s) => Some(s.parse::<RegistryId>().map_err(|_| bad("registry", s))?),
    };
    let category = match q.category.as_deref() {
        None | Some("") => None,
        Some(s) => Some(s.parse::<AttackCategory>().map_err(|_| bad("category", s))?),
    };
    Ok(AlertFilter {
        status,
        registry,
        category,
    })
}

async fn list_alerts(
    State(engine): State<SharedEngine>,
    query: Result<Query<ListQuery>, QueryRejection>,
) -> ApiResult<AlertList> {
    let Query(q) = query?;
    let filter = parse_filter(&q)?;
    let limit = q.limit.unwrap_or(DEFAULT_LIMIT);
    if limit == 0 || limit > MAX_LIMIT {
        return Err(ServiceError::InvalidRequest(format!("limit must be in 1..={MAX_LIMIT}")).into());
    }
    let engine = read(&engine);
    let (alerts, total) = engine.alerts.list(&filter, limit, q.offset.unwrap_or(0));
    Ok(Json(AlertList {
        alerts: alerts.into_iter().cloned().collect(),
        total,
    }))
}

async fn get_alert(State(engine): State<SharedEngine>, Path(id): Path<String>) -> ApiResult<Alert> {
    let engine = read(&engine);
    engine
        .alerts
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ServiceError::AlertNotFound(id).into())
}

/// Either an explicit entry or just a kind, whose value is taken from the
/// alert's suspect.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AllowListRequest {
    Entry { kind: AllowListKind, value: String },
    Kind(AllowListKind),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRequest {
    pub status: AlertStatus,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub add_to_allowlist: Option<AllowListRequest>,
}

fn derive_addition(alert: &Alert, req: AllowListRequest) -> Result<AllowListAddition, ServiceError> {
    let suspect = &alert.report.pair.suspect;
    let (kind, value) = match req {
        AllowListRequest::Entry { kind, value } => (kind, value),
        AllowListRequest::Kind(kind) => {
            let value = match kind {
                AllowListKind::Organization => suspect.namespace.clone().ok_or_else(|| {
                    ServiceError::InvalidRequest(format!("{} has no namespace", suspect.raw))
                })?,
                AllowListKind::MirrorDomain => suspect.domain.clone().ok_or_else(|| {
                    ServiceError::InvalidRequest(format!("{} has no host domain", suspect.raw))
                })?,
                AllowListKind::CustomerPackage => format!("{}:{}", suspect.registry, suspect.raw),
            };
            (kind, value)
        }
    };
    Ok(AllowListAddition { kind, value })
}

async fn post_verdict(
    State(engine): State<SharedEngine>,
    Path(id): Path<String>,
    body: Result<Json<VerdictRequest>, JsonRejection>,
) -> ApiResult<Alert> {
    let Json(req) = body?;
    let mut engine = write(&engine);
    let alert = engine
        .alerts
        .get(&id)
        .ok_or_else(|| ServiceError::AlertNotFound(id.clone()))?;
    let addition = req.add_to_allowlist.map(|r| derive_addition(alert, r)).transpose()?;
    let updated = engine.apply_verdict(&id, req.status, req.note, addition, Utc::now())?;
    Ok(Json(updated))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatsResponse {
    #[serde(flatten)]
    pub alerts: AlertStats,
    pub allowlist: BTreeMap<String, usize>,
    pub packages: usize,
}

fn allowlist_sizes(a: &AllowLists) -> BTreeMap<String, usize> {
    BTreeMap::from([
        ("organization".to_string(), a.organizations.len()),
        ("mirror_domain".to_string(), a.mirror_domains.len()),
        ("customer_package".to_string(), a.customer_packages.len()),
    ])
}

async fn stats(State(engine): State<SharedEngine>) -> ApiResult<StatsResponse> {
    let engine = read(&engine);
    Ok(Json(StatsResponse {
        alerts: engine.alerts.stats(),
        allowlist: allowlist_sizes(engine.store.allow_lists()),
        packages: engine.store.len(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllowListUpdate {
    pub kind: AllowListKind,
    pub value: String,
    pub action: AllowListAction,
}

async fn post_allowlist(
    State(engine): State<SharedEngine>,
    body: Result<Json<AllowListUpdate>, JsonRejection>,
) -> ApiResult<AllowLists> {
    let Json(req) = body?;
    let mut engine = write(&engine);
    Ok(Json(engine.update_allowlist(req.kind, &req.value, req.action)?))
}

async fn health(State(engine): State<SharedEngine>) -> Json<serde_json::Value> {
    let engine = read(&engine);
    let indexes: Vec<String> = engine.indexes.keys().map(|r| r.to_string()).collect();
    Json(json!({
        "status": "ok",
        "packages": engine.store.len(),
        "alerts": engine.alerts.len(),
        "model": engine.model.is_some(),
        "indexes": indexes,
    }))
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(engine: SharedEngine, addr: &str) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServiceError::PortInUse(addr.to_string()),
        _ => ServiceError::Io(e),
    })?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(engine)).await?;
    Ok(())
}
