use std::sync::{Arc, RwLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, TimeZone, Utc};
use serde_json::{json, Value};
use tower::ServiceExt;

use lookalike::alerts::AlertKey;
use lookalike::api::{router, SharedEngine};
use lookalike::config::Config;
use lookalike::engine::Engine;
use lookalike_core::benignity::{BenignityFilter, HeuristicConfig, RuleWeights};
use lookalike_core::registry::{PackageRef, RegistryId, SubstitutionTable};
use lookalike_core::search::{AlertDraft, CandidatePair, Channel};
use lookalike_core::store::MetadataStore;

fn now() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 1, 0, 0, 0).unwrap()
}

fn item(registry: RegistryId, suspect: &str, target: &str, cosine: f64) -> (AlertKey, AlertDraft, lookalike_core::benignity::BenignityReport) {
    let s = PackageRef::parse(registry, suspect).unwrap();
    let t = PackageRef::parse(registry, target).unwrap();
    let pair = CandidatePair::assemble(&s, &t, cosine, Channel::Lexical, &SubstitutionTable::default()).unwrap();
    let filter = BenignityFilter::heuristic(RuleWeights::default(), HeuristicConfig::default());
    let report = filter.evaluate_pair(&pair, &MetadataStore::in_memory(), now());
    let key = AlertKey {
        registry,
        suspect: suspect.to_lowercase(),
        target: target.to_lowercase(),
        snapshot: now(),
    };
    let draft = AlertDraft {
        suspect: s,
        categories: vec![pair.category],
        pairs: vec![pair],
    };
    (key, draft, report)
}

fn engine(seeded: bool) -> SharedEngine {
    let mut engine = Engine::in_memory(Config::default()).unwrap();
    if seeded {
        let items = vec![
            item(RegistryId::Pypi, "bz2fiel", "bz2file", 0.95),
            item(RegistryId::Npm, "@reqeusts/client", "@requests/client", 0.9),
            item(RegistryId::Npm, "lodahs", "lodash", 0.8),
        ];
        engine.alerts.create_batch(items, now()).unwrap();
    }
    Arc::new(RwLock::new(engine))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
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
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

#[tokio::test]
async fn empty_alert_list() {
    let app = router(engine(false));
    let (status, body) = call(&app, "GET", "/api/v1/alerts", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"alerts": [], "total": 0}));
}

#[tokio::test]
async fn list_filters_and_paginates() {
    let app = router(engine(true));
    let (_, all) = call(&app, "GET", "/api/v1/alerts", None).await;
    assert_eq!(all["total"], 3);
    let risks: Vec<f64> = all["alerts"].as_array().unwrap().iter().map(|a| a["report"]["risk_score"].as_f64().unwrap()).collect();
    assert!(risks.windows(2).all(|w| w[0] >= w[1]), "{risks:?}");

    let (_, npm) = call(&app, "GET", "/api/v1/alerts?registry=npm&status=open", None).await;
    assert_eq!(npm["total"], 2);
    let (_, page) = call(&app, "GET", "/api/v1/alerts?limit=1&offset=1", None).await;
    assert_eq!(page["total"], 3);
    assert_eq!(page["alerts"].as_array().unwrap().len(), 1);
    assert_eq!(page["alerts"][0]["id"], all["alerts"][1]["id"]);
}

#[tokio::test]
async fn bad_queries_are_rejected() {
    let app = router(engine(true));
    for uri in [
        "/api/v1/alerts?status=pending",
        "/api/v1/alerts?registry=cargo",
        "/api/v1/alerts?limit=0",
        "/api/v1/alerts?limit=abc",
        "/api/v1/alerts?color=red",
    ] {
        let (status, body) = call(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        assert_eq!(body["code"], "invalid_request", "{uri}");
    }
}

#[tokio::test]
async fn missing_alert_and_unknown_route() {
    let app = router(engine(true));
    let (status, body) = call(&app, "GET", "/api/v1/alerts/alert-999999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "alert_not_found");
    let (status, body) = call(&app, "POST", "/api/v1/alerts/alert-999999/verdict", Some(json!({"status": "confirmed_active"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "alert_not_found");
    let (status, body) = call(&app, "GET", "/api/v2/alerts", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
}

#[tokio::test]
async fn verdict_closes_once() {
    let app = router(engine(true));
    let (status, alert) = call(&app, "GET", "/api/v1/alerts/alert-000000", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(alert["status"], "open");

    let (status, body) = call(
        &app,
        "POST",
        "/api/v1/alerts/alert-000000/verdict",
        Some(json!({"status": "confirmed_active", "note": "copied readme"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "confirmed_active");
    assert_eq!(body["analyst_note"], "copied readme");
    assert_eq!(body["history"].as_array().unwrap().len(), 1);

    let (status, body) = call(&app, "POST", "/api/v1/alerts/alert-000000/verdict", Some(json!({"status": "dismissed_benign"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "alert_closed");
}

#[tokio::test]
async fn verdict_validation() {
    let app = router(engine(true));
    for body in [
        json!({"status": "open"}),
        json!({"status": "maybe"}),
        json!({"status": "confirmed_active", "add_to_allowlist": "organization"}),
        json!({"status": "dismissed_benign", "extra": 1}),
    ] {
        let (status, resp) = call(&app, "POST", "/api/v1/alerts/alert-000001/verdict", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(resp["code"], "invalid_request", "{body}");
    }
    // a flat suspect has no namespace to allow-list
    let (status, _) = call(
        &app,
        "POST",
        "/api/v1/alerts/alert-000000/verdict",
        Some(json!({"status": "dismissed_benign", "add_to_allowlist": "organization"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, alert) = call(&app, "GET", "/api/v1/alerts/alert-000000", None).await;
    assert_eq!(alert["status"], "open");
}

#[tokio::test]
async fn dismissal_grows_allow_list_and_stats() {
    let app = router(engine(true));
    let (_, before) = call(&app, "GET", "/api/v1/stats", None).await;
    assert_eq!(before["total"], 3);
    assert_eq!(before["by_status"]["open"], 3);
    assert_eq!(before["allowlist"]["organization"], 0);

    let (status, body) = call(
        &app,
        "POST",
        "/api/v1/alerts/alert-000001/verdict",
        Some(json!({"status": "dismissed_benign", "add_to_allowlist": "organization"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["history"][0]["allowlist"], json!({"kind": "organization", "value": "reqeusts"}));

    let (_, after) = call(&app, "GET", "/api/v1/stats", None).await;
    assert_eq!(after["by_status"]["open"], 2);
    assert_eq!(after["by_status"]["dismissed_benign"], 1);
    assert_eq!(after["allowlist"]["organization"], 1);
    assert_eq!(after["by_registry"]["npm"], 2);
}

#[tokio::test]
async fn allowlist_endpoint_adds_and_removes() {
    let app = router(engine(false));
    let (status, lists) = call(
        &app,
        "POST",
        "/api/v1/allowlist",
        Some(json!({"kind": "mirror_domain", "value": "gopkg.in", "action": "add"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(lists["mirror_domains"].as_array().unwrap().len(), 1);
    let (status, lists) = call(
        &app,
        "POST",
        "/api/v1/allowlist",
        Some(json!({"kind": "mirror_domain", "value": "gopkg.in", "action": "remove"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!(lists["mirror_domains"].as_array().unwrap().is_empty());
    let (status, body) = call(&app, "POST", "/api/v1/allowlist", Some(json!({"kind": "organization", "value": "  ", "action": "add"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    let (status, _) = call(&app, "POST", "/api/v1/allowlist", Some(json!({"kind": "galaxy", "value": "x", "action": "add"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn health_reports_components() {
    let app = router(engine(true));
    let (status, body) = call(&app, "GET", "/api/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["alerts"], 3);
    assert_eq!(body["model"], false);
    assert_eq!(body["indexes"], json!([]));
}
