use std::io::Write;

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;

use lookalike::alerts::{AlertFilter, AlertKey, AlertLog, AlertStatus, AllowListAddition};
use lookalike::config::Config;
use lookalike::engine::Engine;
use lookalike::error::ServiceError;
use lookalike_core::benignity::{BenignityFilter, BenignityReport, HeuristicConfig, RuleWeights};
use lookalike_core::registry::{PackageRef, RegistryId, SubstitutionTable};
use lookalike_core::search::{AlertDraft, CandidatePair, Channel};
use lookalike_core::store::{AllowListKind, MetadataStore};

fn now() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 1, 0, 0, 0).unwrap()
}

fn item(suspect: &str, target: &str) -> (AlertKey, AlertDraft, BenignityReport) {
    let registry = RegistryId::Npm;
    let s = PackageRef::parse(registry, suspect).unwrap();
    let t = PackageRef::parse(registry, target).unwrap();
    let pair = CandidatePair::assemble(&s, &t, 0.9, Channel::Lexical, &SubstitutionTable::default()).unwrap();
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

fn snapshot(log: &AlertLog) -> Vec<lookalike::alerts::Alert> {
    log.iter().cloned().collect()
}

#[test]
fn batch_creation_dedups_keys() {
    let mut log = AlertLog::in_memory();
    let ids = log
        .create_batch(vec![item("lodahs", "lodash"), item("lodahs", "lodash"), item("expres", "express")], now())
        .unwrap();
    assert_eq!(ids, vec!["alert-000000", "alert-000001"]);
    let again = log.create_batch(vec![item("lodahs", "lodash")], now()).unwrap();
    assert!(again.is_empty());
    assert_eq!(log.len(), 2);
}

#[test]
fn replay_rebuilds_the_same_alerts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("alerts.jsonl");
    let mut log = AlertLog::open(&path).unwrap();
    log.create_batch(vec![item("lodahs", "lodash"), item("@reqeusts/client", "@requests/client")], now())
        .unwrap();
    log.transition("alert-000000", AlertStatus::ConfirmedStealthy, Some("dormant".into()), None, now())
        .unwrap();
    let before = snapshot(&log);
    drop(log);

    let mut reopened = AlertLog::open(&path).unwrap();
    assert_eq!(snapshot(&reopened), before);
    let next = reopened.create_batch(vec![item("expres", "express")], now()).unwrap();
    assert_eq!(next, vec!["alert-000002"]);
}

#[test]
fn closed_alerts_reject_further_verdicts() {
    let mut log = AlertLog::in_memory();
    log.create_batch(vec![item("lodahs", "lodash")], now()).unwrap();
    log.transition("alert-000000", AlertStatus::DismissedBenign, None, None, now()).unwrap();
    let err = log
        .transition("alert-000000", AlertStatus::ConfirmedActive, None, None, now())
        .unwrap_err();
    assert!(matches!(err, ServiceError::AlertClosed { .. }), "{err}");
    assert_eq!(err.code(), "alert_closed");
    let err = log.transition("alert-000404", AlertStatus::ConfirmedActive, None, None, now()).unwrap_err();
    assert_eq!(err.code(), "alert_not_found");
}

#[test]
fn verdicts_must_close_and_allow_lists_need_dismissal() {
    let mut log = AlertLog::in_memory();
    log.create_batch(vec![item("lodahs", "lodash")], now()).unwrap();
    let addition = AllowListAddition {
        kind: AllowListKind::Organization,
        value: "x".into(),
    };
    assert!(matches!(
        log.transition("alert-000000", AlertStatus::Open, None, None, now()),
        Err(ServiceError::InvalidRequest(_))
    ));
    assert!(matches!(
        log.transition("alert-000000", AlertStatus::ConfirmedActive, None, Some(addition), now()),
        Err(ServiceError::InvalidRequest(_))
    ));
    assert_eq!(log.get("alert-000000").unwrap().status, AlertStatus::Open);
}

#[test]
fn torn_final_line_is_skipped_but_earlier_damage_is_not() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("alerts.jsonl");
    let mut log = AlertLog::open(&path).unwrap();
    log.create_batch(vec![item("lodahs", "lodash")], now()).unwrap();
    drop(log);
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(b"{\"event\":\"transition\",\"id\":\"alert-0").unwrap();
    drop(f);
    let log = AlertLog::open(&path).unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(log.get("alert-000000").unwrap().status, AlertStatus::Open);
    drop(log);

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("not json\n{text}")).unwrap();
    assert!(matches!(AlertLog::open(&path), Err(ServiceError::CorruptLog { line: 1, .. })));
}

#[test]
fn pending_allow_list_addition_is_applied_on_open() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = Config::default();
    config.data.root = dir.path().to_path_buf();

    // the verdict reached the log but the process stopped before the store
    let mut log = AlertLog::open(config.data.alerts_path()).unwrap();
    log.create_batch(vec![item("@reqeusts/client", "@requests/client")], now()).unwrap();
    let addition = AllowListAddition {
        kind: AllowListKind::Organization,
        value: "reqeusts".into(),
    };
    log.transition("alert-000000", AlertStatus::DismissedBenign, None, Some(addition), now())
        .unwrap();
    assert_eq!(log.pending_allowlist().len(), 1);
    drop(log);

    let engine = Engine::open(config.clone()).unwrap();
    assert!(engine.store.allow_lists().has_organization("reqeusts"));
    assert!(engine.alerts.pending_allowlist().is_empty());
    drop(engine);
    let engine = Engine::open(config).unwrap();
    assert!(engine.alerts.pending_allowlist().is_empty());
    assert!(engine.store.allow_lists().has_organization("reqeusts"));
}

#[test]
fn list_orders_by_risk_then_id() {
    let mut log = AlertLog::in_memory();
    log.create_batch(
        vec![item("lodahs", "lodash"), item("expres", "express"), item("reaact", "react")],
        now(),
    )
    .unwrap();
    let (all, total) = log.list(&AlertFilter::default(), 10, 0);
    assert_eq!(total, 3);
    for w in all.windows(2) {
        assert!(w[0].risk_score() > w[1].risk_score() || (w[0].risk_score() == w[1].risk_score() && w[0].id < w[1].id));
    }
    let stats = log.stats();
    assert_eq!(stats.by_status["open"], 3);
    assert_eq!(stats.by_status["dismissed_benign"], 0);
}

#[derive(Debug, Clone)]
enum Op {
    Create(usize),
    Close(usize, u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![(0usize..6).prop_map(Op::Create), (0usize..8, 0u8..3).prop_map(|(i, s)| Op::Close(i, s))]
}

const NAMES: [(&str, &str); 6] = [
    ("lodahs", "lodash"),
    ("expres", "express"),
    ("reaact", "react"),
    ("@reqeusts/client", "@requests/client"),
    ("axois", "axios"),
    ("chalkk", "chalk"),
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_history_replays_identically(ops in proptest::collection::vec(op(), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alerts.jsonl");
        let mut log = AlertLog::open(&path).unwrap();
        let mut memory = AlertLog::in_memory();
        for (step, op) in ops.iter().enumerate() {
            let at = now() + Duration::minutes(step as i64);
            match op {
                Op::Create(i) => {
                    let (s, t) = NAMES[*i];
                    let a = log.create_batch(vec![item(s, t)], at).unwrap();
                    let b = memory.create_batch(vec![item(s, t)], at).unwrap();
                    prop_assert_eq!(a, b);
                }
                Op::Close(i, s) => {
                    let id = format!("alert-{i:06}");
                    let to = [AlertStatus::ConfirmedActive, AlertStatus::ConfirmedStealthy, AlertStatus::DismissedBenign][*s as usize];
                    let a = log.transition(&id, to, None, None, at).map(|a| a.clone());
                    let b = memory.transition(&id, to, None, None, at).map(|a| a.clone());
                    prop_assert_eq!(a.is_ok(), b.is_ok());
                }
            }
        }
        let before = snapshot(&log);
        prop_assert_eq!(&before, &snapshot(&memory));
        for a in &before {
            prop_assert!(a.history.len() <= 1);
            prop_assert_eq!(a.status == AlertStatus::Open, a.history.is_empty());
        }
        drop(log);
        prop_assert_eq!(snapshot(&AlertLog::open(&path).unwrap()), before);
    }
}
