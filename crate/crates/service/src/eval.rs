//! Evaluation harness: confusion-matrix metrics over labeled pairs, a
//! counts-only mode, and the similarity threshold grid search.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use lookalike_core::benignity::Verdict;
use lookalike_core::embedder::{cosine, NamePart};
use lookalike_core::registry::{PackageRef, RegistryId};
use lookalike_core::search::{CandidatePair, Channel};
use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalLabel {
    Active,
    Stealthy,
    Benign,
}

impl EvalLabel {
    pub const ALL: [EvalLabel; 3] = [EvalLabel::Active, EvalLabel::Stealthy, EvalLabel::Benign];

    pub fn is_threat(self) -> bool {
        self != EvalLabel::Benign
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvalLabel::Active => "active",
            EvalLabel::Stealthy => "stealthy",
            EvalLabel::Benign => "benign",
        }
    }
}

impl fmt::Display for EvalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "active" => Ok(EvalLabel::Active),
            "stealthy" => Ok(EvalLabel::Stealthy),
            "benign" => Ok(EvalLabel::Benign),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub suspect: String,
    pub target: String,
    pub registry: RegistryId,
    pub label: EvalLabel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    #[serde(flatten)]
    pub counts: Counts,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub accuracy: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Recall, precision, F1 and accuracy from raw counts; every 0/0 is 0.
pub fn metrics_from_counts(counts: Counts) -> MetricRow {
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let f1 = if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MetricRow {
        counts,
        recall,
        precision,
        f1,
        accuracy: ratio(counts.tp + counts.tn, counts.total()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: BTreeMap<EvalLabel, MetricRow>,
    pub overall: MetricRow,
}

impl MetricsTable {
    /// Per-label rows count TP/FN for threat labels and FP/TN for benign;
    /// the overall row is their sum.
    pub fn from_counts(per_label: &BTreeMap<EvalLabel, Counts>) -> MetricsTable {
        let mut overall = Counts::default();
        let rows = EvalLabel::ALL
            .iter()
            .map(|l| {
                let c = per_label.get(l).copied().unwrap_or_default();
                overall.add(c);
                (*l, metrics_from_counts(c))
            })
            .collect();
        MetricsTable {
            rows,
            overall: metrics_from_counts(overall),
        }
    }
}

/// Tally of one prediction against its label.
pub fn tally(counts: &mut Counts, label: EvalLabel, predicted_threat: bool) {
    match (label.is_threat(), predicted_threat) {
        (true, true) => counts.tp += 1,
        (true, false) => counts.fn_ += 1,
        (false, true) => counts.fp += 1,
        (false, false) => counts.tn += 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub record: EvalRecord,
    pub verdict: Verdict,
    pub risk_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub table: MetricsTable,
    pub outcomes: Vec<RecordOutcome>,
}

/// Runs the benignity stage on each labeled pair; a suspected_threat
/// verdict is a positive prediction. Pairs are judged as given, without
/// re-running candidate search. Missing metadata leaves directives unknown.
pub fn evaluate(engine: &Engine, records: &[EvalRecord]) -> Result<Evaluation, ServiceError> {
    let (pairs, now) = record_pairs(engine, records)?;
    let reports = engine.filter.evaluate_pairs(&pairs, &engine.store, now);
    let mut per_label: BTreeMap<EvalLabel, Counts> = BTreeMap::new();
    let mut outcomes = Vec::with_capacity(records.len());
    for (r, rep) in records.iter().zip(reports) {
        tally(
            per_label.entry(r.label).or_default(),
            r.label,
            rep.verdict == Verdict::SuspectedThreat,
        );
        outcomes.push(RecordOutcome {
            record: r.clone(),
            verdict: rep.verdict,
            risk_score: rep.risk_score,
        });
    }
    Ok(Evaluation {
        table: MetricsTable::from_counts(&per_label),
        outcomes,
    })
}

/// Candidate pairs for labeled records, and the time rules are judged at:
/// the newest snapshot among the records' registries.
pub fn record_pairs(
    engine: &Engine,
    records: &[EvalRecord],
) -> Result<(Vec<CandidatePair>, DateTime<Utc>), ServiceError> {
    if records.is_empty() {
        return Err(ServiceError::EmptyDataset);
    }
    let mut pairs = Vec::with_capacity(records.len());
    for r in records {
        let suspect = resolve(engine, r.registry, &r.suspect)?;
        let target = resolve(engine, r.registry, &r.target)?;
        let cosine_full = match &engine.model {
            Some(m) => cosine(&m.embed(&suspect, NamePart::Full)?, &m.embed(&target, NamePart::Full)?)?,
            None => 0.0,
        };
        pairs.push(CandidatePair::assemble(
            &suspect,
            &target,
            cosine_full,
            Channel::Lexical,
            &engine.substitutions,
        )?);
    }
    let now = records
        .iter()
        .filter_map(|r| engine.store.snapshot(r.registry).map(|s| s.ingested_at))
        .max()
        .unwrap_or_else(Utc::now);
    Ok((pairs, now))
}

fn resolve(engine: &Engine, registry: RegistryId, raw: &str) -> Result<PackageRef, ServiceError> {
    Ok(match engine.store.get_by_name(registry, raw) {
        Some(m) => m.package.clone(),
        None => PackageRef::parse(registry, raw)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedMetrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// A named row of raw counts, optionally with rounded reference metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsRow {
    pub row: String,
    #[serde(flatten)]
    pub counts: Counts,
    #[serde(default)]
    pub published: Option<PublishedMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsResult {
    pub row: String,
    pub metrics: MetricRow,
    pub published: Option<PublishedMetrics>,
    /// Metric names whose recomputed value is more than the tolerance away
    /// from the reference.
    pub mismatches: Vec<String>,
}

/// Rounded reference values carry two decimals.
pub const ROUNDING_TOLERANCE: f64 = 0.005;

pub fn evaluate_counts(rows: &[CountsRow]) -> Result<Vec<CountsResult>, ServiceError> {
    if rows.is_empty() {
        return Err(ServiceError::EmptyDataset);
    }
    Ok(rows
        .iter()
        .map(|r| {
            let metrics = metrics_from_counts(r.counts);
            let mismatches = match &r.published {
                Some(p) => [
                    ("recall", metrics.recall, p.recall),
                    ("precision", metrics.precision, p.precision),
                    ("f1", metrics.f1, p.f1),
                    ("accuracy", metrics.accuracy, p.accuracy),
                ]
                .iter()
                .filter(|(_, got, want)| (got - want).abs() > ROUNDING_TOLERANCE + 1e-12)
                .map(|(name, _, _)| name.to_string())
                .collect(),
                None => Vec::new(),
            };
            CountsResult {
                row: r.row.clone(),
                metrics,
                published: r.published.clone(),
                mismatches,
            }
        })
        .collect())
}

/// A dataset file holds either labeled pairs or count rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Records(Vec<EvalRecord>),
    Counts(Vec<CountsRow>),
}

pub fn read_dataset(source: impl BufRead) -> Result<Dataset, ServiceError> {
    let mut records = Vec::new();
    let mut counts = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: serde_json::Error| ServiceError::InvalidRequest(format!("line {}: {e}", i + 1));
        let value: serde_json::Value = serde_json::from_str(&line).map_err(bad)?;
        if value.get("row").is_some() {
            counts.push(serde_json::from_value(value).map_err(bad)?);
        } else {
            records.push(serde_json::from_value(value).map_err(bad)?);
        }
    }
    match (records.is_empty(), counts.is_empty()) {
        (true, true) => Err(ServiceError::EmptyDataset),
        (false, true) => Ok(Dataset::Records(records)),
        (true, false) => Ok(Dataset::Counts(counts)),
        (false, false) => Err(ServiceError::InvalidRequest(
            "dataset mixes labeled pairs and count rows".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub score: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub best: CurvePoint,
    pub curve: Vec<CurvePoint>,
    /// The curve evaluated at the default semantic cosine threshold.
    pub operating_point: CurvePoint,
}

pub const GRID_STEPS: usize = 100;
pub const OPERATING_THRESHOLD: f64 = 0.93;

fn curve_point(scores: &[LabeledScore], threshold: f64) -> CurvePoint {
    let mut c = Counts::default();
    for s in scores {
        let label = if s.positive { EvalLabel::Active } else { EvalLabel::Benign };
        tally(&mut c, label, s.score >= threshold);
    }
    let m = metrics_from_counts(c);
    CurvePoint {
        threshold,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
    }
}

/// Evaluates thresholds 0.00, 0.01, ..., 1.00 (a score at or above the
/// threshold is a positive). The best point maximizes F1; ties go to the
/// lowest threshold.
pub fn grid_search_threshold(scores: &[LabeledScore]) -> Result<GridSearch, ServiceError> {
    if scores.is_empty() {
        return Err(ServiceError::EmptyDataset);
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(&s.score)) {
        return Err(ServiceError::InvalidRequest(format!("score {} outside [0, 1]", s.score)));
    }
    let curve: Vec<CurvePoint> = (0..=GRID_STEPS)
        .map(|i| curve_point(scores, i as f64 / GRID_STEPS as f64))
        .collect();
    let mut best = curve[0];
    for p in &curve[1..] {
        if p.f1 > best.f1 {
            best = *p;
        }
    }
    Ok(GridSearch {
        best,
        operating_point: curve_point(scores, OPERATING_THRESHOLD),
        curve,
    })
}
