//! Alert store: an append-only JSON-lines event log with an in-memory
//! projection. Replaying the log rebuilds the projection exactly.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use lookalike_core::benignity::BenignityReport;
use lookalike_core::registry::{AttackCategory, RegistryId};
use lookalike_core::search::AlertDraft;
use lookalike_core::store::AllowListKind;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertStatus {
    Open,
    ConfirmedActive,
    ConfirmedStealthy,
    DismissedBenign,
}

impl AlertStatus {
    pub const ALL: [AlertStatus; 4] = [
        AlertStatus::Open,
        AlertStatus::ConfirmedActive,
        AlertStatus::ConfirmedStealthy,
        AlertStatus::DismissedBenign,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlertStatus::Open => "open",
            AlertStatus::ConfirmedActive => "confirmed_active",
            AlertStatus::ConfirmedStealthy => "confirmed_stealthy",
            AlertStatus::DismissedBenign => "dismissed_benign",
        }
    }
}

impl fmt::Display for AlertStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One alert per (registry, suspect, target, snapshot).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlertKey {
    pub registry: RegistryId,
    pub suspect: String,
    pub target: String,
    pub snapshot: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllowListAddition {
    pub kind: AllowListKind,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub at: DateTime<Utc>,
    pub from: AlertStatus,
    pub to: AlertStatus,
    pub note: Option<String>,
    pub allowlist: Option<AllowListAddition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub key: AlertKey,
    pub draft: AlertDraft,
    pub report: BenignityReport,
    pub status: AlertStatus,
    pub analyst_note: Option<String>,
    pub history: Vec<VerdictRecord>,
}

impl Alert {
    pub fn category(&self) -> AttackCategory {
        self.report.pair.category
    }

    pub fn risk_score(&self) -> f64 {
        self.report.risk_score
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created { alert: Box<Alert> },
    Transition { id: String, record: VerdictRecord },
    /// The allow-list addition of a transition reached the metadata store.
    AllowlistApplied { id: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlertFilter {
    pub status: Option<AlertStatus>,
    pub registry: Option<RegistryId>,
    pub category: Option<AttackCategory>,
}

impl AlertFilter {
    pub fn matches(&self, a: &Alert) -> bool {
        self.status.is_none_or(|s| a.status == s)
            && self.registry.is_none_or(|r| a.key.registry == r)
            && self.category.is_none_or(|c| a.category() == c)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlertStats {
    pub total: usize,
    pub by_status: BTreeMap<String, usize>,
    pub by_category: BTreeMap<String, usize>,
    pub by_registry: BTreeMap<String, usize>,
}

#[derive(Debug, Default)]
pub struct AlertLog {
    path: Option<PathBuf>,
    writer: Option<BufWriter<File>>,
    alerts: BTreeMap<String, Alert>,
    by_key: HashMap<AlertKey, String>,
    pending_allowlist: BTreeMap<String, AllowListAddition>,
    next: u64,
}

impl AlertLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a log and replay it. A torn final line is skipped.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref().to_path_buf();
        let mut log = AlertLog {
            path: Some(path.clone()),
            ..Default::default()
        };
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(&path)?).lines().collect::<Result<_, _>>()?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Event>(line) {
                    Ok(event) => log.apply(event).map_err(|message| ServiceError::CorruptLog { line: i + 1, message })?,
                    Err(e) if i + 1 == last => log::warn!("ignoring torn final line in {}: {e}", path.display()),
                    Err(e) => {
                        return Err(ServiceError::CorruptLog {
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        log.writer = Some(BufWriter::new(file));
        Ok(log)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn apply(&mut self, event: Event) -> Result<(), String> {
        match event {
            Event::Created { alert } => {
                if self.alerts.contains_key(&alert.id) {
                    return Err(format!("duplicate alert id {}", alert.id));
                }
                if let Some(n) = alert.id.strip_prefix("alert-").and_then(|n| n.parse::<u64>().ok()) {
                    self.next = self.next.max(n + 1);
                }
                self.by_key.insert(alert.key.clone(), alert.id.clone());
                self.alerts.insert(alert.id.clone(), *alert);
            }
            Event::Transition { id, record } => {
                let alert = self.alerts.get_mut(&id).ok_or_else(|| format!("transition for unknown alert {id}"))?;
                if alert.status != AlertStatus::Open || record.from != AlertStatus::Open {
                    return Err(format!("transition of closed alert {id}"));
                }
                alert.status = record.to;
                alert.analyst_note.clone_from(&record.note);
                if let Some(a) = &record.allowlist {
                    self.pending_allowlist.insert(id.clone(), a.clone());
                }
                alert.history.push(record);
            }
            Event::AllowlistApplied { id } => {
                self.pending_allowlist.remove(&id);
            }
        }
        Ok(())
    }

    fn append(&mut self, events: &[Event], sync: bool) -> Result<(), ServiceError> {
        if let Some(w) = &mut self.writer {
            for event in events {
                serde_json::to_writer(&mut *w, event).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            if sync {
                w.get_ref().sync_data()?;
            }
        }
        Ok(())
    }

    pub fn contains_key(&self, key: &AlertKey) -> bool {
        self.by_key.contains_key(key)
    }

    /// Create open alerts for keys not seen before. Returns the new ids.
    pub fn create_batch(
        &mut self,
        items: Vec<(AlertKey, AlertDraft, BenignityReport)>,
        now: DateTime<Utc>,
    ) -> Result<Vec<String>, ServiceError> {
        let mut events = Vec::new();
        let mut ids = Vec::new();
        let mut next = self.next;
        let mut seen = std::collections::HashSet::new();
        for (key, draft, report) in items {
            if self.by_key.contains_key(&key) || !seen.insert(key.clone()) {
                continue;
            }
            let id = format!("alert-{next:06}");
            next += 1;
            ids.push(id.clone());
            events.push(Event::Created {
                alert: Box::new(Alert {
                    id,
                    created_at: now,
                    key,
                    draft,
                    report,
                    status: AlertStatus::Open,
                    analyst_note: None,
                    history: Vec::new(),
                }),
            });
        }
        self.append(&events, true)?;
        for e in events {
            self.apply(e).map_err(ServiceError::InvalidRequest)?;
        }
        Ok(ids)
    }

    /// Close an open alert. The event is durable before it is applied.
    pub fn transition(
        &mut self,
        id: &str,
        to: AlertStatus,
        note: Option<String>,
        allowlist: Option<AllowListAddition>,
        now: DateTime<Utc>,
    ) -> Result<&Alert, ServiceError> {
        let alert = self.alerts.get(id).ok_or_else(|| ServiceError::AlertNotFound(id.to_string()))?;
        if alert.status != AlertStatus::Open {
            return Err(ServiceError::AlertClosed {
                id: id.to_string(),
                status: alert.status.to_string(),
            });
        }
        if to == AlertStatus::Open {
            return Err(ServiceError::InvalidRequest("verdict status must close the alert".into()));
        }
        if allowlist.is_some() && to != AlertStatus::DismissedBenign {
            return Err(ServiceError::InvalidRequest(
                "allow-list additions are only accepted with dismissed_benign".into(),
            ));
        }
        let event = Event::Transition {
            id: id.to_string(),
            record: VerdictRecord {
                at: now,
                from: AlertStatus::Open,
                to,
                note,
                allowlist,
            },
        };
        self.append(std::slice::from_ref(&event), true)?;
        self.apply(event).map_err(ServiceError::InvalidRequest)?;
        Ok(&self.alerts[id])
    }

    pub fn get(&self, id: &str) -> Option<&Alert> {
        self.alerts.get(id)
    }

    pub fn len(&self) -> usize {
        self.alerts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alerts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Alert> {
        self.alerts.values()
    }

    /// Matching alerts by descending risk score, then id, with the total
    /// match count before pagination.
    pub fn list(&self, filter: &AlertFilter, limit: usize, offset: usize) -> (Vec<&Alert>, usize) {
        let mut hits: Vec<&Alert> = self.alerts.values().filter(|a| filter.matches(a)).collect();
        hits.sort_by(|a, b| b.risk_score().total_cmp(&a.risk_score()).then_with(|| a.id.cmp(&b.id)));
        let total = hits.len();
        (hits.into_iter().skip(offset).take(limit).collect(), total)
    }

    pub fn stats(&self) -> AlertStats {
        let mut s = AlertStats {
            total: self.alerts.len(),
            ..Default::default()
        };
        for status in AlertStatus::ALL {
            s.by_status.insert(status.to_string(), 0);
        }
        for a in self.alerts.values() {
            *s.by_status.entry(a.status.to_string()).or_default() += 1;
            *s.by_category.entry(a.category().as_str().to_string()).or_default() += 1;
            *s.by_registry.entry(a.key.registry.to_string()).or_default() += 1;
        }
        s
    }

    /// Allow-list additions logged with a verdict but not yet confirmed as
    /// applied to the metadata store, keyed by alert id.
    pub fn pending_allowlist(&self) -> Vec<(String, AllowListAddition)> {
        self.pending_allowlist.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn mark_allowlist_applied(&mut self, id: &str) -> Result<(), ServiceError> {
        if !self.pending_allowlist.contains_key(id) {
            return Ok(());
        }
        let event = Event::AllowlistApplied { id: id.to_string() };
        self.append(std::slice::from_ref(&event), true)?;
        self.apply(event).map_err(ServiceError::InvalidRequest)
    }
}
