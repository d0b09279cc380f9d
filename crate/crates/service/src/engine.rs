//! Pipeline orchestration: store, model, per-registry indexes, benignity
//! filter and alert log behind one handle.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::thread;
use std::time::Instant;

use chrono::{DateTime, Utc};
use lookalike_core::benignity::{BenignityFilter, BenignityReport, ExternalJudge, HeuristicJudge, Verdict};
use lookalike_core::embedder::{EmbeddingModel, TrainReport};
use lookalike_core::registry::{PackageRef, RegistryId, SubstitutionTable};
use lookalike_core::search::{AlertDraft, CandidatePair, RegistryIndex, SearchContext};
use lookalike_core::store::{AllowListAction, AllowListKind, AllowLists, MetadataStore, SnapshotInfo};
use serde::{Deserialize, Serialize};

use crate::alerts::{Alert, AlertKey, AlertLog, AlertStatus, AllowListAddition};
use crate::config::{Config, JudgeKind};
use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub registry: RegistryId,
    pub snapshot: DateTime<Utc>,
    pub scanned: usize,
    pub skipped_allowlisted: usize,
    pub drafts: usize,
    pub pairs_evaluated: usize,
    pub suspected_threats: usize,
    pub alerts_created: usize,
    pub wall_ms: u128,
}

/// Result of scanning one package without persisting anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageScan {
    pub suspect: PackageRef,
    pub draft: Option<AlertDraft>,
    pub reports: Vec<BenignityReport>,
}

pub struct Engine {
    pub config: Config,
    pub store: MetadataStore,
    pub model: Option<EmbeddingModel>,
    pub indexes: BTreeMap<RegistryId, RegistryIndex>,
    pub alerts: AlertLog,
    pub filter: BenignityFilter,
    pub substitutions: SubstitutionTable,
    persistent: bool,
}

fn build_filter(config: &Config) -> Result<BenignityFilter, ServiceError> {
    let weights = config.weights.resolve()?;
    let heuristic = config.judge.heuristic_config()?;
    let mut filter = match config.judge.kind {
        JudgeKind::Heuristic => BenignityFilter::heuristic(weights, heuristic),
        JudgeKind::External => {
            let judge = ExternalJudge::new(config.judge.external_config()?)
                .map_err(|e| ServiceError::Config(e.to_string()))?;
            BenignityFilter::new(weights, Box::new(judge), HeuristicJudge::new(heuristic))
        }
    };
    filter.parallelism = config.judge.parallelism.max(1);
    Ok(filter)
}

impl Engine {
    /// Everything in memory; nothing is written to disk.
    pub fn in_memory(config: Config) -> Result<Engine, ServiceError> {
        config.validate()?;
        Ok(Engine {
            filter: build_filter(&config)?,
            config,
            store: MetadataStore::in_memory(),
            model: None,
            indexes: BTreeMap::new(),
            alerts: AlertLog::in_memory(),
            substitutions: SubstitutionTable::default(),
            persistent: false,
        })
    }

    /// Opens the store and alert log under `config.data`, loads the model
    /// and any saved indexes, and re-applies allow-list additions that a
    /// verdict logged but the store never recorded.
    pub fn open(config: Config) -> Result<Engine, ServiceError> {
        config.validate()?;
        std::fs::create_dir_all(&config.data.root)?;
        let store = MetadataStore::open(config.data.store_path())?;
        let alerts = AlertLog::open(config.data.alerts_path())?;
        let model_path = config.data.model_path();
        let model = if model_path.exists() {
            Some(EmbeddingModel::load(&model_path)?)
        } else {
            None
        };
        let mut indexes = BTreeMap::new();
        if let Some(m) = &model {
            for r in RegistryId::ALL {
                let p = config.data.index_path(r);
                if p.exists() {
                    indexes.insert(r, RegistryIndex::load(&p, m)?);
                }
            }
        }
        let mut engine = Engine {
            filter: build_filter(&config)?,
            config,
            store,
            model,
            indexes,
            alerts,
            substitutions: SubstitutionTable::default(),
            persistent: true,
        };
        engine.reconcile_allowlists()?;
        Ok(engine)
    }

    fn reconcile_allowlists(&mut self) -> Result<(), ServiceError> {
        for (id, a) in self.alerts.pending_allowlist() {
            log::info!("re-applying allow-list addition from {id}");
            self.store.update_allowlist(a.kind, &a.value, AllowListAction::Add)?;
            self.alerts.mark_allowlist_applied(&id)?;
        }
        Ok(())
    }

    pub fn ingest(
        &mut self,
        registry: RegistryId,
        source: impl BufRead,
        now: DateTime<Utc>,
    ) -> Result<SnapshotInfo, ServiceError> {
        Ok(self.store.ingest_snapshot_at(registry, source, now)?)
    }

    /// Train on every stored package name, or on `corpus` when given.
    pub fn train(&mut self, corpus: Option<Vec<String>>) -> Result<TrainReport, ServiceError> {
        let (model, report) = match corpus {
            Some(names) => EmbeddingModel::train(&names, &self.config.embedding)?,
            None => {
                let packages: Vec<PackageRef> = self
                    .store
                    .registries()
                    .flat_map(|r| self.store.packages_in(r).map(|m| m.package.clone()))
                    .collect();
                EmbeddingModel::train_packages(&packages, &self.config.embedding)?
            }
        };
        if self.persistent {
            model.save(self.config.data.model_path())?;
        }
        self.model = Some(model);
        self.indexes.clear();
        Ok(report)
    }

    pub fn build_index(&mut self, registry: RegistryId) -> Result<usize, ServiceError> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| ServiceError::MissingInfrastructure(vec!["embedding model".into()]))?;
        let index = RegistryIndex::build(&self.store, registry, model, &self.config.trust, self.config.index)?;
        if self.persistent {
            let path = self.config.data.index_path(registry);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            index.save(&path)?;
        }
        let n = index.trusted_count();
        self.indexes.insert(registry, index);
        Ok(n)
    }

    /// Names every missing piece for `registry`.
    pub fn check_infrastructure(&self, registry: RegistryId) -> Result<DateTime<Utc>, ServiceError> {
        let mut missing = Vec::new();
        let snapshot = self.store.snapshot(registry).map(|s| s.ingested_at);
        if snapshot.is_none() {
            missing.push(format!("store snapshot for {registry}"));
        }
        if self.model.is_none() {
            missing.push("embedding model".into());
        }
        if !self.indexes.contains_key(&registry) {
            missing.push(format!("index for {registry}"));
        }
        match snapshot {
            Some(s) if missing.is_empty() => Ok(s),
            _ => Err(ServiceError::MissingInfrastructure(missing)),
        }
    }

    fn context(&self, registry: RegistryId) -> SearchContext<'_> {
        SearchContext {
            store: &self.store,
            model: self.model.as_ref().expect("checked by check_infrastructure"),
            index: &self.indexes[&registry],
            thresholds: &self.config.thresholds,
            policy: &self.config.trust,
            substitutions: &self.substitutions,
        }
    }

    /// Search and benignity for one package. Nothing is persisted. Rule
    /// recency is judged against the snapshot time.
    pub fn scan_package(&self, registry: RegistryId, raw: &str) -> Result<PackageScan, ServiceError> {
        let snapshot = self.check_infrastructure(registry)?;
        let ctx = self.context(registry);
        let suspect = match self.store.get_by_name(registry, raw) {
            Some(m) => m.package.clone(),
            None => PackageRef::parse(registry, raw)?,
        };
        let draft = ctx.scan_package(&suspect)?;
        let reports = match &draft {
            Some(d) => self.filter.evaluate_pairs(&d.pairs, &self.store, snapshot),
            None => Vec::new(),
        };
        Ok(PackageScan { suspect, draft, reports })
    }

    /// Scans every package of `registry` that is not a customer allow-listed
    /// package. Pairs already alerted for this snapshot are not re-judged;
    /// new suspected threats become open alerts.
    pub fn run_full_scan(&mut self, registry: RegistryId) -> Result<ScanSummary, ServiceError> {
        let started = Instant::now();
        let snapshot = self.check_infrastructure(registry)?;
        let allow = self.store.allow_lists();
        let (suspects, skipped): (Vec<PackageRef>, Vec<PackageRef>) = self
            .store
            .packages_in(registry)
            .map(|m| m.package.clone())
            .partition(|p| !allow.has_customer_package(p));

        let drafts = self.scan_all(registry, &suspects)?;
        let mut pending: Vec<(AlertKey, usize, CandidatePair)> = Vec::new();
        for (i, d) in drafts.iter().enumerate() {
            for pair in &d.pairs {
                let key = AlertKey {
                    registry,
                    suspect: pair.suspect.raw.to_lowercase(),
                    target: pair.target.raw.to_lowercase(),
                    snapshot,
                };
                if !self.alerts.contains_key(&key) {
                    pending.push((key, i, pair.clone()));
                }
            }
        }
        let pairs: Vec<CandidatePair> = pending.iter().map(|(_, _, p)| p.clone()).collect();
        let reports = self.filter.evaluate_pairs(&pairs, &self.store, snapshot);
        let items: Vec<_> = pending
            .into_iter()
            .zip(reports)
            .filter(|(_, r)| r.verdict == Verdict::SuspectedThreat)
            .map(|((key, i, _), report)| (key, drafts[i].clone(), report))
            .collect();
        let suspected_threats = items.len();
        let created = self.alerts.create_batch(items, Utc::now())?;
        Ok(ScanSummary {
            registry,
            snapshot,
            scanned: suspects.len(),
            skipped_allowlisted: skipped.len(),
            drafts: drafts.len(),
            pairs_evaluated: pairs.len(),
            suspected_threats,
            alerts_created: created.len(),
            wall_ms: started.elapsed().as_millis(),
        })
    }

    fn scan_all(&self, registry: RegistryId, suspects: &[PackageRef]) -> Result<Vec<AlertDraft>, ServiceError> {
        if suspects.is_empty() {
            return Ok(Vec::new());
        }
        let workers = self.config.scan.workers.max(1).min(suspects.len());
        let chunk = suspects.len().div_ceil(workers);
        let ctx = self.context(registry);
        let parts: Vec<Result<Vec<AlertDraft>, ServiceError>> = thread::scope(|s| {
            let handles: Vec<_> = suspects
                .chunks(chunk)
                .map(|c| {
                    let ctx = &ctx;
                    s.spawn(move || {
                        let mut out = Vec::new();
                        for p in c {
                            if let Some(d) = ctx.scan_package(p)? {
                                out.push(d);
                            }
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("scan worker panicked")).collect()
        });
        let mut drafts = Vec::new();
        for p in parts {
            drafts.extend(p?);
        }
        Ok(drafts)
    }

    /// Closes an alert. An allow-list addition is logged with the verdict
    /// first, then applied to the store, then marked applied.
    pub fn apply_verdict(
        &mut self,
        id: &str,
        status: AlertStatus,
        note: Option<String>,
        allowlist: Option<AllowListAddition>,
        now: DateTime<Utc>,
    ) -> Result<Alert, ServiceError> {
        if let Some(a) = &allowlist {
            lookalike_core::store::allowlist_key(a.kind, &a.value)?;
        }
        let alert = self.alerts.transition(id, status, note, allowlist.clone(), now)?.clone();
        if let Some(a) = allowlist {
            self.store.update_allowlist(a.kind, &a.value, AllowListAction::Add)?;
            self.alerts.mark_allowlist_applied(id)?;
        }
        Ok(alert)
    }

    pub fn update_allowlist(
        &mut self,
        kind: AllowListKind,
        value: &str,
        action: AllowListAction,
    ) -> Result<AllowLists, ServiceError> {
        Ok(self.store.update_allowlist(kind, value, action)?)
    }
}
