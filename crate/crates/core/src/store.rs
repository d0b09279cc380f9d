//! Package metadata snapshots and analyst-maintained allow-lists.
//!
//! The store is a single append-only JSON-lines file. Opening the store
//! replays the log into in-memory maps; every mutation appends one line.
//! Without a path the store lives purely in memory (tests, evaluation).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::StoreError;
use crate::registry::{PackageRef, RegistryId};

/// READMEs longer than this are truncated on ingestion.
pub const README_CAP_BYTES: usize = 64 * 1024;

/// Snapshots older than this are considered stale.
pub fn stale_after() -> Duration {
    Duration::days(7)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionInfo {
    pub version: String,
    pub published_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageMetadata {
    pub package: PackageRef,
    pub description: Option<String>,
    pub readme: Option<String>,
    #[serde(default)]
    pub readme_truncated: bool,
    pub license: Option<String>,
    pub maintainers: Vec<String>,
    pub repository_url: Option<String>,
    pub versions: Vec<VersionInfo>,
    pub weekly_downloads: Option<u64>,
    pub avg_ranking: Option<f64>,
    pub verified_prefix: bool,
    pub relocation_target: Option<PackageRef>,
    pub created_at: DateTime<Utc>,
    pub last_updated_at: DateTime<Utc>,
}

impl PackageMetadata {
    /// Minimal record with no optional metadata; timestamps set to `at`.
    pub fn bare(package: PackageRef, at: DateTime<Utc>) -> Self {
        PackageMetadata {
            package,
            description: None,
            readme: None,
            readme_truncated: false,
            license: None,
            maintainers: Vec::new(),
            repository_url: None,
            versions: Vec::new(),
            weekly_downloads: None,
            avg_ranking: None,
            verified_prefix: false,
            relocation_target: None,
            created_at: at,
            last_updated_at: at,
        }
    }

    /// Sort versions, derive `last_updated_at` and cap the README.
    pub fn finalize(&mut self) {
        self.versions.sort_by(|a, b| a.published_at.cmp(&b.published_at));
        if let Some(last) = self.versions.last() {
            self.last_updated_at = last.published_at;
        } else {
            self.last_updated_at = self.created_at;
        }
        if let Some(readme) = &mut self.readme {
            if readme.len() > README_CAP_BYTES {
                let mut cut = README_CAP_BYTES;
                while !readme.is_char_boundary(cut) {
                    cut -= 1;
                }
                readme.truncate(cut);
                self.readme_truncated = true;
            }
        }
    }
}

/// One line of a metadata dump.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub registry: Option<String>,
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub readme: Option<String>,
    #[serde(default)]
    pub license: Option<String>,
    #[serde(default)]
    pub maintainers: Vec<String>,
    #[serde(default)]
    pub repository_url: Option<String>,
    #[serde(default)]
    pub versions: Vec<VersionInfo>,
    #[serde(default)]
    pub weekly_downloads: Option<u64>,
    #[serde(default)]
    pub avg_ranking: Option<f64>,
    #[serde(default)]
    pub verified_prefix: Option<bool>,
    #[serde(default)]
    pub relocation_target: Option<String>,
    #[serde(default)]
    pub created_at: Option<DateTime<Utc>>,
}

impl MetadataRecord {
    pub fn into_metadata(
        self,
        registry: RegistryId,
        now: DateTime<Utc>,
    ) -> Result<PackageMetadata, String> {
        if let Some(r) = &self.registry {
            if r != registry.as_str() {
                return Err(format!("record for {r} in {registry} snapshot"));
            }
        }
        let verified = self.verified_prefix.unwrap_or(false);
        let package = if registry == RegistryId::Nuget && verified {
            match self.name.split_once('.') {
                Some((prefix, _)) => PackageRef::nuget_with_prefix(&self.name, prefix),
                None => PackageRef::parse(registry, &self.name),
            }
        } else {
            PackageRef::parse(registry, &self.name)
        }
        .map_err(|e| e.to_string())?;
        let relocation_target = self
            .relocation_target
            .as_deref()
            .map(|t| PackageRef::parse(registry, t))
            .transpose()
            .map_err(|e| e.to_string())?;
        if let Some(r) = self.avg_ranking {
            if !(r.is_finite() && r >= 0.0) {
                return Err(format!("invalid avg_ranking {r}"));
            }
        }
        let created_at = self
            .created_at
            .or_else(|| self.versions.iter().map(|v| v.published_at).min())
            .unwrap_or(now);
        let mut meta = PackageMetadata {
            package,
            description: self.description,
            readme: self.readme,
            readme_truncated: false,
            license: self.license,
            maintainers: self.maintainers,
            repository_url: self.repository_url,
            versions: self.versions,
            weekly_downloads: self.weekly_downloads,
            avg_ranking: self.avg_ranking,
            verified_prefix: registry == RegistryId::Nuget && verified,
            relocation_target,
            created_at,
            last_updated_at: created_at,
        };
        meta.finalize();
        Ok(meta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotInfo {
    pub registry: RegistryId,
    pub ingested_at: DateTime<Utc>,
    pub package_count: usize,
    #[serde(default)]
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Staleness {
    pub age: Duration,
    pub stale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllowListKind {
    Organization,
    MirrorDomain,
    CustomerPackage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllowListAction {
    Add,
    Remove,
}

/// Allow-lists consulted by the benignity rules. Entries are stored
/// lowercased; customer packages as `registry:name`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllowLists {
    pub organizations: BTreeSet<String>,
    pub mirror_domains: BTreeSet<String>,
    pub customer_packages: BTreeSet<String>,
}

impl AllowLists {
    pub fn has_organization(&self, namespace: &str) -> bool {
        self.organizations.contains(&namespace.to_lowercase())
    }

    pub fn has_mirror_domain(&self, domain: &str) -> bool {
        self.mirror_domains.contains(&domain.to_lowercase())
    }

    pub fn has_customer_package(&self, package: &PackageRef) -> bool {
        self.customer_packages
            .contains(&customer_key(package.registry, &package.raw))
    }

    fn set_mut(&mut self, kind: AllowListKind) -> &mut BTreeSet<String> {
        match kind {
            AllowListKind::Organization => &mut self.organizations,
            AllowListKind::MirrorDomain => &mut self.mirror_domains,
            AllowListKind::CustomerPackage => &mut self.customer_packages,
        }
    }

    fn apply(&mut self, kind: AllowListKind, key: String, action: AllowListAction) {
        let set = self.set_mut(kind);
        match action {
            AllowListAction::Add => {
                set.insert(key);
            }
            AllowListAction::Remove => {
                set.remove(&key);
            }
        }
    }
}

fn customer_key(registry: RegistryId, raw: &str) -> String {
    format!("{registry}:{}", raw.to_lowercase())
}

/// Canonical allow-list key for a user-supplied value.
pub fn allowlist_key(kind: AllowListKind, value: &str) -> Result<String, StoreError> {
    let value = value.trim();
    if value.is_empty() {
        return Err(StoreError::InvalidValue(value.to_string()));
    }
    match kind {
        AllowListKind::Organization | AllowListKind::MirrorDomain => Ok(value.to_lowercase()),
        AllowListKind::CustomerPackage => {
            let (registry, name) = value
                .split_once(':')
                .ok_or_else(|| StoreError::InvalidValue(value.to_string()))?;
            let registry: RegistryId = registry
                .parse()
                .map_err(|_| StoreError::InvalidValue(value.to_string()))?;
            PackageRef::parse(registry, name)
                .map_err(|_| StoreError::InvalidValue(value.to_string()))?;
            Ok(customer_key(registry, name))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogEntry {
    Package {
        meta: PackageMetadata,
    },
    Snapshot {
        info: SnapshotInfo,
    },
    Allowlist {
        kind: AllowListKind,
        value: String,
        action: AllowListAction,
    },
    Deny {
        registry: RegistryId,
        name: String,
        denied: bool,
    },
}

type PackageKey = (RegistryId, String);

#[derive(Debug, Default)]
pub struct MetadataStore {
    path: Option<PathBuf>,
    writer: Option<BufWriter<File>>,
    packages: HashMap<PackageKey, PackageMetadata>,
    by_registry: BTreeMap<RegistryId, BTreeSet<String>>,
    snapshots: HashMap<RegistryId, SnapshotInfo>,
    allow: AllowLists,
    denied: BTreeSet<PackageKey>,
}

impl MetadataStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a store file and replay its log.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut store = MetadataStore {
            path: Some(path.clone()),
            ..Default::default()
        };
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LogEntry>(line) {
                    Ok(entry) => store.apply(entry),
                    Err(e) if i + 1 == last => {
                        warn!("ignoring torn final line in {}: {e}", path.display());
                    }
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        store.writer = Some(BufWriter::new(file));
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn apply(&mut self, entry: LogEntry) {
        match entry {
            LogEntry::Package { meta } => {
                let key = (meta.package.registry, meta.package.raw.clone());
                self.by_registry
                    .entry(key.0)
                    .or_default()
                    .insert(key.1.clone());
                self.packages.insert(key, meta);
            }
            LogEntry::Snapshot { info } => {
                self.snapshots.insert(info.registry, info);
            }
            LogEntry::Allowlist {
                kind,
                value,
                action,
            } => self.allow.apply(kind, value, action),
            LogEntry::Deny {
                registry,
                name,
                denied,
            } => {
                let key = (registry, name.to_lowercase());
                if denied {
                    self.denied.insert(key);
                } else {
                    self.denied.remove(&key);
                }
            }
        }
    }

    fn append(&mut self, entries: &[LogEntry], sync: bool) -> Result<(), StoreError> {
        if let Some(w) = &mut self.writer {
            for entry in entries {
                serde_json::to_writer(&mut *w, entry).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            if sync {
                w.get_ref().sync_data()?;
            }
        }
        Ok(())
    }

    pub fn ingest_snapshot(
        &mut self,
        registry: RegistryId,
        source: impl BufRead,
    ) -> Result<SnapshotInfo, StoreError> {
        self.ingest_snapshot_at(registry, source, Utc::now())
    }

    /// Upsert every valid record of a line-delimited dump. Malformed lines
    /// are skipped and counted.
    pub fn ingest_snapshot_at(
        &mut self,
        registry: RegistryId,
        mut source: impl BufRead,
        now: DateTime<Utc>,
    ) -> Result<SnapshotInfo, StoreError> {
        let mut parsed = Vec::new();
        let mut skipped = 0usize;
        let mut buf = Vec::new();
        let mut lineno = 0usize;
        loop {
            buf.clear();
            if source.read_until(b'\n', &mut buf)? == 0 {
                break;
            }
            lineno += 1;
            let Ok(line) = std::str::from_utf8(&buf) else {
                warn!("{registry} snapshot line {lineno}: invalid UTF-8");
                skipped += 1;
                continue;
            };
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str::<MetadataRecord>(line)
                .map_err(|e| e.to_string())
                .and_then(|r| r.into_metadata(registry, now));
            match record {
                Ok(meta) => {
                    check_signals(&meta);
                    parsed.push(meta);
                }
                Err(e) => {
                    warn!("{registry} snapshot line {lineno}: {e}");
                    skipped += 1;
                }
            }
        }
        if parsed.is_empty() {
            return Err(StoreError::EmptySnapshot(registry));
        }
        let ingested_at = match self.snapshots.get(&registry) {
            Some(prev) if prev.ingested_at > now => prev.ingested_at,
            _ => now,
        };
        let info = SnapshotInfo {
            registry,
            ingested_at,
            package_count: parsed.len(),
            skipped,
        };
        let mut entries: Vec<LogEntry> = parsed
            .into_iter()
            .filter(|m| {
                self.packages.get(&(registry, m.package.raw.clone())) != Some(m)
            })
            .map(|meta| LogEntry::Package { meta })
            .collect();
        entries.push(LogEntry::Snapshot { info });
        self.append(&entries, true)?;
        for entry in entries {
            self.apply(entry);
        }
        Ok(info)
    }

    /// Insert or replace a single record directly.
    pub fn upsert(&mut self, mut meta: PackageMetadata) -> Result<(), StoreError> {
        meta.finalize();
        let entry = LogEntry::Package { meta };
        self.append(std::slice::from_ref(&entry), false)?;
        self.apply(entry);
        Ok(())
    }

    pub fn get_metadata(&self, package: &PackageRef) -> Option<&PackageMetadata> {
        self.packages.get(&(package.registry, package.raw.clone()))
    }

    pub fn get_by_name(&self, registry: RegistryId, raw: &str) -> Option<&PackageMetadata> {
        self.packages.get(&(registry, raw.to_string()))
    }

    /// All packages of a registry, ordered by name.
    pub fn packages_in(&self, registry: RegistryId) -> impl Iterator<Item = &PackageMetadata> {
        self.by_registry
            .get(&registry)
            .into_iter()
            .flatten()
            .filter_map(move |raw| self.packages.get(&(registry, raw.clone())))
    }

    pub fn package_count(&self, registry: RegistryId) -> usize {
        self.by_registry.get(&registry).map_or(0, BTreeSet::len)
    }

    pub fn len(&self) -> usize {
        self.packages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packages.is_empty()
    }

    pub fn registries(&self) -> impl Iterator<Item = RegistryId> + '_ {
        self.by_registry.keys().copied()
    }

    pub fn snapshot(&self, registry: RegistryId) -> Option<&SnapshotInfo> {
        self.snapshots.get(&registry)
    }

    pub fn staleness(&self, registry: RegistryId, now: DateTime<Utc>) -> Result<Staleness, StoreError> {
        let info = self
            .snapshots
            .get(&registry)
            .ok_or(StoreError::NoSnapshot(registry))?;
        let age = now - info.ingested_at;
        Ok(Staleness {
            age,
            stale: age > stale_after(),
        })
    }

    pub fn allow_lists(&self) -> &AllowLists {
        &self.allow
    }

    pub fn update_allowlist(
        &mut self,
        kind: AllowListKind,
        value: &str,
        action: AllowListAction,
    ) -> Result<AllowLists, StoreError> {
        let key = allowlist_key(kind, value)?;
        let entry = LogEntry::Allowlist {
            kind,
            value: key,
            action,
        };
        self.append(std::slice::from_ref(&entry), true)?;
        self.apply(entry);
        Ok(self.allow.clone())
    }

    /// Mark a package as analyst-flagged; flagged packages are never trusted.
    pub fn set_denied(&mut self, package: &PackageRef, denied: bool) -> Result<(), StoreError> {
        let entry = LogEntry::Deny {
            registry: package.registry,
            name: package.raw.clone(),
            denied,
        };
        self.append(std::slice::from_ref(&entry), true)?;
        self.apply(entry);
        Ok(())
    }

    pub fn is_denied(&self, package: &PackageRef) -> bool {
        self.denied
            .contains(&(package.registry, package.raw.to_lowercase()))
    }
}

fn check_signals(meta: &PackageMetadata) {
    let registry = meta.package.registry;
    if registry.uses_downloads() && meta.weekly_downloads.is_none() {
        warn!("{}: weekly_downloads missing", meta.package);
    }
    if !registry.uses_downloads() && meta.avg_ranking.is_none() {
        warn!("{}: avg_ranking missing", meta.package);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn t(day: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 3, day, 12, 0, 0).unwrap()
    }

    const THREE: &str = r#"{"registry":"pypi","name":"requests","weekly_downloads":9000000,"maintainers":["a@x.org"],"versions":[{"version":"2.0","published_at":"2024-01-02T00:00:00Z"},{"version":"1.0","published_at":"2023-01-02T00:00:00Z"}]}
{"registry":"pypi","name":"numpy","weekly_downloads":5000000,"unknown_key":1}
{"registry":"pypi","name":"reqeusts","weekly_downloads":3}
"#;

    #[test]
    fn ingest_counts_and_is_idempotent() {
        let mut store = MetadataStore::in_memory();
        let info = store.ingest_snapshot_at(RegistryId::Pypi, THREE.as_bytes(), t(1)).unwrap();
        assert_eq!(info.package_count, 3);
        assert_eq!(info.skipped, 0);
        store.ingest_snapshot_at(RegistryId::Pypi, THREE.as_bytes(), t(2)).unwrap();
        assert_eq!(store.package_count(RegistryId::Pypi), 3);
    }

    #[test]
    fn malformed_lines_are_skipped() {
        let input = "{\"name\":\"ok-one\"}\nnot json\n{\"name\":\"ok-two\"}\n";
        let mut store = MetadataStore::in_memory();
        let info = store.ingest_snapshot_at(RegistryId::Pypi, input.as_bytes(), t(1)).unwrap();
        assert_eq!((info.package_count, info.skipped), (2, 1));
        let bad: &[u8] = b"{\"name\":\"a b\"}\n{\"registry\":\"npm\",\"name\":\"x\"}\n\xff\n";
        let err = store.ingest_snapshot_at(RegistryId::Pypi, bad, t(1));
        assert!(matches!(err, Err(StoreError::EmptySnapshot(RegistryId::Pypi))));
    }

    #[test]
    fn versions_sorted_and_lookup() {
        let mut store = MetadataStore::in_memory();
        store.ingest_snapshot_at(RegistryId::Pypi, THREE.as_bytes(), t(1)).unwrap();
        let r = PackageRef::parse(RegistryId::Pypi, "requests").unwrap();
        let meta = store.get_metadata(&r).unwrap();
        assert_eq!(meta.versions[0].version, "1.0");
        assert_eq!(meta.last_updated_at, meta.versions[1].published_at);
        assert_eq!(meta.created_at, meta.versions[0].published_at);
        let missing = PackageRef::parse(RegistryId::Pypi, "never-seen").unwrap();
        assert!(store.get_metadata(&missing).is_none());
    }

    #[test]
    fn newest_snapshot_wins() {
        let mut store = MetadataStore::in_memory();
        store
            .ingest_snapshot_at(RegistryId::Npm, r#"{"name":"left-pad","versions":[{"version":"1.0.0","published_at":"2020-01-01T00:00:00Z"}]}"#.as_bytes(), t(1))
            .unwrap();
        store
            .ingest_snapshot_at(RegistryId::Npm, r#"{"name":"left-pad","versions":[{"version":"1.0.0","published_at":"2020-01-01T00:00:00Z"},{"version":"1.1.0","published_at":"2021-01-01T00:00:00Z"}]}"#.as_bytes(), t(8))
            .unwrap();
        let meta = store.get_by_name(RegistryId::Npm, "left-pad").unwrap();
        assert_eq!(meta.versions.len(), 2);
    }

    #[test]
    fn staleness_tracks_weekly_cadence() {
        let mut store = MetadataStore::in_memory();
        assert!(matches!(
            store.staleness(RegistryId::Npm, t(1)),
            Err(StoreError::NoSnapshot(RegistryId::Npm))
        ));
        store.ingest_snapshot_at(RegistryId::Npm, "{\"name\":\"a\"}".as_bytes(), t(1)).unwrap();
        let s = store.staleness(RegistryId::Npm, t(3)).unwrap();
        assert_eq!((s.age, s.stale), (Duration::days(2), false));
        let s = store.staleness(RegistryId::Npm, t(9)).unwrap();
        assert_eq!((s.age, s.stale), (Duration::days(8), true));
        assert_eq!(store.staleness(RegistryId::Npm, t(1)).unwrap().age, Duration::zero());
        // an ingestion with an older clock never moves ingested_at backwards
        store.ingest_snapshot_at(RegistryId::Npm, "{\"name\":\"b\"}".as_bytes(), t(1)).unwrap();
        let later = store.ingest_snapshot_at(RegistryId::Npm, "{\"name\":\"b\"}".as_bytes(), t(5)).unwrap();
        let earlier = store.ingest_snapshot_at(RegistryId::Npm, "{\"name\":\"b\"}".as_bytes(), t(4)).unwrap();
        assert!(earlier.ingested_at >= later.ingested_at);
    }

    #[test]
    fn readme_capped() {
        let big = "é".repeat(README_CAP_BYTES);
        let rec = MetadataRecord {
            name: "big".into(),
            readme: Some(big),
            ..Default::default()
        };
        let meta = rec.into_metadata(RegistryId::Npm, t(1)).unwrap();
        assert!(meta.readme_truncated);
        assert!(meta.readme.unwrap().len() <= README_CAP_BYTES);
    }

    #[test]
    fn nuget_verified_prefix_splits_name() {
        let rec = MetadataRecord {
            name: "Newtonsoft.Json".into(),
            verified_prefix: Some(true),
            ..Default::default()
        };
        let meta = rec.into_metadata(RegistryId::Nuget, t(1)).unwrap();
        assert!(meta.verified_prefix);
        assert_eq!(meta.package.namespace.as_deref(), Some("Newtonsoft"));
    }

    #[test]
    fn allowlists_add_remove_and_persist() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.log");
        {
            let mut store = MetadataStore::open(&path).unwrap();
            let before = store.allow_lists().clone();
            store
                .update_allowlist(AllowListKind::Organization, "Acme", AllowListAction::Add)
                .unwrap();
            let after = store
                .update_allowlist(AllowListKind::Organization, "acme", AllowListAction::Remove)
                .unwrap();
            assert_eq!(before, after);
            store
                .update_allowlist(AllowListKind::Organization, "oxc-parser", AllowListAction::Add)
                .unwrap();
            store
                .update_allowlist(AllowListKind::MirrorDomain, "gopkg.in", AllowListAction::Add)
                .unwrap();
            store
                .update_allowlist(AllowListKind::CustomerPackage, "npm:@acme/core", AllowListAction::Add)
                .unwrap();
            assert!(store
                .update_allowlist(AllowListKind::CustomerPackage, "bogus", AllowListAction::Add)
                .is_err());
            assert!(store
                .update_allowlist(AllowListKind::Organization, " ", AllowListAction::Add)
                .is_err());
            store.ingest_snapshot_at(RegistryId::Pypi, THREE.as_bytes(), t(1)).unwrap();
        }
        let store = MetadataStore::open(&path).unwrap();
        let lists = store.allow_lists();
        assert!(lists.has_organization("OXC-PARSER"));
        assert!(lists.has_mirror_domain("gopkg.in"));
        let acme = PackageRef::parse(RegistryId::Npm, "@acme/core").unwrap();
        assert!(lists.has_customer_package(&acme));
        assert_eq!(store.package_count(RegistryId::Pypi), 3);
        assert!(store.snapshot(RegistryId::Pypi).is_some());
    }

    #[test]
    fn deny_set_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.log");
        let r = PackageRef::parse(RegistryId::Npm, "evil").unwrap();
        {
            let mut store = MetadataStore::open(&path).unwrap();
            store.set_denied(&r, true).unwrap();
        }
        assert!(MetadataStore::open(&path).unwrap().is_denied(&r));
    }

    fn arb_meta() -> impl Strategy<Value = PackageMetadata> {
        (
            "[a-z][a-z0-9-]{0,10}",
            proptest::option::of("[ -~]{0,40}"),
            proptest::option::of(0u64..10_000_000),
            proptest::collection::vec("[a-z]{1,8}@[a-z]{1,5}\\.org", 0..3),
            proptest::collection::vec(0i64..2_000_000_000, 0..4),
        )
            .prop_map(|(name, description, downloads, maintainers, stamps)| {
                let package = PackageRef::parse(RegistryId::Npm, &name).unwrap();
                let mut meta = PackageMetadata::bare(package, Utc.timestamp_opt(1_000, 0).unwrap());
                meta.description = description;
                meta.weekly_downloads = downloads;
                meta.maintainers = maintainers;
                meta.versions = stamps
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| VersionInfo {
                        version: format!("0.{i}.0"),
                        published_at: Utc.timestamp_opt(s, 0).unwrap(),
                    })
                    .collect();
                meta.finalize();
                meta
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn records_read_back_identically(metas in proptest::collection::vec(arb_meta(), 1..5)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("store.log");
            {
                let mut store = MetadataStore::open(&path).unwrap();
                for m in &metas {
                    store.upsert(m.clone()).unwrap();
                }
            }
            let store = MetadataStore::open(&path).unwrap();
            let mut expected: HashMap<String, PackageMetadata> = HashMap::new();
            for m in metas {
                expected.insert(m.package.raw.clone(), m);
            }
            for (raw, m) in expected {
                prop_assert_eq!(store.get_by_name(RegistryId::Npm, &raw), Some(&m));
            }
        }
    }
}
