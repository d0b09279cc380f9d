//! Synthetic registries with injected confusion attacks, used for recall
//! measurements and end-to-end fixtures.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lookalike_core::registry::{normalize, tokens, AttackCategory, PackageRef, RegistryId, SubstitutionTable};
use lookalike_core::store::{MetadataRecord, VersionInfo};

pub const BUNDLED_NAMES: &str = include_str!("../data/names-5k.txt");
const SYNONYMS: &str = include_str!("../data/synonyms.txt");
const LOOKALIKE_DOMAINS: &str = include_str!("../data/lookalike_domains.txt");

const GO_HOSTS: [&str; 3] = ["github.com", "gitlab.com", "bitbucket.org"];
const DESCRIPTION_TAILS: [&str; 6] = [
    "library for python and javascript projects",
    "command line tool for developers",
    "helpers for building web services",
    "bindings and utilities for data processing",
    "toolkit for testing and automation",
    "client for the public api",
];

/// The techniques the generator can apply, one per taxonomy row.
pub const TECHNIQUES: [AttackCategory; 8] = [
    AttackCategory::OneStepLevenshtein,
    AttackCategory::SequenceReordering,
    AttackCategory::ScopeConfusion,
    AttackCategory::SemanticSubstitution,
    AttackCategory::AlternateSpelling,
    AttackCategory::ImpersonationSquatting,
    AttackCategory::CompoundSquatting,
    AttackCategory::DomainConfusion,
];

pub fn bundled_names() -> Vec<String> {
    word_lines(BUNDLED_NAMES)
}

fn word_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub flat: usize,
    pub scoped: usize,
    pub golang: usize,
    pub trusted_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 20_250_301,
            flat: 5000,
            scoped: 3500,
            golang: 1500,
            trusted_fraction: 0.2,
        }
    }
}

/// A generated registry: metadata records per registry plus the trusted set.
#[derive(Debug, Clone)]
pub struct SyntheticRegistry {
    pub records: BTreeMap<RegistryId, Vec<MetadataRecord>>,
    pub trusted: Vec<PackageRef>,
    taken: BTreeSet<(RegistryId, String)>,
    now: DateTime<Utc>,
}

fn clean(name: &str) -> String {
    name.to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '-' })
        .collect::<String>()
        .trim_matches('-')
        .to_string()
}

impl SyntheticRegistry {
    /// Builds flat and scoped npm packages plus golang modules from a list
    /// of real package names.
    pub fn generate(corpus: &[String], config: &SyntheticConfig, now: DateTime<Utc>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut names: Vec<String> = corpus
            .iter()
            .map(|n| clean(n))
            .filter(|n| n.len() >= 3)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        names.shuffle(&mut rng);
        let words: Vec<String> = names
            .iter()
            .flat_map(|n| tokens(n))
            .filter(|t| t.len() >= 3 && t.chars().all(|c| c.is_ascii_alphabetic()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        let mut reg = SyntheticRegistry {
            records: BTreeMap::new(),
            trusted: Vec::new(),
            taken: BTreeSet::new(),
            now,
        };

        let flat: Vec<String> = names.iter().take(config.flat).cloned().collect();
        for (i, name) in flat.iter().enumerate() {
            let trusted = (i as f64) < config.flat as f64 * config.trusted_fraction;
            reg.push_generated(RegistryId::Npm, name, trusted, &mut rng);
        }

        let mut made = 0;
        while made < config.scoped {
            let org = words.choose(&mut rng).unwrap();
            let id = if rng.gen_bool(0.5) {
                names.choose(&mut rng).unwrap().clone()
            } else {
                format!("{}-{}", words.choose(&mut rng).unwrap(), words.choose(&mut rng).unwrap())
            };
            let raw = format!("@{org}/{id}");
            let trusted = (made as f64) < config.scoped as f64 * config.trusted_fraction;
            if reg.push_generated(RegistryId::Npm, &raw, trusted, &mut rng) {
                made += 1;
            }
        }

        made = 0;
        while made < config.golang {
            let host = GO_HOSTS[rng.gen_range(0..GO_HOSTS.len())];
            let owner = words.choose(&mut rng).unwrap();
            let repo = names.choose(&mut rng).unwrap();
            let raw = format!("{host}/{owner}/{repo}");
            let trusted = (made as f64) < config.golang as f64 * config.trusted_fraction;
            if reg.push_generated(RegistryId::Golang, &raw, trusted, &mut rng) {
                made += 1;
            }
        }
        reg
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.now
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, registry: RegistryId, raw: &str) -> bool {
        self.taken.contains(&(registry, raw.to_lowercase()))
    }

    pub fn record(&self, package: &PackageRef) -> Option<&MetadataRecord> {
        self.records
            .get(&package.registry)?
            .iter()
            .find(|r| r.name.eq_ignore_ascii_case(&package.raw))
    }

    /// All records as parsed packages, for embedding training.
    pub fn packages(&self) -> Vec<PackageRef> {
        self.records
            .iter()
            .flat_map(|(reg, recs)| recs.iter().filter_map(|r| PackageRef::parse(*reg, &r.name).ok()))
            .collect()
    }

    /// One JSON line per record, the format `ingest_snapshot` reads.
    pub fn to_jsonl(&self, registry: RegistryId) -> String {
        let mut out = String::new();
        for r in self.records.get(&registry).into_iter().flatten() {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    fn push_generated(&mut self, registry: RegistryId, raw: &str, trusted: bool, rng: &mut ChaCha8Rng) -> bool {
        let Ok(package) = PackageRef::parse(registry, raw) else {
            return false;
        };
        if !self.taken.insert((registry, raw.to_lowercase())) {
            return false;
        }
        let (downloads, ranking) = if registry.uses_downloads() {
            let d = if trusted {
                rng.gen_range(20_000..2_000_000)
            } else {
                rng.gen_range(0..4_000)
            };
            (Some(d), None)
        } else {
            let r = if trusted {
                rng.gen_range(0.5..3.5)
            } else {
                rng.gen_range(6.0..60.0)
            };
            (None, Some(r))
        };
        let words = tokens(&package.identifier).join(" ");
        let tail = DESCRIPTION_TAILS[rng.gen_range(0..DESCRIPTION_TAILS.len())];
        let owner = package.namespace.clone().unwrap_or_else(|| normalize(raw));
        let created = self.now - Duration::days(rng.gen_range(200..3000));
        let releases = rng.gen_range(1..12);
        let versions = (0..releases)
            .map(|i| VersionInfo {
                version: format!("{}.{}.0", i / 4, i % 4),
                published_at: created + Duration::days(15 * i as i64),
            })
            .collect();
        let record = MetadataRecord {
            registry: Some(registry.as_str().to_string()),
            name: raw.to_string(),
            description: Some(format!("{words} {tail}")),
            readme: Some(format!(
                "# {raw}\n\nThe {words} project provides a {tail}. Install it from the registry and import it."
            )),
            license: Some("MIT".into()),
            maintainers: vec![format!("{owner}-team@example.org")],
            repository_url: Some(format!("https://example.org/{}", normalize(raw))),
            versions,
            weekly_downloads: downloads,
            avg_ranking: ranking,
            created_at: Some(created),
            ..MetadataRecord::default()
        };
        if trusted {
            self.trusted.push(package);
        }
        self.records.entry(registry).or_default().push(record);
        true
    }

    /// Adds an attack record that copies the basis description under a new
    /// maintainer and ships no readme.
    pub fn inject(&mut self, attack: &InjectedAttack) -> bool {
        let registry = attack.suspect.registry;
        if !self.taken.insert((registry, attack.suspect.raw.to_lowercase())) {
            return false;
        }
        let basis = self.record(&attack.basis).cloned();
        let created = self.now - Duration::days(3);
        let record = MetadataRecord {
            registry: Some(registry.as_str().to_string()),
            name: attack.suspect.raw.clone(),
            description: basis.and_then(|b| b.description),
            readme: None,
            license: None,
            maintainers: vec!["fresh-publisher@mail.test".into()],
            repository_url: None,
            versions: vec![VersionInfo {
                version: "1.0.0".into(),
                published_at: created,
            }],
            weekly_downloads: registry.uses_downloads().then_some(12),
            avg_ranking: (!registry.uses_downloads()).then_some(80.0),
            created_at: Some(created),
            ..MetadataRecord::default()
        };
        self.records.entry(registry).or_default().push(record);
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectedAttack {
    pub technique: AttackCategory,
    pub suspect: PackageRef,
    pub basis: PackageRef,
}

/// Applies taxonomy techniques to random trusted names.
pub struct AttackGenerator {
    rng: ChaCha8Rng,
    synonyms: Vec<Vec<String>>,
    substitutions: SubstitutionTable,
    domains: Vec<String>,
}

impl AttackGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            synonyms: SYNONYMS
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| l.split_whitespace().map(str::to_string).collect())
                .collect(),
            substitutions: SubstitutionTable::default(),
            domains: word_lines(LOOKALIKE_DOMAINS),
        }
    }

    /// `count` attacks cycling through the techniques in order. Each
    /// suspect name is new to the registry and to the other attacks.
    pub fn generate(&mut self, registry: &SyntheticRegistry, count: usize) -> Vec<InjectedAttack> {
        let mut out = Vec::with_capacity(count);
        let mut used: BTreeSet<(RegistryId, String)> = BTreeSet::new();
        let mut by_kind: BTreeMap<&str, Vec<&PackageRef>> = BTreeMap::new();
        for p in &registry.trusted {
            let kind = match (p.registry, p.namespace.is_some()) {
                (RegistryId::Golang, _) => "golang",
                (_, true) => "scoped",
                _ => "flat",
            };
            by_kind.entry(kind).or_default().push(p);
        }
        let mut i = 0usize;
        let mut stalls = 0usize;
        while out.len() < count {
            let technique = TECHNIQUES[i % TECHNIQUES.len()];
            i += 1;
            let pool = match technique {
                AttackCategory::ScopeConfusion
                | AttackCategory::ImpersonationSquatting
                | AttackCategory::CompoundSquatting => &by_kind["scoped"],
                AttackCategory::DomainConfusion => &by_kind["golang"],
                _ => &by_kind["flat"],
            };
            let mut made = None;
            for _ in 0..200 {
                let basis = *pool.choose(&mut self.rng).unwrap();
                let Some(raw) = self.apply(technique, basis) else {
                    continue;
                };
                let Ok(suspect) = PackageRef::parse(basis.registry, &raw) else {
                    continue;
                };
                let key = (basis.registry, raw.to_lowercase());
                if suspect.same_package(basis) || registry.contains(basis.registry, &raw) || used.contains(&key) {
                    continue;
                }
                used.insert(key);
                made = Some(InjectedAttack {
                    technique,
                    suspect,
                    basis: basis.clone(),
                });
                break;
            }
            match made {
                Some(a) => out.push(a),
                None => {
                    // keep the technique order fixed even when one cannot be applied
                    i -= 1;
                    stalls += 1;
                    assert!(stalls < 10_000, "cannot generate {technique:?} attacks");
                }
            }
        }
        out
    }

    fn apply(&mut self, technique: AttackCategory, basis: &PackageRef) -> Option<String> {
        match technique {
            AttackCategory::OneStepLevenshtein => Some(self.one_edit(&basis.raw)),
            AttackCategory::SequenceReordering => self.reorder(&basis.raw),
            AttackCategory::ScopeConfusion => {
                let ns = basis.namespace.as_ref()?;
                Some(format!("{ns}-{}", basis.identifier))
            }
            AttackCategory::SemanticSubstitution => self.substitute_synonym(&basis.raw),
            AttackCategory::AlternateSpelling => self.alternate_spelling(&basis.raw),
            AttackCategory::ImpersonationSquatting => {
                let ns = basis.namespace.as_ref()?;
                let fake = self.mutate_owner(ns);
                Some(format!("@{fake}/{}", basis.identifier))
            }
            AttackCategory::CompoundSquatting => {
                let ns = basis.namespace.as_ref()?;
                let fake_ns = self.mutate_owner(ns);
                let fake_id = self.mutate_identifier(&basis.identifier);
                Some(format!("@{fake_ns}/{fake_id}"))
            }
            AttackCategory::DomainConfusion => {
                let ns = basis.namespace.as_ref()?;
                let host = self.domains.choose(&mut self.rng)?.clone();
                Some(format!("{host}/{ns}/{}", basis.identifier))
            }
            AttackCategory::OtherLexical => None,
        }
    }

    fn one_edit(&mut self, raw: &str) -> String {
        let chars: Vec<char> = raw.chars().collect();
        let letters: Vec<usize> = (0..chars.len()).filter(|i| chars[*i].is_ascii_alphanumeric()).collect();
        let pos = *letters.choose(&mut self.rng).unwrap();
        let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyz".chars().collect();
        let mut out = chars.clone();
        match self.rng.gen_range(0..4) {
            0 => {
                out.insert(pos, *alphabet.choose(&mut self.rng).unwrap());
            }
            1 if letters.len() > 3 => {
                out.remove(pos);
            }
            2 => {
                let c = *alphabet.iter().filter(|c| **c != chars[pos]).collect::<Vec<_>>().choose(&mut self.rng).unwrap();
                out[pos] = *c;
            }
            _ => {
                if pos + 1 < chars.len() && chars[pos + 1].is_ascii_alphanumeric() && chars[pos] != chars[pos + 1] {
                    out.swap(pos, pos + 1);
                } else {
                    out.insert(pos, chars[pos]);
                }
            }
        }
        out.into_iter().collect()
    }

    fn reorder(&mut self, raw: &str) -> Option<String> {
        let parts: Vec<&str> = raw.split('-').filter(|p| !p.is_empty()).collect();
        if parts.len() < 2 || parts.iter().collect::<BTreeSet<_>>().len() < 2 {
            return None;
        }
        let mut shuffled = parts.clone();
        while shuffled == parts {
            shuffled.shuffle(&mut self.rng);
        }
        Some(shuffled.join("-"))
    }

    fn substitute_synonym(&mut self, raw: &str) -> Option<String> {
        let parts: Vec<&str> = raw.split('-').collect();
        let mut options = Vec::new();
        for (i, p) in parts.iter().enumerate() {
            for group in &self.synonyms {
                if group.iter().any(|w| w == p) {
                    for w in group.iter().filter(|w| *w != p) {
                        options.push((i, w.clone()));
                    }
                }
            }
        }
        let (i, w) = options.choose(&mut self.rng)?.clone();
        let mut out: Vec<String> = parts.iter().map(|s| s.to_string()).collect();
        out[i] = w;
        Some(out.join("-"))
    }

    fn alternate_spelling(&mut self, raw: &str) -> Option<String> {
        let mut options = Vec::new();
        for (a, b) in self.substitutions.pairs() {
            for (from, to) in [(a, b), (b, a)] {
                if !from.chars().all(|c| c.is_ascii_alphabetic()) || !to.chars().all(|c| c.is_ascii_alphabetic()) {
                    continue;
                }
                for (pos, _) in raw.match_indices(from.as_str()) {
                    options.push((pos, from.clone(), to.clone()));
                }
            }
        }
        let (pos, from, to) = options.choose(&mut self.rng)?.clone();
        Some(format!("{}{}{}", &raw[..pos], to, &raw[pos + from.len()..]))
    }

    /// Owner-name changes seen in impersonation: affixes, delimiter
    /// changes, or a single edit.
    fn mutate_owner(&mut self, ns: &str) -> String {
        const AFFIXES: [&str; 8] = ["-js", "-dev", "-team", "-org", "hq", "-official", "-labs", "-io"];
        match self.rng.gen_range(0..4) {
            0 => format!("{ns}{}", AFFIXES.choose(&mut self.rng).unwrap()),
            1 => format!("{}-{ns}", ["the", "real", "get", "my"].choose(&mut self.rng).unwrap()),
            2 if ns.contains('-') => ns.replacen('-', "_", 1),
            2 if ns.len() > 3 => {
                let mid = ns.len() / 2;
                format!("{}-{}", &ns[..mid], &ns[mid..])
            }
            _ => self.one_edit(ns),
        }
        .trim_matches('-')
        .to_string()
    }

    fn mutate_identifier(&mut self, id: &str) -> String {
        const SUFFIXES: [&str; 6] = ["-plugin", "-utils", "er", "-core", "s", "-cli"];
        let parts: Vec<&str> = id.split('-').collect();
        if parts.len() > 1 && self.rng.gen_bool(0.5) {
            return parts[..parts.len() - 1].join("-");
        }
        format!("{id}{}", SUFFIXES.choose(&mut self.rng).unwrap())
    }
}
