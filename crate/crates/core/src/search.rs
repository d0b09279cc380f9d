//! Candidate generation: compares a suspect against the trusted packages of
//! its registry through a lexical channel (bounded Damerau-Levenshtein over
//! length buckets), a semantic channel (ANN over full-name embeddings), a
//! hierarchical channel (namespace and identifier embeddings), and a
//! token-reordering lookup.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ann::{AnnIndex, HnswParams};
use crate::distance::{damerau_levenshtein, damerau_levenshtein_chars_bounded};
use crate::embedder::{cosine, EmbeddingModel, NameEmbedding, NamePart};
use crate::error::{IndexError, SearchError};
use crate::registry::{
    classify_attack_category, token_multiset_key, AttackCategory, ClassifyThresholds, PackageRef, PairEvidence,
    RegistryId, SubstitutionTable,
};
use crate::similarity::{typosim, SimilarityBreakdown};
use crate::store::{MetadataStore, PackageMetadata};
use crate::trust::{is_more_trusted, is_trusted, popularity, trusted_metadata, TrustPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchThresholds {
    pub levenshtein_max: usize,
    pub cosine_min: f64,
    pub hier_identifier_cosine_min: f64,
    pub hier_namespace_cosine_min: f64,
    pub top_k: usize,
    /// Neighbors fetched from the ANN index per query.
    pub ann_candidates: usize,
    pub ef_search: usize,
    /// Flag trusted names whose delimiter tokens are a permutation of the
    /// suspect's.
    pub reordering_channel: bool,
}

impl Default for SearchThresholds {
    fn default() -> Self {
        SearchThresholds {
            levenshtein_max: 2,
            cosine_min: 0.93,
            hier_identifier_cosine_min: 0.99,
            hier_namespace_cosine_min: 0.90,
            top_k: 2,
            ann_candidates: 16,
            ef_search: 100,
            reordering_channel: true,
        }
    }
}

impl SearchThresholds {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 < self.cosine_min && self.cosine_min <= self.hier_identifier_cosine_min && self.hier_identifier_cosine_min <= 1.0) {
            return Err("need 0 < cosine_min <= hier_identifier_cosine_min <= 1".into());
        }
        if !(0.0..=1.0).contains(&self.hier_namespace_cosine_min) {
            return Err("hier_namespace_cosine_min must be in [0, 1]".into());
        }
        if self.levenshtein_max < 1 || self.top_k < 1 || self.ann_candidates < 1 {
            return Err("levenshtein_max, top_k and ann_candidates must be >= 1".into());
        }
        if self.ef_search < self.ann_candidates {
            return Err("ef_search must be >= ann_candidates".into());
        }
        Ok(())
    }

    pub fn classify(&self) -> ClassifyThresholds {
        ClassifyThresholds {
            levenshtein_max: self.levenshtein_max,
            cosine_min: self.cosine_min,
            namespace_cosine_min: self.hier_namespace_cosine_min,
            identifier_cosine_min: self.hier_identifier_cosine_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Lexical,
    Semantic,
    Hierarchical,
    Reordering,
    Multiple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub suspect: PackageRef,
    pub target: PackageRef,
    pub lexical_distance: usize,
    pub cosine_full: f64,
    pub cosine_namespace: Option<f64>,
    pub cosine_identifier: Option<f64>,
    pub composite: SimilarityBreakdown,
    pub category: AttackCategory,
    /// `Multiple` when more than one channel fired; see `channels`.
    pub channel: Channel,
    pub channels: Vec<Channel>,
    pub target_popularity: f64,
}

impl CandidatePair {
    /// Builds a pair outside the search path, e.g. for evaluation records
    /// or fixtures. Component cosines are left empty.
    pub fn assemble(
        suspect: &PackageRef,
        target: &PackageRef,
        cosine_full: f64,
        channel: Channel,
        substitutions: &SubstitutionTable,
    ) -> Result<CandidatePair, SearchError> {
        let (sk, tk) = (suspect.search_key(), target.search_key());
        let lexical_distance = damerau_levenshtein(&sk, &tk);
        let evidence = PairEvidence {
            lexical_distance,
            cosine_full: Some(cosine_full),
            namespace_similarity: None,
            identifier_similarity: None,
        };
        let category = classify_attack_category(
            suspect,
            target,
            &evidence,
            &ClassifyThresholds::default(),
            substitutions,
        );
        Ok(CandidatePair {
            suspect: suspect.clone(),
            target: target.clone(),
            lexical_distance,
            cosine_full,
            cosine_namespace: None,
            cosine_identifier: None,
            composite: typosim(&sk, &tk)?,
            category,
            channel,
            channels: vec![channel],
            target_popularity: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertDraft {
    pub suspect: PackageRef,
    pub pairs: Vec<CandidatePair>,
    pub categories: Vec<AttackCategory>,
}

struct TrustedEntry {
    package: PackageRef,
    key: Vec<char>,
    full: NameEmbedding,
    identifier: Option<NameEmbedding>,
    namespace_group: Option<usize>,
}

struct NamespaceGroup {
    key: String,
    embedding: NameEmbedding,
    members: Vec<usize>,
}

/// Per-registry search structures over the trusted set.
pub struct RegistryIndex {
    registry: RegistryId,
    entries: Vec<TrustedEntry>,
    by_raw: HashMap<String, usize>,
    by_length: BTreeMap<usize, Vec<usize>>,
    by_tokens: HashMap<String, Vec<usize>>,
    groups: Vec<NamespaceGroup>,
    group_by_rep: HashMap<String, usize>,
    ann: AnnIndex,
}

impl RegistryIndex {
    /// Embeds the trusted set of `registry` and builds every lookup. The ANN
    /// index holds one `full` entry per trusted package, one `identifier`
    /// entry per hierarchical trusted package, and one `namespace` entry per
    /// distinct namespace.
    pub fn build(
        store: &MetadataStore,
        registry: RegistryId,
        model: &EmbeddingModel,
        policy: &TrustPolicy,
        params: HnswParams,
    ) -> Result<RegistryIndex, SearchError> {
        let trusted: Vec<PackageRef> = trusted_metadata(store, registry, policy)?
            .into_iter()
            .map(|m| m.package.clone())
            .collect();
        Self::from_trusted(registry, trusted, model, params, None)
    }

    fn from_trusted(
        registry: RegistryId,
        trusted: Vec<PackageRef>,
        model: &EmbeddingModel,
        params: HnswParams,
        ann: Option<AnnIndex>,
    ) -> Result<RegistryIndex, SearchError> {
        let mut entries = Vec::with_capacity(trusted.len());
        let mut groups: Vec<NamespaceGroup> = Vec::new();
        let mut group_of: HashMap<String, usize> = HashMap::new();
        for (i, package) in trusted.into_iter().enumerate() {
            let full = model.embed(&package, NamePart::Full)?;
            let (identifier, namespace_group) = match package.namespace_key() {
                Some(ns) => {
                    let g = match group_of.get(&ns) {
                        Some(&g) => g,
                        None => {
                            groups.push(NamespaceGroup {
                                key: ns.clone(),
                                embedding: model.embed(&package, NamePart::Namespace)?,
                                members: Vec::new(),
                            });
                            group_of.insert(ns, groups.len() - 1);
                            groups.len() - 1
                        }
                    };
                    groups[g].members.push(i);
                    (Some(model.embed(&package, NamePart::Identifier)?), Some(g))
                }
                None => (None, None),
            };
            entries.push(TrustedEntry {
                key: package.search_key().chars().collect(),
                package,
                full,
                identifier,
                namespace_group,
            });
        }

        let ann = match ann {
            Some(a) => a,
            None => {
                let mut items = Vec::with_capacity(entries.len() * 2 + groups.len());
                for e in &entries {
                    items.push((e.package.clone(), NamePart::Full, e.full.clone()));
                    if let Some(id) = &e.identifier {
                        items.push((e.package.clone(), NamePart::Identifier, id.clone()));
                    }
                }
                for g in &groups {
                    let rep = &entries[g.members[0]].package;
                    items.push((rep.clone(), NamePart::Namespace, g.embedding.clone()));
                }
                let mut index = AnnIndex::new(model.dimension(), params)?;
                for (p, part, v) in items {
                    index.add(p, part, &v)?;
                }
                index.freeze();
                index
            }
        };

        let mut by_raw = HashMap::with_capacity(entries.len());
        let mut by_length: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut by_tokens: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_raw.insert(e.package.raw.to_lowercase(), i);
            by_length.entry(e.key.len()).or_default().push(i);
            by_tokens.entry(token_multiset_key(&e.package)).or_default().push(i);
        }
        let group_by_rep = groups
            .iter()
            .enumerate()
            .map(|(g, grp)| (entries[grp.members[0]].package.raw.to_lowercase(), g))
            .collect();
        Ok(RegistryIndex {
            registry,
            entries,
            by_raw,
            by_length,
            by_tokens,
            groups,
            group_by_rep,
            ann,
        })
    }

    pub fn registry(&self) -> RegistryId {
        self.registry
    }

    pub fn trusted_count(&self) -> usize {
        self.entries.len()
    }

    pub fn ann(&self) -> &AnnIndex {
        &self.ann
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        self.ann.save(path)
    }

    /// Restores an index saved with `save`. The trusted list is recovered
    /// from the `full` entries, in their original order.
    pub fn load(path: impl AsRef<Path>, model: &EmbeddingModel) -> Result<RegistryIndex, SearchError> {
        let ann = AnnIndex::load(path)?;
        if ann.dimension() != model.dimension() {
            return Err(IndexError::DimensionMismatch {
                expected: model.dimension(),
                actual: ann.dimension(),
            }
            .into());
        }
        let trusted = ann.entries_with_part(NamePart::Full);
        let registry = trusted
            .first()
            .map(|p| p.registry)
            .ok_or(IndexError::EmptyIndex)?;
        let params = ann.params();
        Self::from_trusted(registry, trusted, model, params, Some(ann))
    }

    /// Trusted entries within `max` edits of `key`.
    pub fn lexical_matches(&self, key: &str, max: usize) -> Vec<(usize, usize)> {
        let key: Vec<char> = key.chars().collect();
        let lo = key.len().saturating_sub(max);
        let hi = key.len() + max;
        let mut out = Vec::new();
        for (_, ids) in self.by_length.range(lo..=hi) {
            for &i in ids {
                if let Some(d) = damerau_levenshtein_chars_bounded(&key, &self.entries[i].key, max) {
                    out.push((i, d));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Packages reached by the lexical channel alone, for oracle tests.
    pub fn lexical_channel(&self, suspect: &PackageRef, max: usize) -> BTreeSet<PackageRef> {
        self.lexical_matches(&suspect.search_key(), max)
            .into_iter()
            .map(|(i, _)| self.entries[i].package.clone())
            .filter(|t| !t.same_package(suspect) && !t.same_owner(suspect))
            .collect()
    }
}

/// Read-only view bundling everything one scan needs.
pub struct SearchContext<'a> {
    pub store: &'a MetadataStore,
    pub model: &'a EmbeddingModel,
    pub index: &'a RegistryIndex,
    pub thresholds: &'a SearchThresholds,
    pub policy: &'a TrustPolicy,
    pub substitutions: &'a SubstitutionTable,
}

#[derive(Default, Clone, Copy)]
struct Flags {
    lexical: bool,
    semantic: bool,
    hierarchical: bool,
    reordering: bool,
}

impl Flags {
    fn channels(self) -> Vec<Channel> {
        let mut out = Vec::new();
        if self.lexical {
            out.push(Channel::Lexical);
        }
        if self.semantic {
            out.push(Channel::Semantic);
        }
        if self.hierarchical {
            out.push(Channel::Hierarchical);
        }
        if self.reordering {
            out.push(Channel::Reordering);
        }
        out
    }
}

impl SearchContext<'_> {
    fn check_registry(&self, suspect: &PackageRef) -> Result<(), SearchError> {
        if suspect.registry != self.index.registry {
            return Err(SearchError::IndexNotBuilt(suspect.registry));
        }
        Ok(())
    }

    /// Whether `target` may be paired with a suspect whose metadata is
    /// `suspect_meta`: never denied, and when the suspect is itself trusted,
    /// only strictly more-trusted targets qualify.
    fn admissible(&self, target: &PackageRef, suspect_meta: Option<&PackageMetadata>) -> bool {
        if self.store.is_denied(target) {
            return false;
        }
        match suspect_meta {
            Some(sm) if is_trusted(sm, self.policy).trusted => match self.store.get_metadata(target) {
                Some(tm) => is_more_trusted(tm, sm, self.policy).unwrap_or(false),
                None => false,
            },
            _ => true,
        }
    }

    /// Every flagged (suspect, trusted target) pair, sorted by target name.
    pub fn find_candidates(&self, suspect: &PackageRef) -> Result<Vec<CandidatePair>, SearchError> {
        self.check_registry(suspect)?;
        let th = self.thresholds;
        let idx = self.index;
        let key = suspect.search_key();
        if key.is_empty() {
            return Err(SearchError::EmptyString);
        }
        let mut flagged: BTreeMap<usize, Flags> = BTreeMap::new();

        for (i, _) in idx.lexical_matches(&key, th.levenshtein_max) {
            flagged.entry(i).or_default().lexical = true;
        }

        let full = self.model.embed(suspect, NamePart::Full)?;
        if !idx.ann.is_empty() {
            for hit in idx.ann.search_filtered(&full, th.ann_candidates, th.ef_search, Some(NamePart::Full))? {
                if hit.similarity < th.cosine_min {
                    break;
                }
                if let Some(&i) = idx.by_raw.get(&hit.package.raw.to_lowercase()) {
                    flagged.entry(i).or_default().semantic = true;
                }
            }
        }

        let mut suspect_id: Option<NameEmbedding> = None;
        let mut suspect_ns: Option<NameEmbedding> = None;
        if suspect.is_hierarchical() && !idx.ann.is_empty() {
            let ns = self.model.embed(suspect, NamePart::Namespace)?;
            let id = self.model.embed(suspect, NamePart::Identifier)?;
            let mut cands: BTreeSet<usize> = BTreeSet::new();
            for hit in idx.ann.search_filtered(&ns, th.ann_candidates, th.ef_search, Some(NamePart::Namespace))? {
                if hit.similarity < th.hier_namespace_cosine_min {
                    break;
                }
                if let Some(&g) = idx.group_by_rep.get(&hit.package.raw.to_lowercase()) {
                    cands.extend(&idx.groups[g].members);
                }
            }
            for hit in idx.ann.search_filtered(&id, th.ann_candidates, th.ef_search, Some(NamePart::Identifier))? {
                if hit.similarity < th.hier_identifier_cosine_min {
                    break;
                }
                if let Some(&i) = idx.by_raw.get(&hit.package.raw.to_lowercase()) {
                    cands.insert(i);
                }
            }
            let s_ns_key = suspect.namespace_key().unwrap_or_default();
            let s_id_key = suspect.identifier_key();
            for i in cands {
                let e = &idx.entries[i];
                let Some(g) = e.namespace_group else { continue };
                let group = &idx.groups[g];
                if group.key == s_ns_key {
                    continue;
                }
                let ns_sim = cosine(&ns, &group.embedding)?;
                let id_equal = e.package.identifier_key() == s_id_key;
                let id_sim = match &e.identifier {
                    Some(v) => cosine(&id, v)?,
                    None => continue,
                };
                if ns_sim >= th.hier_namespace_cosine_min && (id_equal || id_sim >= th.hier_identifier_cosine_min) {
                    flagged.entry(i).or_default().hierarchical = true;
                }
            }
            suspect_ns = Some(ns);
            suspect_id = Some(id);
        }

        if th.reordering_channel {
            if let Some(ids) = idx.by_tokens.get(&token_multiset_key(suspect)) {
                for &i in ids {
                    flagged.entry(i).or_default().reordering = true;
                }
            }
        }

        let suspect_meta = self.store.get_metadata(suspect);
        let classify = th.classify();
        let mut pairs = Vec::with_capacity(flagged.len());
        for (i, flags) in flagged {
            let e = &idx.entries[i];
            let target = &e.package;
            if target.same_package(suspect) || target.same_owner(suspect) || !self.admissible(target, suspect_meta) {
                continue;
            }
            let lexical_distance = damerau_levenshtein(&key, &e.key.iter().collect::<String>());
            let cosine_full = cosine(&full, &e.full)?;
            let (cosine_namespace, cosine_identifier) = match (&suspect_ns, &suspect_id, e.namespace_group, &e.identifier) {
                (Some(ns), Some(id), Some(g), Some(tid)) => {
                    (Some(cosine(ns, &idx.groups[g].embedding)?), Some(cosine(id, tid)?))
                }
                _ => (None, None),
            };
            let evidence = PairEvidence {
                lexical_distance,
                cosine_full: Some(cosine_full),
                namespace_similarity: cosine_namespace,
                identifier_similarity: cosine_identifier,
            };
            let category = classify_attack_category(suspect, target, &evidence, &classify, self.substitutions);
            let composite = typosim(&key, &target.search_key())?;
            let channels = flags.channels();
            let channel = if channels.len() == 1 { channels[0] } else { Channel::Multiple };
            pairs.push(CandidatePair {
                suspect: suspect.clone(),
                target: target.clone(),
                lexical_distance,
                cosine_full,
                cosine_namespace,
                cosine_identifier,
                composite,
                category,
                channel,
                channels,
                target_popularity: self.store.get_metadata(target).map_or(-1.0, popularity),
            });
        }
        Ok(pairs)
    }

    /// Candidate search plus top-k selection. `None` when nothing is flagged.
    pub fn scan_package(&self, suspect: &PackageRef) -> Result<Option<AlertDraft>, SearchError> {
        let pairs = top_neighbors(self.find_candidates(suspect)?, self.thresholds.top_k);
        if pairs.is_empty() {
            return Ok(None);
        }
        let categories = pairs.iter().map(|p| p.category).collect();
        Ok(Some(AlertDraft {
            suspect: suspect.clone(),
            pairs,
            categories,
        }))
    }

    pub fn scan_by_name(&self, raw: &str) -> Result<Option<AlertDraft>, SearchError> {
        let suspect = match self.store.get_by_name(self.index.registry, raw) {
            Some(m) => m.package.clone(),
            None => PackageRef::parse(self.index.registry, raw)
                .map_err(|e| SearchError::UnknownSuspect(format!("{raw}: {e}")))?,
        };
        self.scan_package(&suspect)
    }
}

/// Highest composite score first; ties go to the more popular target, then
/// to the lexicographically smaller name. Keeps the first `k`.
pub fn top_neighbors(mut pairs: Vec<CandidatePair>, k: usize) -> Vec<CandidatePair> {
    pairs.sort_by(|a, b| {
        b.composite
            .max_score
            .total_cmp(&a.composite.max_score)
            .then_with(|| b.target_popularity.total_cmp(&a.target_popularity))
            .then_with(|| a.target.raw.cmp(&b.target.raw))
    });
    pairs.truncate(k);
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::TrainParams;
    use crate::registry::RegistryId::*;

    fn store_with(registry: RegistryId, rows: &[(&str, u64)]) -> MetadataStore {
        let mut store = MetadataStore::in_memory();
        let dump: String = rows
            .iter()
            .map(|(n, d)| format!("{{\"name\":\"{n}\",\"weekly_downloads\":{d},\"avg_ranking\":{}}}\n", if *d >= 5000 { 1.0 } else { 50.0 }))
            .collect();
        store.ingest_snapshot(registry, dump.as_bytes()).unwrap();
        store
    }

    fn model_for(names: &[&str]) -> EmbeddingModel {
        let params = TrainParams {
            dimension: 32,
            buckets: 1 << 16,
            ..TrainParams::default()
        };
        EmbeddingModel::train(names, &params).unwrap().0
    }

    fn run(store: &MetadataStore, registry: RegistryId, suspect: &str) -> Vec<CandidatePair> {
        run_with(store, registry, suspect, &SearchThresholds::default())
    }

    fn run_with(
        store: &MetadataStore,
        registry: RegistryId,
        suspect: &str,
        th: &SearchThresholds,
    ) -> Vec<CandidatePair> {
        let names: Vec<String> = store.packages_in(registry).map(|m| m.package.raw.clone()).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let model = model_for(&refs);
        let policy = TrustPolicy::default();
        let index = RegistryIndex::build(store, registry, &model, &policy, HnswParams::default()).unwrap();
        let subs = SubstitutionTable::default();
        let ctx = SearchContext {
            store,
            model: &model,
            index: &index,
            thresholds: th,
            policy: &policy,
            substitutions: &subs,
        };
        let suspect = store
            .get_by_name(registry, suspect)
            .map(|m| m.package.clone())
            .unwrap_or_else(|| PackageRef::parse(registry, suspect).unwrap());
        ctx.find_candidates(&suspect).unwrap()
    }

    #[test]
    fn one_edit_typo_is_lexical() {
        let store = store_with(Pypi, &[("bz2file", 90_000), ("requests", 1_000_000), ("bz2fiel", 3)]);
        let pairs = run(&store, Pypi, "bz2fiel");
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].target.raw, "bz2file");
        assert_eq!(pairs[0].lexical_distance, 1);
        assert!(pairs[0].channels.contains(&Channel::Lexical));
        assert_eq!(pairs[0].category, AttackCategory::OneStepLevenshtein);
    }

    #[test]
    fn reordered_tokens_are_flagged() {
        let store = store_with(Pypi, &[("python-nmap", 90_000), ("nmap-python", 10)]);
        let pairs = run(&store, Pypi, "nmap-python");
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].category, AttackCategory::SequenceReordering);
        assert!(pairs[0].channels.contains(&Channel::Reordering));
    }

    #[test]
    fn same_namespace_is_suppressed() {
        let store = store_with(Npm, &[("@scope/pkg-utils", 90_000), ("@scope/pkg", 10)]);
        assert!(run(&store, Npm, "@scope/pkg").is_empty());
    }

    #[test]
    fn impersonation_via_hierarchical_channel() {
        let store = store_with(
            Huggingface,
            &[("meta-llama/Llama-2-7b-chat-hf", 900_000), ("meta-llama-org/Llama-2-7b-chat-hf", 5)],
        );
        let th = SearchThresholds {
            hier_namespace_cosine_min: 0.5,
            ..SearchThresholds::default()
        };
        let pairs = run_with(&store, Huggingface, "meta-llama-org/Llama-2-7b-chat-hf", &th);
        assert_eq!(pairs.len(), 1);
        assert!(pairs[0].channels.contains(&Channel::Hierarchical));
        assert!(pairs[0].cosine_namespace.unwrap() >= 0.5);
        assert_eq!(pairs[0].category, AttackCategory::ImpersonationSquatting);
        assert!(run(&store, Huggingface, "meta-llama-org/Llama-2-7b-chat-hf").is_empty());
        assert_eq!(pairs[0].cosine_identifier.map(|c| (c * 1e6).round()), Some(1e6));
    }

    #[test]
    fn domain_confusion_pairs_by_search_key() {
        let store = store_with(
            Golang,
            &[("github.com/prometheus/prometheus", 900_000), ("git.luolix.top/prometheus/prometheus", 5)],
        );
        let pairs = run(&store, Golang, "git.luolix.top/prometheus/prometheus");
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].lexical_distance, 0);
        assert_eq!(pairs[0].category, AttackCategory::DomainConfusion);
    }

    #[test]
    fn trusted_suspect_only_pairs_with_dominant_targets() {
        let store = store_with(Npm, &[("lodash", 60_000), ("lodahs", 5_000), ("lodasg", 40_000)]);
        let pairs = run(&store, Npm, "lodahs");
        let names: Vec<&str> = pairs.iter().map(|p| p.target.raw.as_str()).collect();
        assert_eq!(names, ["lodash"]);
    }

    #[test]
    fn wrong_registry_is_reported() {
        let store = store_with(Npm, &[("lodash", 60_000)]);
        let model = model_for(&["lodash"]);
        let policy = TrustPolicy::default();
        let index = RegistryIndex::build(&store, Npm, &model, &policy, HnswParams::default()).unwrap();
        let th = SearchThresholds::default();
        let subs = SubstitutionTable::default();
        let ctx = SearchContext {
            store: &store,
            model: &model,
            index: &index,
            thresholds: &th,
            policy: &policy,
            substitutions: &subs,
        };
        let suspect = PackageRef::parse(Pypi, "lodahs").unwrap();
        assert!(matches!(ctx.find_candidates(&suspect), Err(SearchError::IndexNotBuilt(Pypi))));
        assert!(ctx.scan_by_name("bad name!").is_err());
        assert!(ctx.scan_by_name("express").unwrap().is_none());
    }

    fn pair(target: &str, score: f64, popularity: f64) -> CandidatePair {
        let s = PackageRef::parse(Npm, "suspect").unwrap();
        let t = PackageRef::parse(Npm, target).unwrap();
        let mut composite = typosim("a", "a").unwrap();
        composite.max_score = score;
        CandidatePair {
            suspect: s,
            target: t,
            lexical_distance: 1,
            cosine_full: 0.5,
            cosine_namespace: None,
            cosine_identifier: None,
            composite,
            category: AttackCategory::OtherLexical,
            channel: Channel::Lexical,
            channels: vec![Channel::Lexical],
            target_popularity: popularity,
        }
    }

    #[test]
    fn top_neighbors_ordering() {
        let pairs: Vec<_> = [1.0, 0.97, 0.95, 0.9, 0.8]
            .iter()
            .enumerate()
            .map(|(i, &s)| pair(&format!("t{i}"), s, 1.0))
            .rev()
            .collect();
        let top = top_neighbors(pairs.clone(), 2);
        assert_eq!(top.iter().map(|p| p.target.raw.as_str()).collect::<Vec<_>>(), ["t0", "t1"]);
        let full = top_neighbors(pairs, 10);
        assert_eq!(&full[..2], &top[..]);

        let tied = vec![pair("aaa", 1.0, 10.0), pair("zzz", 1.0, 500.0)];
        assert_eq!(top_neighbors(tied, 2)[0].target.raw, "zzz");
        assert_eq!(top_neighbors(vec![pair("x", 0.5, 1.0)], 2).len(), 1);
    }

    #[test]
    fn thresholds_validate() {
        assert!(SearchThresholds::default().validate().is_ok());
        let bad = SearchThresholds {
            cosine_min: 0.995,
            ..SearchThresholds::default()
        };
        assert!(bad.validate().is_err());
    }
}
