//! Registry-aware package names and the package-confusion attack taxonomy.
//!
//! Every registry has its own naming grammar. Flat registries (PyPI,
//! RubyGems, unscoped npm) publish a single identifier; hierarchical ones
//! split a name into a namespace (npm scope, Maven groupId, Golang author,
//! Hugging Face author) and an identifier, and Golang adds a host domain.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::NameError;

/// Characters treated as delimiters when normalizing names.
pub const DELIMITERS: [char; 6] = ['/', ':', '@', '-', '_', '.'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegistryId {
    Npm,
    Pypi,
    Rubygems,
    Maven,
    Golang,
    Huggingface,
    Nuget,
}

impl RegistryId {
    pub const ALL: [RegistryId; 7] = [
        RegistryId::Npm,
        RegistryId::Pypi,
        RegistryId::Rubygems,
        RegistryId::Maven,
        RegistryId::Golang,
        RegistryId::Huggingface,
        RegistryId::Nuget,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegistryId::Npm => "npm",
            RegistryId::Pypi => "pypi",
            RegistryId::Rubygems => "rubygems",
            RegistryId::Maven => "maven",
            RegistryId::Golang => "golang",
            RegistryId::Huggingface => "huggingface",
            RegistryId::Nuget => "nuget",
        }
    }

    /// Registries that publish download counts rather than a ranking score.
    pub fn uses_downloads(self) -> bool {
        !matches!(self, RegistryId::Maven | RegistryId::Golang)
    }
}

impl fmt::Display for RegistryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegistryId {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RegistryId::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| NameError::UnknownRegistry(s.to_string()))
    }
}

/// A parsed package name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PackageRef {
    pub registry: RegistryId,
    pub raw: String,
    pub domain: Option<String>,
    pub namespace: Option<String>,
    pub identifier: String,
    pub normalized: String,
}

/// Lowercase and strip every delimiter character.
pub fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| !DELIMITERS.contains(c))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Split on the delimiter set, lowercased, dropping empty pieces.
pub fn tokens(s: &str) -> Vec<String> {
    s.split(|c| DELIMITERS.contains(&c))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn legal_char(c: char) -> bool {
    c.is_alphanumeric() || DELIMITERS.contains(&c)
}

fn malformed(raw: &str, reason: &str) -> NameError {
    NameError::Malformed {
        name: raw.to_string(),
        reason: reason.to_string(),
    }
}

fn non_empty<'a>(raw: &str, part: &'a str, what: &str) -> Result<&'a str, NameError> {
    if part.is_empty() {
        Err(malformed(raw, &format!("empty {what}")))
    } else {
        Ok(part)
    }
}

impl PackageRef {
    fn build(
        registry: RegistryId,
        raw: &str,
        domain: Option<&str>,
        namespace: Option<&str>,
        identifier: &str,
    ) -> PackageRef {
        PackageRef {
            registry,
            raw: raw.to_string(),
            domain: domain.map(str::to_string),
            namespace: namespace.map(str::to_string),
            identifier: identifier.to_string(),
            normalized: normalize(raw),
        }
    }

    /// Parse `raw` under the naming grammar of `registry`.
    pub fn parse(registry: RegistryId, raw: &str) -> Result<PackageRef, NameError> {
        if raw.is_empty() {
            return Err(malformed(raw, "empty name"));
        }
        if let Some(c) = raw.chars().find(|c| !legal_char(*c)) {
            return Err(malformed(raw, &format!("illegal character {c:?}")));
        }
        match registry {
            RegistryId::Npm => {
                if let Some(rest) = raw.strip_prefix('@') {
                    let (scope, name) = rest
                        .split_once('/')
                        .ok_or_else(|| malformed(raw, "scoped name without '/'"))?;
                    if name.contains('/') || scope.contains('@') || name.contains('@') {
                        return Err(malformed(raw, "scoped name must be @scope/name"));
                    }
                    let scope = non_empty(raw, scope, "scope")?;
                    let name = non_empty(raw, name, "name")?;
                    if raw.contains(':') {
                        return Err(malformed(raw, "':' not allowed"));
                    }
                    Ok(Self::build(registry, raw, None, Some(scope), name))
                } else {
                    Self::parse_flat(registry, raw)
                }
            }
            RegistryId::Pypi | RegistryId::Rubygems | RegistryId::Nuget => {
                Self::parse_flat(registry, raw)
            }
            RegistryId::Maven => {
                if raw.contains('/') || raw.contains('@') {
                    return Err(malformed(raw, "maven coordinates use groupId:artifactId"));
                }
                let mut parts = raw.split(':');
                let (Some(group), Some(artifact), None) = (parts.next(), parts.next(), parts.next())
                else {
                    return Err(malformed(raw, "expected exactly one ':'"));
                };
                let group = non_empty(raw, group, "groupId")?;
                let artifact = non_empty(raw, artifact, "artifactId")?;
                Ok(Self::build(registry, raw, None, Some(group), artifact))
            }
            RegistryId::Golang => {
                if raw.contains(':') || raw.contains('@') {
                    return Err(malformed(raw, "module paths use '/' separators"));
                }
                let segments: Vec<&str> = raw.split('/').collect();
                if segments.iter().any(|s| s.is_empty()) {
                    return Err(malformed(raw, "empty path segment"));
                }
                match segments.as_slice() {
                    [] | [_] => Err(malformed(raw, "expected domain/[author/]repository")),
                    [domain, repo] => Ok(Self::build(registry, raw, Some(domain), None, repo)),
                    [domain, author, rest @ ..] => {
                        let identifier = rest.join("/");
                        Ok(Self::build(registry, raw, Some(domain), Some(author), &identifier))
                    }
                }
            }
            RegistryId::Huggingface => {
                if raw.contains(':') || raw.contains('@') {
                    return Err(malformed(raw, "repository ids use author/name"));
                }
                match raw.split_once('/') {
                    None => Ok(Self::build(registry, raw, None, None, raw)),
                    Some((author, name)) => {
                        if name.contains('/') {
                            return Err(malformed(raw, "expected at most one '/'"));
                        }
                        let author = non_empty(raw, author, "author")?;
                        let name = non_empty(raw, name, "model name")?;
                        Ok(Self::build(registry, raw, None, Some(author), name))
                    }
                }
            }
        }
    }

    fn parse_flat(registry: RegistryId, raw: &str) -> Result<PackageRef, NameError> {
        if raw.contains(['/', ':', '@']) {
            return Err(malformed(raw, "flat names may not contain '/', ':' or '@'"));
        }
        Ok(Self::build(registry, raw, None, None, raw))
    }

    /// NuGet name whose leading segment(s) form a reserved, verified prefix.
    /// `Newtonsoft.Json` with prefix `Newtonsoft` splits into namespace and
    /// identifier; without a prefix reservation NuGet names stay flat.
    pub fn nuget_with_prefix(raw: &str, prefix: &str) -> Result<PackageRef, NameError> {
        let flat = Self::parse_flat(RegistryId::Nuget, raw)?;
        let Some(rest) = raw.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) else {
            return Ok(flat);
        };
        if prefix.is_empty() || rest.is_empty() {
            return Ok(flat);
        }
        Ok(Self::build(RegistryId::Nuget, raw, None, Some(prefix), rest))
    }

    pub fn is_hierarchical(&self) -> bool {
        self.namespace.is_some()
    }

    /// Rebuild the published name from components.
    pub fn reconstruct(&self) -> String {
        match (self.registry, &self.domain, &self.namespace) {
            (RegistryId::Golang, Some(d), Some(ns)) => format!("{d}/{ns}/{}", self.identifier),
            (RegistryId::Golang, Some(d), None) => format!("{d}/{}", self.identifier),
            (RegistryId::Npm, _, Some(ns)) => format!("@{ns}/{}", self.identifier),
            (RegistryId::Maven, _, Some(ns)) => format!("{ns}:{}", self.identifier),
            (RegistryId::Huggingface, _, Some(ns)) => format!("{ns}/{}", self.identifier),
            (RegistryId::Nuget, _, Some(ns)) => format!("{ns}.{}", self.identifier),
            _ => self.identifier.clone(),
        }
    }

    /// Normalized string used for name similarity. Golang host domains are
    /// left out; domain confusion is detected structurally instead.
    pub fn search_key(&self) -> String {
        match (self.registry, &self.domain) {
            (RegistryId::Golang, Some(_)) => {
                let mut key = self.namespace.as_deref().map(normalize).unwrap_or_default();
                key.push_str(&normalize(&self.identifier));
                key
            }
            _ => self.normalized.clone(),
        }
    }

    pub fn namespace_key(&self) -> Option<String> {
        self.namespace.as_deref().map(normalize)
    }

    pub fn identifier_key(&self) -> String {
        normalize(&self.identifier)
    }

    /// True when both names are published by the same owner
    /// (identical domain and namespace, case-insensitively).
    pub fn same_owner(&self, other: &PackageRef) -> bool {
        match (&self.namespace, &other.namespace) {
            (Some(a), Some(b)) => {
                a.eq_ignore_ascii_case(b)
                    && self.domain.as_deref().map(str::to_lowercase)
                        == other.domain.as_deref().map(str::to_lowercase)
            }
            _ => false,
        }
    }

    /// Case-insensitive identity on (registry, raw).
    pub fn same_package(&self, other: &PackageRef) -> bool {
        self.registry == other.registry && self.raw.eq_ignore_ascii_case(&other.raw)
    }
}

impl fmt::Display for PackageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.registry, self.raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackCategory {
    OneStepLevenshtein,
    SequenceReordering,
    ScopeConfusion,
    SemanticSubstitution,
    AlternateSpelling,
    ImpersonationSquatting,
    CompoundSquatting,
    DomainConfusion,
    OtherLexical,
}

impl AttackCategory {
    pub const ALL: [AttackCategory; 9] = [
        AttackCategory::OneStepLevenshtein,
        AttackCategory::SequenceReordering,
        AttackCategory::ScopeConfusion,
        AttackCategory::SemanticSubstitution,
        AttackCategory::AlternateSpelling,
        AttackCategory::ImpersonationSquatting,
        AttackCategory::CompoundSquatting,
        AttackCategory::DomainConfusion,
        AttackCategory::OtherLexical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackCategory::OneStepLevenshtein => "one_step_levenshtein",
            AttackCategory::SequenceReordering => "sequence_reordering",
            AttackCategory::ScopeConfusion => "scope_confusion",
            AttackCategory::SemanticSubstitution => "semantic_substitution",
            AttackCategory::AlternateSpelling => "alternate_spelling",
            AttackCategory::ImpersonationSquatting => "impersonation_squatting",
            AttackCategory::CompoundSquatting => "compound_squatting",
            AttackCategory::DomainConfusion => "domain_confusion",
            AttackCategory::OtherLexical => "other_lexical",
        }
    }
}

impl fmt::Display for AttackCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown attack category {s:?}"))
    }
}

/// Spelling substitutions ("from" -> "to"); applied in both directions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionTable {
    pairs: Vec<(String, String)>,
}

const DEFAULT_SUBSTITUTIONS: &str = include_str!("../data/substitutions.txt");

impl Default for SubstitutionTable {
    fn default() -> Self {
        Self::parse(DEFAULT_SUBSTITUTIONS).expect("bundled substitution table parses")
    }
}

impl SubstitutionTable {
    /// Parse "from,to" lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (from, to) = line
                .split_once(',')
                .ok_or_else(|| format!("line {}: expected from,to", lineno + 1))?;
            let (from, to) = (from.trim().to_lowercase(), to.trim().to_lowercase());
            if from.is_empty() && to.is_empty() {
                return Err(format!("line {}: empty substitution", lineno + 1));
            }
            pairs.push((from, to));
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    /// True when replacing one occurrence of a table entry (either
    /// direction) in `a` yields `b`.
    pub fn links(&self, a: &str, b: &str) -> bool {
        if a == b {
            return false;
        }
        self.pairs
            .iter()
            .any(|(x, y)| one_substitution(a, b, x, y) || one_substitution(a, b, y, x))
    }
}

fn one_substitution(a: &str, b: &str, from: &str, to: &str) -> bool {
    if from.is_empty() {
        return false;
    }
    if a.len() + to.len() != b.len() + from.len() {
        return false;
    }
    a.match_indices(from).any(|(i, _)| {
        let mut candidate = String::with_capacity(b.len());
        candidate.push_str(&a[..i]);
        candidate.push_str(to);
        candidate.push_str(&a[i + from.len()..]);
        candidate == b
    })
}

/// Evidence gathered by confusion search for one (suspect, target) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairEvidence {
    /// Damerau-Levenshtein distance between the search keys.
    pub lexical_distance: usize,
    pub cosine_full: Option<f64>,
    pub namespace_similarity: Option<f64>,
    pub identifier_similarity: Option<f64>,
}

/// Thresholds used when deciding whether a name component is "close".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyThresholds {
    pub levenshtein_max: usize,
    pub cosine_min: f64,
    pub namespace_cosine_min: f64,
    pub identifier_cosine_min: f64,
}

impl Default for ClassifyThresholds {
    fn default() -> Self {
        Self {
            levenshtein_max: 2,
            cosine_min: 0.93,
            namespace_cosine_min: 0.90,
            identifier_cosine_min: 0.99,
        }
    }
}

fn sorted_tokens(r: &PackageRef) -> Vec<String> {
    let mut t = tokens(&strip_domain(r));
    t.sort();
    t
}

/// Delimiter-split tokens (Golang host excluded), sorted and space-joined.
/// Names that are reorderings of each other share this key.
pub fn token_multiset_key(r: &PackageRef) -> String {
    sorted_tokens(r).join(" ")
}

fn strip_domain(r: &PackageRef) -> String {
    match (r.registry, &r.domain) {
        (RegistryId::Golang, Some(d)) => r.raw[d.len()..].to_string(),
        _ => r.raw.clone(),
    }
}

fn component_close(a: &str, b: &str, cosine: Option<f64>, cosine_min: f64, max_edits: usize) -> bool {
    if a == b {
        return true;
    }
    if cosine.is_some_and(|c| c >= cosine_min) {
        return true;
    }
    if crate::distance::damerau_levenshtein_bounded(a, b, max_edits).is_some() {
        return true;
    }
    // affix edits such as "eslint" -> "eslint-plugin"
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    short.len() >= 3 && (long.starts_with(short) || long.ends_with(short))
}

/// Assign exactly one taxonomy category to a flagged pair. Categories are
/// tried most-specific first.
pub fn classify_attack_category(
    suspect: &PackageRef,
    target: &PackageRef,
    evidence: &PairEvidence,
    thresholds: &ClassifyThresholds,
    substitutions: &SubstitutionTable,
) -> AttackCategory {
    let lower = |s: &Option<String>| s.as_deref().map(str::to_lowercase);
    let (s_ns, t_ns) = (lower(&suspect.namespace), lower(&target.namespace));
    let (s_dom, t_dom) = (lower(&suspect.domain), lower(&target.domain));
    let s_id = suspect.identifier.to_lowercase();
    let t_id = target.identifier.to_lowercase();

    if s_dom.is_some() && t_dom.is_some() && s_dom != t_dom && s_ns == t_ns && s_id == t_id {
        return AttackCategory::DomainConfusion;
    }
    if let (Some(sn), Some(tn)) = (&s_ns, &t_ns) {
        if s_id == t_id && sn != tn {
            return AttackCategory::ImpersonationSquatting;
        }
        if s_id != t_id && sn != tn {
            let ns_close = component_close(
                &normalize(sn),
                &normalize(tn),
                evidence.namespace_similarity,
                thresholds.namespace_cosine_min,
                thresholds.levenshtein_max,
            );
            let id_close = component_close(
                &normalize(&s_id),
                &normalize(&t_id),
                evidence.identifier_similarity,
                thresholds.identifier_cosine_min,
                thresholds.levenshtein_max,
            );
            if ns_close && id_close {
                return AttackCategory::CompoundSquatting;
            }
        }
    }
    if s_ns.is_some() != t_ns.is_some() && sorted_tokens(suspect) == sorted_tokens(target) {
        return AttackCategory::ScopeConfusion;
    }
    let (s_tokens, t_tokens) = (tokens(&strip_domain(suspect)), tokens(&strip_domain(target)));
    if s_tokens != t_tokens && sorted_tokens(suspect) == sorted_tokens(target) {
        return AttackCategory::SequenceReordering;
    }
    if evidence.lexical_distance == 1 {
        return AttackCategory::OneStepLevenshtein;
    }
    if substitutions.links(&suspect.search_key(), &target.search_key()) {
        return AttackCategory::AlternateSpelling;
    }
    if evidence.lexical_distance > thresholds.levenshtein_max
        && evidence.cosine_full.is_some_and(|c| c >= thresholds.cosine_min)
    {
        return AttackCategory::SemanticSubstitution;
    }
    AttackCategory::OtherLexical
}

/// Count of pairs per category, handy for summaries.
pub fn category_histogram<'a, I>(categories: I) -> BTreeMap<AttackCategory, usize>
where
    I: IntoIterator<Item = &'a AttackCategory>,
{
    let mut out = BTreeMap::new();
    for c in categories {
        *out.entry(*c).or_insert(0) += 1;
    }
    out
}
