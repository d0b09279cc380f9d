//! Benignity filter: metadata rules R1-R15 applied to each flagged pair,
//! combined into a logistic risk score and a verdict.

mod fit;
mod judge;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::thread;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::JudgeError;
use crate::registry::RegistryId;
use crate::search::CandidatePair;
use crate::store::{AllowLists, MetadataStore, PackageMetadata};

pub use fit::{fit_rule_weights, FitParams, FitReport, FoldMetrics, Label, LogisticObjective};
pub use judge::{
    metadata_text, parse_judge_output, ExternalJudge, ExternalJudgeConfig, HeuristicConfig, HeuristicJudge,
    Judge, JudgeContext, JudgeRequest, JudgeResponse, PromptTemplates, METADATA_LIMIT,
};

/// Days since the last release under which a package counts as active.
pub const ACTIVE_WINDOW_DAYS: i64 = 30;
/// A package with more releases than this counts as active.
pub const ACTIVE_MIN_VERSIONS: usize = 5;
/// Relative length difference above which two names count as unrelated.
pub const LENGTH_RATIO_MAX: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directive {
    ObviousNotTyposquat,
    HasDistinctPurpose,
    IsFork,
    ActiveDevelopment,
    NoReadme,
    OverlappedMaintainers,
    IsAdversarialName,
    IsKnownMaintainer,
    HasSuspiciousIntent,
    IsTest,
    IsRelocatedPackage,
    OrgAllowlisted,
    MirrorDomain,
    VerifiedPrefix,
    NameLengthUnrelated,
}

impl Directive {
    pub const ALL: [Directive; 15] = [
        Directive::ObviousNotTyposquat,
        Directive::HasDistinctPurpose,
        Directive::IsFork,
        Directive::ActiveDevelopment,
        Directive::NoReadme,
        Directive::OverlappedMaintainers,
        Directive::IsAdversarialName,
        Directive::IsKnownMaintainer,
        Directive::HasSuspiciousIntent,
        Directive::IsTest,
        Directive::IsRelocatedPackage,
        Directive::OrgAllowlisted,
        Directive::MirrorDomain,
        Directive::VerifiedPrefix,
        Directive::NameLengthUnrelated,
    ];

    /// The nine directives answered by a judge, in prompt order.
    pub const JUDGED: [Directive; 9] = [
        Directive::ObviousNotTyposquat,
        Directive::IsAdversarialName,
        Directive::IsFork,
        Directive::HasDistinctPurpose,
        Directive::IsTest,
        Directive::NoReadme,
        Directive::IsKnownMaintainer,
        Directive::HasSuspiciousIntent,
        Directive::IsRelocatedPackage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Directive::ObviousNotTyposquat => "obvious_not_typosquat",
            Directive::HasDistinctPurpose => "has_distinct_purpose",
            Directive::IsFork => "is_fork",
            Directive::ActiveDevelopment => "active_development",
            Directive::NoReadme => "no_readme",
            Directive::OverlappedMaintainers => "overlapped_maintainers",
            Directive::IsAdversarialName => "is_adversarial_name",
            Directive::IsKnownMaintainer => "is_known_maintainer",
            Directive::HasSuspiciousIntent => "has_suspicious_intent",
            Directive::IsTest => "is_test",
            Directive::IsRelocatedPackage => "is_relocated_package",
            Directive::OrgAllowlisted => "org_allowlisted",
            Directive::MirrorDomain => "mirror_domain",
            Directive::VerifiedPrefix => "verified_prefix",
            Directive::NameLengthUnrelated => "name_length_unrelated",
        }
    }

    /// Rule identifier. `no_readme` covers R5 and R9, and the two halves of
    /// R7 (judged name confusability, measured length gap) share an id.
    pub fn rule_id(self) -> &'static str {
        match self {
            Directive::ObviousNotTyposquat => "R1",
            Directive::HasDistinctPurpose => "R2",
            Directive::IsFork => "R3",
            Directive::ActiveDevelopment => "R4",
            Directive::NoReadme => "R5",
            Directive::OverlappedMaintainers => "R6",
            Directive::IsAdversarialName | Directive::NameLengthUnrelated => "R7",
            Directive::IsKnownMaintainer => "R8",
            Directive::HasSuspiciousIntent => "R10",
            Directive::IsTest => "R11",
            Directive::IsRelocatedPackage => "R12",
            Directive::OrgAllowlisted => "R13",
            Directive::MirrorDomain => "R14",
            Directive::VerifiedPrefix => "R15",
        }
    }

    /// Directives computed from metadata only; a judge never sets them.
    pub fn is_deterministic(self) -> bool {
        matches!(
            self,
            Directive::ActiveDevelopment
                | Directive::OverlappedMaintainers
                | Directive::NameLengthUnrelated
                | Directive::OrgAllowlisted
                | Directive::MirrorDomain
                | Directive::VerifiedPrefix
        )
    }

    /// +1 when a true answer points towards an attack, -1 when it points away.
    pub fn polarity(self) -> f64 {
        match self {
            Directive::IsAdversarialName | Directive::HasSuspiciousIntent | Directive::NoReadme => 1.0,
            _ => -1.0,
        }
    }

    /// A true answer on one of these makes the pair benign outright.
    pub fn short_circuits_benign(self) -> bool {
        matches!(
            self,
            Directive::OrgAllowlisted
                | Directive::MirrorDomain
                | Directive::VerifiedPrefix
                | Directive::IsRelocatedPackage
                | Directive::OverlappedMaintainers
                | Directive::ObviousNotTyposquat
        )
    }

    fn index(self) -> usize {
        Directive::ALL.iter().position(|d| *d == self).unwrap()
    }
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    True,
    False,
    Unknown,
}

impl Truth {
    pub fn is_true(self) -> bool {
        self == Truth::True
    }

    pub fn into_option(self) -> Option<bool> {
        match self {
            Truth::True => Some(true),
            Truth::False => Some(false),
            Truth::Unknown => None,
        }
    }
}

impl From<bool> for Truth {
    fn from(b: bool) -> Self {
        if b {
            Truth::True
        } else {
            Truth::False
        }
    }
}

impl From<Option<bool>> for Truth {
    fn from(b: Option<bool>) -> Self {
        b.map_or(Truth::Unknown, Truth::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeSource {
    Metadata,
    Judge,
    /// The external judge was unreachable and the heuristic judge answered.
    HeuristicFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectiveOutcome {
    pub value: Truth,
    pub source: OutcomeSource,
}

/// One outcome per directive, always complete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Directive, DirectiveOutcome>", into = "BTreeMap<Directive, DirectiveOutcome>")]
pub struct RuleOutcome {
    entries: [DirectiveOutcome; 15],
}

impl RuleOutcome {
    /// Every directive unknown, sourced from metadata or judge by kind.
    pub fn unknown() -> Self {
        let mut entries = [DirectiveOutcome {
            value: Truth::Unknown,
            source: OutcomeSource::Metadata,
        }; 15];
        for d in Directive::JUDGED {
            if !d.is_deterministic() {
                entries[d.index()].source = OutcomeSource::Judge;
            }
        }
        Self { entries }
    }

    pub fn get(&self, d: Directive) -> DirectiveOutcome {
        self.entries[d.index()]
    }

    pub fn value(&self, d: Directive) -> Truth {
        self.entries[d.index()].value
    }

    pub fn is_true(&self, d: Directive) -> bool {
        self.value(d).is_true()
    }

    /// Sets a directive. Judge sources on deterministic directives are
    /// downgraded to metadata.
    pub fn set(&mut self, d: Directive, value: Truth, source: OutcomeSource) {
        let source = if d.is_deterministic() {
            OutcomeSource::Metadata
        } else {
            source
        };
        self.entries[d.index()] = DirectiveOutcome { value, source };
    }

    pub fn iter(&self) -> impl Iterator<Item = (Directive, DirectiveOutcome)> + '_ {
        Directive::ALL.iter().map(move |d| (*d, self.get(*d)))
    }

    /// Signed feature vector: polarity for true directives, 0 otherwise.
    pub fn features(&self) -> [f64; 15] {
        let mut x = [0.0; 15];
        for (i, d) in Directive::ALL.iter().enumerate() {
            if self.is_true(*d) {
                x[i] = d.polarity();
            }
        }
        x
    }
}

impl Default for RuleOutcome {
    fn default() -> Self {
        Self::unknown()
    }
}

impl From<RuleOutcome> for BTreeMap<Directive, DirectiveOutcome> {
    fn from(o: RuleOutcome) -> Self {
        o.iter().collect()
    }
}

impl TryFrom<BTreeMap<Directive, DirectiveOutcome>> for RuleOutcome {
    type Error = String;

    fn try_from(map: BTreeMap<Directive, DirectiveOutcome>) -> Result<Self, Self::Error> {
        let mut out = RuleOutcome::unknown();
        for d in Directive::ALL {
            let o = map.get(&d).ok_or_else(|| format!("missing directive {d}"))?;
            if d.is_deterministic() && o.source != OutcomeSource::Metadata {
                return Err(format!("{d} must come from metadata"));
            }
            out.entries[d.index()] = *o;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Benign,
    SuspectedThreat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub rule: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenignityReport {
    pub pair: CandidatePair,
    pub outcomes: RuleOutcome,
    pub risk_score: f64,
    pub verdict: Verdict,
    pub explanation: Vec<Explanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleWeights {
    pub weights: BTreeMap<Directive, f64>,
    pub decision_threshold: f64,
    pub bias: f64,
}

impl Default for RuleWeights {
    fn default() -> Self {
        let weights = Directive::ALL
            .iter()
            .map(|d| {
                let w = match d {
                    Directive::HasDistinctPurpose | Directive::HasSuspiciousIntent => 2.0,
                    _ => 1.0,
                };
                (*d, w)
            })
            .collect();
        Self {
            weights,
            decision_threshold: 0.5,
            bias: 0.0,
        }
    }
}

impl RuleWeights {
    /// Weights in `Directive::ALL` order; missing entries count as 0.
    pub fn vector(&self) -> [f64; 15] {
        let mut w = [0.0; 15];
        for (i, d) in Directive::ALL.iter().enumerate() {
            w[i] = self.weights.get(d).copied().unwrap_or(0.0);
        }
        w
    }

    pub fn from_vector(w: &[f64; 15], bias: f64, decision_threshold: f64) -> Self {
        Self {
            weights: Directive::ALL.iter().copied().zip(w.iter().copied()).collect(),
            decision_threshold,
            bias,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(format!("decision_threshold {} outside (0, 1)", self.decision_threshold));
        }
        if !self.bias.is_finite() {
            return Err("bias must be finite".into());
        }
        for (d, w) in &self.weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(format!("weight for {d} must be finite and non-negative, got {w}"));
            }
        }
        Ok(())
    }
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// logistic(bias + sum of w_d * x_d) with x_d the signed directive features.
pub fn risk_score(outcomes: &RuleOutcome, weights: &RuleWeights) -> f64 {
    let x = outcomes.features();
    let w = weights.vector();
    let z = weights.bias + x.iter().zip(w.iter()).map(|(x, w)| x * w).sum::<f64>();
    logistic(z)
}

/// Metadata-only rules: R4, R6, R7 (length), R12, R13, R14, R15.
/// The judge directives stay unknown.
pub fn deterministic_checks(
    pair: &CandidatePair,
    store: &MetadataStore,
    allow_lists: &AllowLists,
    now: DateTime<Utc>,
) -> RuleOutcome {
    let suspect = store.get_metadata(&pair.suspect);
    let target = store.get_metadata(&pair.target);
    let mut out = RuleOutcome::unknown();
    let m = OutcomeSource::Metadata;

    out.set(Directive::ActiveDevelopment, suspect.map(|s| is_active(s, now)).into(), m);
    out.set(Directive::OverlappedMaintainers, maintainers_overlap(suspect, target), m);
    out.set(
        Directive::NameLengthUnrelated,
        name_length_unrelated(&pair.suspect.search_key(), &pair.target.search_key()).into(),
        m,
    );
    let relocated = suspect.map(|s| {
        s.relocation_target
            .as_ref()
            .is_some_and(|r| r.same_package(&pair.target))
    });
    out.set(Directive::IsRelocatedPackage, relocated.into(), m);

    let org = pair
        .suspect
        .namespace
        .as_deref()
        .is_some_and(|ns| allow_lists.has_organization(ns));
    out.set(Directive::OrgAllowlisted, org.into(), m);

    let mirror = match (&pair.suspect.domain, &pair.target.domain) {
        (Some(a), Some(b)) if pair.suspect.registry == RegistryId::Golang => {
            !a.eq_ignore_ascii_case(b) && allow_lists.has_mirror_domain(a)
        }
        _ => false,
    };
    out.set(Directive::MirrorDomain, mirror.into(), m);

    let verified = if pair.suspect.registry == RegistryId::Nuget {
        suspect.map(|s| s.verified_prefix).into()
    } else {
        Truth::False
    };
    out.set(Directive::VerifiedPrefix, verified, m);
    out
}

pub fn is_active(meta: &PackageMetadata, now: DateTime<Utc>) -> bool {
    now - meta.last_updated_at <= Duration::days(ACTIVE_WINDOW_DAYS) || meta.versions.len() > ACTIVE_MIN_VERSIONS
}

/// True when |a| and |b| differ by more than 30% of the longer length.
pub fn name_length_unrelated(a: &str, b: &str) -> bool {
    let (la, lb) = (a.chars().count(), b.chars().count());
    let longest = la.max(lb);
    if longest == 0 {
        return false;
    }
    la.abs_diff(lb) as f64 / longest as f64 > LENGTH_RATIO_MAX
}

fn maintainers_overlap(suspect: Option<&PackageMetadata>, target: Option<&PackageMetadata>) -> Truth {
    let (Some(s), Some(t)) = (suspect, target) else {
        return Truth::Unknown;
    };
    if s.maintainers.is_empty() || t.maintainers.is_empty() {
        return Truth::Unknown;
    }
    let ids: BTreeSet<String> = s.maintainers.iter().map(|m| m.trim().to_lowercase()).collect();
    t.maintainers
        .iter()
        .any(|m| ids.contains(&m.trim().to_lowercase()))
        .into()
}

/// Lowercased alphanumeric runs of a text.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Word-set Jaccard similarity; `None` when either side has no words.
pub fn token_jaccard(a: &str, b: &str) -> Option<f64> {
    let ta: BTreeSet<String> = words(a).into_iter().collect();
    let tb: BTreeSet<String> = words(b).into_iter().collect();
    if ta.is_empty() || tb.is_empty() {
        return None;
    }
    let inter = ta.intersection(&tb).count();
    let union = ta.union(&tb).count();
    Some(inter as f64 / union as f64)
}

/// Applies short-circuit rules, then the score threshold.
pub fn verdict(pair: &CandidatePair, outcomes: &RuleOutcome, score: f64, threshold: f64) -> BenignityReport {
    let mut explanation: Vec<Explanation> = outcomes
        .iter()
        .filter(|(_, o)| o.value.is_true())
        .map(|(d, o)| Explanation {
            rule: d.rule_id().to_string(),
            reason: reason(d, o.source),
        })
        .collect();

    let benign_rule = Directive::ALL
        .into_iter()
        .find(|d| d.short_circuits_benign() && outcomes.is_true(*d));
    let verdict = if let Some(d) = benign_rule {
        explanation.push(Explanation {
            rule: d.rule_id().to_string(),
            reason: format!("{d} holds, so the pair is benign regardless of score"),
        });
        Verdict::Benign
    } else if outcomes.is_true(Directive::HasSuspiciousIntent) && !outcomes.is_true(Directive::HasDistinctPurpose) {
        explanation.push(Explanation {
            rule: Directive::HasSuspiciousIntent.rule_id().to_string(),
            reason: "suspicious intent without a distinct purpose".to_string(),
        });
        Verdict::SuspectedThreat
    } else if score >= threshold {
        explanation.push(Explanation {
            rule: "score".to_string(),
            reason: format!("risk score {score:.3} is at or above threshold {threshold:.3}"),
        });
        Verdict::SuspectedThreat
    } else {
        explanation.push(Explanation {
            rule: "score".to_string(),
            reason: format!("risk score {score:.3} is below threshold {threshold:.3}"),
        });
        Verdict::Benign
    };

    BenignityReport {
        pair: pair.clone(),
        outcomes: outcomes.clone(),
        risk_score: score,
        verdict,
        explanation,
    }
}

fn reason(d: Directive, source: OutcomeSource) -> String {
    let text = match d {
        Directive::ObviousNotTyposquat => "names and purposes are clearly distinct",
        Directive::HasDistinctPurpose => "the packages serve different purposes",
        Directive::IsFork => "suspect presents itself as a fork or variant",
        Directive::ActiveDevelopment => "suspect was updated recently or has many releases",
        Directive::NoReadme => "suspect lacks a usable readme",
        Directive::OverlappedMaintainers => "the packages share a maintainer",
        Directive::IsAdversarialName => "names are confusingly similar",
        Directive::IsKnownMaintainer => "suspect is published by a recognized maintainer",
        Directive::HasSuspiciousIntent => "suspect mimics the target's content under different maintainers",
        Directive::IsTest => "suspect is a test or experiment package",
        Directive::IsRelocatedPackage => "suspect is a relocation of the target",
        Directive::OrgAllowlisted => "suspect namespace is an allow-listed organization",
        Directive::MirrorDomain => "suspect domain is a recognized mirror",
        Directive::VerifiedPrefix => "suspect holds a verified name prefix",
        Directive::NameLengthUnrelated => "name lengths differ by more than 30%",
    };
    match source {
        OutcomeSource::Metadata => text.to_string(),
        OutcomeSource::Judge => format!("{text} (judge)"),
        OutcomeSource::HeuristicFallback => format!("{text} (heuristic fallback)"),
    }
}

/// Runs deterministic checks and a judge over candidate pairs.
pub struct BenignityFilter {
    pub weights: RuleWeights,
    judge: Box<dyn Judge>,
    fallback: HeuristicJudge,
    /// Upper bound on concurrent judge calls.
    pub parallelism: usize,
}

impl BenignityFilter {
    pub fn new(weights: RuleWeights, judge: Box<dyn Judge>, fallback: HeuristicJudge) -> Self {
        Self {
            weights,
            judge,
            fallback,
            parallelism: 4,
        }
    }

    /// Offline filter using the heuristic judge only.
    pub fn heuristic(weights: RuleWeights, config: HeuristicConfig) -> Self {
        Self::new(
            weights,
            Box::new(HeuristicJudge::new(config.clone())),
            HeuristicJudge::new(config),
        )
    }

    pub fn outcomes(&self, pair: &CandidatePair, store: &MetadataStore, now: DateTime<Utc>) -> RuleOutcome {
        let mut out = deterministic_checks(pair, store, store.allow_lists(), now);
        let suspect = store.get_metadata(&pair.suspect);
        let target = store.get_metadata(&pair.target);
        let request = JudgeRequest::new(pair, suspect, target);
        let ctx = JudgeContext {
            pair,
            suspect,
            target,
            deterministic: &out,
        };
        let (response, source) = match self.judge.judge(&request, &ctx) {
            Ok(r) => (r, OutcomeSource::Judge),
            Err(JudgeError::Unavailable(msg)) => {
                log::warn!("judge unavailable for {}: {msg}; using heuristic", pair.suspect);
                let r = self
                    .fallback
                    .judge(&request, &ctx)
                    .unwrap_or_else(|_| JudgeResponse::unknown());
                (r, OutcomeSource::HeuristicFallback)
            }
            Err(JudgeError::MalformedOutput(msg)) => {
                log::warn!("malformed judge output for {}: {msg}", pair.suspect);
                (JudgeResponse::unknown(), OutcomeSource::Judge)
            }
        };
        for d in Directive::JUDGED {
            let answer = response.get(d);
            if d == Directive::IsRelocatedPackage && out.is_true(d) {
                continue;
            }
            out.set(d, answer, source);
        }
        out
    }

    pub fn evaluate_pair(&self, pair: &CandidatePair, store: &MetadataStore, now: DateTime<Utc>) -> BenignityReport {
        let outcomes = self.outcomes(pair, store, now);
        let score = risk_score(&outcomes, &self.weights);
        verdict(pair, &outcomes, score, self.weights.decision_threshold)
    }

    /// Evaluates pairs with at most `parallelism` concurrent judge calls.
    /// Output order matches input order.
    pub fn evaluate_pairs(
        &self,
        pairs: &[CandidatePair],
        store: &MetadataStore,
        now: DateTime<Utc>,
    ) -> Vec<BenignityReport> {
        let workers = self.parallelism.max(1).min(pairs.len());
        if workers <= 1 || self.judge.is_heuristic() {
            return pairs.iter().map(|p| self.evaluate_pair(p, store, now)).collect();
        }
        let chunk = pairs.len().div_ceil(workers);
        thread::scope(|s| {
            let handles: Vec<_> = pairs
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(|p| self.evaluate_pair(p, store, now)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("judge worker panicked"))
                .collect()
        })
    }
}

#[cfg(test)]
mod tests;
