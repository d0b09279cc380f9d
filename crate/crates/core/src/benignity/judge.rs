use std::collections::{BTreeMap, BTreeSet};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{name_length_unrelated, token_jaccard, words, Directive, RuleOutcome, Truth};
use crate::error::JudgeError;
use crate::registry::RegistryId;
use crate::search::CandidatePair;
use crate::store::PackageMetadata;

/// Metadata bodies sent to a judge are cut to this many bytes.
pub const METADATA_LIMIT: usize = 4096;

const SYSTEM_TEMPLATE: &str = include_str!("../../data/judge_system.txt");
const USER_TEMPLATE: &str = include_str!("../../data/judge_user.txt");
const TEST_LEXICON: &str = include_str!("../../data/test_lexicon.txt");
const REPUTABLE_MAINTAINERS: &str = include_str!("../../data/reputable_maintainers.txt");

const README_MIN_CHARS: usize = 40;
const FORK_JACCARD: f64 = 0.8;
const DISTINCT_JACCARD: f64 = 0.2;
const DISTINCT_MIN_TOKENS: usize = 5;
const NEAR_IDENTICAL_JACCARD: f64 = 0.9;
const ADVERSARIAL_MIN_SCORE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub typo_name: String,
    pub typo_metadata: String,
    pub legit_name: String,
    pub legit_metadata: String,
    pub registry: RegistryId,
}

impl JudgeRequest {
    pub fn new(pair: &CandidatePair, suspect: Option<&PackageMetadata>, target: Option<&PackageMetadata>) -> Self {
        Self {
            typo_name: pair.suspect.raw.clone(),
            typo_metadata: metadata_text(suspect),
            legit_name: pair.target.raw.clone(),
            legit_metadata: metadata_text(target),
            registry: pair.suspect.registry,
        }
    }
}

/// Compact JSON rendering of the fields a judge needs, truncated to
/// `METADATA_LIMIT` bytes on a character boundary.
pub fn metadata_text(meta: Option<&PackageMetadata>) -> String {
    let Some(m) = meta else {
        return "(no metadata available)".to_string();
    };
    let body = json!({
        "name": m.package.raw,
        "description": m.description,
        "license": m.license,
        "maintainers": m.maintainers,
        "repository": m.repository_url,
        "versions": m.versions.len(),
        "last_updated": m.last_updated_at.to_rfc3339(),
        "readme": m.readme,
    })
    .to_string();
    truncate_bytes(&body, METADATA_LIMIT).to_string()
}

fn truncate_bytes(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

/// Answers to the nine judged directives; absent answers are unknown.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub answers: BTreeMap<Directive, bool>,
}

impl JudgeResponse {
    pub fn unknown() -> Self {
        Self::default()
    }

    pub fn get(&self, d: Directive) -> Truth {
        self.answers.get(&d).copied().into()
    }
}

/// Inputs available to a judge besides the prompt fields.
pub struct JudgeContext<'a> {
    pub pair: &'a CandidatePair,
    pub suspect: Option<&'a PackageMetadata>,
    pub target: Option<&'a PackageMetadata>,
    pub deterministic: &'a RuleOutcome,
}

pub trait Judge: Send + Sync {
    fn judge(&self, request: &JudgeRequest, ctx: &JudgeContext<'_>) -> Result<JudgeResponse, JudgeError>;

    /// True for judges that make no network calls.
    fn is_heuristic(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicConfig {
    pub test_lexicon: BTreeSet<String>,
    pub reputable_maintainers: BTreeSet<String>,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self::from_texts(TEST_LEXICON, REPUTABLE_MAINTAINERS)
    }
}

impl HeuristicConfig {
    /// Parses one entry per line; blank lines and `#` comments are skipped.
    pub fn from_texts(lexicon: &str, reputable: &str) -> Self {
        Self {
            test_lexicon: word_list(lexicon),
            reputable_maintainers: word_list(reputable),
        }
    }

    fn is_reputable(&self, maintainer: &str) -> bool {
        let id = maintainer.trim().to_lowercase();
        if self.reputable_maintainers.contains(&id) {
            return true;
        }
        if let Some((_, domain)) = id.rsplit_once('@') {
            let label = domain.split('.').next().unwrap_or(domain);
            return self.reputable_maintainers.contains(domain) || self.reputable_maintainers.contains(label);
        }
        false
    }
}

fn word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// Deterministic stand-in for a language-model judge.
#[derive(Debug, Clone, Default)]
pub struct HeuristicJudge {
    pub config: HeuristicConfig,
}

impl HeuristicJudge {
    pub fn new(config: HeuristicConfig) -> Self {
        Self { config }
    }

    fn is_test(&self, pair: &CandidatePair, suspect: Option<&PackageMetadata>) -> Truth {
        let hit = |text: &str| {
            words(text).iter().any(|w| self.config.test_lexicon.contains(w))
        };
        if hit(&pair.suspect.raw) {
            return Truth::True;
        }
        match suspect.and_then(|m| m.description.as_deref()) {
            Some(d) => hit(d).into(),
            None => Truth::Unknown,
        }
    }
}

fn text_of(meta: Option<&PackageMetadata>, readme: bool) -> Option<&str> {
    let m = meta?;
    let t = if readme { m.readme.as_deref() } else { m.description.as_deref() };
    t.filter(|s| !s.trim().is_empty())
}

fn mentions_fork(meta: Option<&PackageMetadata>) -> bool {
    [true, false]
        .into_iter()
        .filter_map(|r| text_of(meta, r))
        .any(|t| t.to_lowercase().contains("fork of"))
}

impl Judge for HeuristicJudge {
    fn judge(&self, _request: &JudgeRequest, ctx: &JudgeContext<'_>) -> Result<JudgeResponse, JudgeError> {
        let (s, t) = (ctx.suspect, ctx.target);
        let mut answers = BTreeMap::new();

        if let Some(m) = s {
            let short = m.readme.as_deref().map_or(true, |r| r.trim().chars().count() < README_MIN_CHARS);
            answers.insert(Directive::NoReadme, short);
        }

        let readme_j = text_of(s, true).zip(text_of(t, true)).and_then(|(a, b)| token_jaccard(a, b));
        let desc_j = text_of(s, false).zip(text_of(t, false)).and_then(|(a, b)| token_jaccard(a, b));
        if mentions_fork(s) || readme_j.is_some_and(|j| j > FORK_JACCARD) || desc_j.is_some_and(|j| j > FORK_JACCARD) {
            answers.insert(Directive::IsFork, true);
        } else if s.is_some() {
            answers.insert(Directive::IsFork, false);
        }

        if let Some(tr) = self.is_test(ctx.pair, s).into_option() {
            answers.insert(Directive::IsTest, tr);
        }

        let long_enough = |m: Option<&PackageMetadata>| {
            text_of(m, false).is_some_and(|d| words(d).len() >= DISTINCT_MIN_TOKENS)
        };
        let distinct = match desc_j {
            Some(j) if long_enough(s) && long_enough(t) => Some(j < DISTINCT_JACCARD),
            _ => None,
        };
        if let Some(d) = distinct {
            answers.insert(Directive::HasDistinctPurpose, d);
        }

        let length_gap = name_length_unrelated(&ctx.pair.suspect.search_key(), &ctx.pair.target.search_key());
        let adversarial = ctx.pair.composite.max_score >= ADVERSARIAL_MIN_SCORE && !length_gap;
        answers.insert(Directive::IsAdversarialName, adversarial);

        match distinct {
            Some(true) if !adversarial => {
                answers.insert(Directive::ObviousNotTyposquat, true);
            }
            Some(false) => {
                answers.insert(Directive::ObviousNotTyposquat, false);
            }
            _ if adversarial => {
                answers.insert(Directive::ObviousNotTyposquat, false);
            }
            _ => {}
        }

        if let Some(j) = desc_j {
            let shared = ctx.deterministic.value(Directive::OverlappedMaintainers);
            let differs = s.is_some_and(|m| !m.maintainers.is_empty()) && shared != Truth::True;
            answers.insert(Directive::HasSuspiciousIntent, j >= NEAR_IDENTICAL_JACCARD && differs);
        }

        if let Some(m) = s {
            answers.insert(
                Directive::IsKnownMaintainer,
                m.maintainers.iter().any(|id| self.config.is_reputable(id)),
            );
        }

        if let Some(r) = ctx.deterministic.value(Directive::IsRelocatedPackage).into_option() {
            answers.insert(Directive::IsRelocatedPackage, r);
        }
        Ok(JudgeResponse { answers })
    }

    fn is_heuristic(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub system: String,
    pub user: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            system: SYSTEM_TEMPLATE.to_string(),
            user: USER_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn render_user(&self, r: &JudgeRequest) -> String {
        self.user
            .replace("{typo_name}", &r.typo_name)
            .replace("{typo_metadata}", &r.typo_metadata)
            .replace("{legit_name}", &r.legit_name)
            .replace("{legit_metadata}", &r.legit_metadata)
            .replace("{registry}", r.registry.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalJudgeConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    pub retries: usize,
    pub templates: PromptTemplates,
}

impl ExternalJudgeConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout: Duration::from_secs(30),
            retries: 1,
            templates: PromptTemplates::default(),
        }
    }
}

/// Posts `{model, system, user}` to a completion endpoint and scans the
/// reply for TRUE/FALSE answers.
pub struct ExternalJudge {
    config: ExternalJudgeConfig,
    client: reqwest::blocking::Client,
}

impl ExternalJudge {
    pub fn new(config: ExternalJudgeConfig) -> Result<Self, JudgeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| JudgeError::Unavailable(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn post_once(&self, body: &Value) -> Result<String, JudgeError> {
        let resp = self
            .client
            .post(&self.config.endpoint)
            .json(body)
            .send()
            .map_err(|e| JudgeError::Unavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(JudgeError::Unavailable(format!("endpoint returned {status}")));
        }
        resp.text().map_err(|e| JudgeError::Unavailable(e.to_string()))
    }
}

impl Judge for ExternalJudge {
    fn judge(&self, request: &JudgeRequest, _ctx: &JudgeContext<'_>) -> Result<JudgeResponse, JudgeError> {
        let body = json!({
            "model": self.config.model,
            "system": self.config.templates.system,
            "user": self.config.templates.render_user(request),
        });
        let mut last = JudgeError::Unavailable("no attempt made".into());
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(200));
            }
            match self.post_once(&body) {
                Ok(text) => return parse_judge_output(&completion_text(&text)),
                Err(e) => {
                    log::debug!("judge attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(last)
    }
}

/// Pulls the completion out of common JSON response shapes; anything else is
/// treated as plain text.
fn completion_text(body: &str) -> String {
    let Ok(v) = serde_json::from_str::<Value>(body) else {
        return body.to_string();
    };
    let candidates = [
        v.pointer("/output"),
        v.pointer("/text"),
        v.pointer("/content"),
        v.pointer("/completion"),
        v.pointer("/response"),
        v.pointer("/choices/0/message/content"),
        v.pointer("/choices/0/text"),
        v.pointer("/content/0/text"),
    ];
    let found = candidates.into_iter().flatten().find_map(Value::as_str).map(str::to_string);
    found.unwrap_or_else(|| body.to_string())
}

/// Scans lines for a directive name followed by TRUE or FALSE. Errors when
/// no directive can be read at all.
pub fn parse_judge_output(text: &str) -> Result<JudgeResponse, JudgeError> {
    let mut answers = BTreeMap::new();
    for line in text.lines() {
        let lower = line.to_lowercase();
        for d in Directive::JUDGED {
            let Some(pos) = lower.find(d.as_str()) else {
                continue;
            };
            let rest = &lower[pos + d.as_str().len()..];
            let answer = rest
                .split(|c: char| !c.is_ascii_alphabetic())
                .find_map(|w| match w {
                    "true" => Some(true),
                    "false" => Some(false),
                    _ => None,
                });
            if let Some(a) = answer {
                answers.entry(d).or_insert(a);
            }
        }
    }
    if answers.is_empty() {
        let preview: String = text.chars().take(80).collect();
        return Err(JudgeError::MalformedOutput(preview));
    }
    Ok(JudgeResponse { answers })
}
