//! Service configuration. Every section is optional; missing keys take the
//! library defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use lookalike_core::ann::HnswParams;
use lookalike_core::benignity::{Directive, ExternalJudgeConfig, HeuristicConfig, RuleWeights};
use lookalike_core::embedder::TrainParams;
use lookalike_core::registry::RegistryId;
use lookalike_core::search::SearchThresholds;
use lookalike_core::trust::TrustPolicy;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub trust: TrustPolicy,
    pub thresholds: SearchThresholds,
    pub embedding: TrainParams,
    pub index: HnswParams,
    pub judge: JudgeConfig,
    pub weights: WeightsConfig,
    pub scan: ScanConfig,
    pub server: ServerConfig,
}

/// File locations. Relative paths resolve against `root`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub root: PathBuf,
    pub store: PathBuf,
    pub model: PathBuf,
    pub index_dir: PathBuf,
    pub alerts: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            store: PathBuf::from("store.jsonl"),
            model: PathBuf::from("names.model"),
            index_dir: PathBuf::from("index"),
            alerts: PathBuf::from("alerts.jsonl"),
        }
    }
}

impl DataConfig {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn store_path(&self) -> PathBuf {
        self.resolve(&self.store)
    }

    pub fn model_path(&self) -> PathBuf {
        self.resolve(&self.model)
    }

    pub fn index_path(&self, registry: RegistryId) -> PathBuf {
        self.resolve(&self.index_dir).join(format!("{registry}.idx"))
    }

    pub fn alerts_path(&self) -> PathBuf {
        self.resolve(&self.alerts)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    #[default]
    Heuristic,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub kind: JudgeKind,
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub retries: usize,
    pub parallelism: usize,
    /// Replacement word lists for the heuristic judge, one entry per line.
    pub test_lexicon: Option<PathBuf>,
    pub reputable_maintainers: Option<PathBuf>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            kind: JudgeKind::Heuristic,
            endpoint: String::new(),
            model: String::new(),
            timeout_secs: 30,
            retries: 1,
            parallelism: 4,
            test_lexicon: None,
            reputable_maintainers: None,
        }
    }
}

impl JudgeConfig {
    pub fn heuristic_config(&self) -> Result<HeuristicConfig, ServiceError> {
        if self.test_lexicon.is_none() && self.reputable_maintainers.is_none() {
            return Ok(HeuristicConfig::default());
        }
        let defaults = HeuristicConfig::default();
        let read = |p: &Option<PathBuf>, fallback: &std::collections::BTreeSet<String>| match p {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display()))),
            None => Ok(fallback.iter().cloned().collect::<Vec<_>>().join("\n")),
        };
        let lexicon = read(&self.test_lexicon, &defaults.test_lexicon)?;
        let reputable = read(&self.reputable_maintainers, &defaults.reputable_maintainers)?;
        Ok(HeuristicConfig::from_texts(&lexicon, &reputable))
    }

    pub fn external_config(&self) -> Result<ExternalJudgeConfig, ServiceError> {
        if self.endpoint.is_empty() {
            return Err(ServiceError::Config("judge.endpoint is required for the external judge".into()));
        }
        let mut c = ExternalJudgeConfig::new(self.endpoint.clone(), self.model.clone());
        c.timeout = Duration::from_secs(self.timeout_secs.max(1));
        c.retries = self.retries;
        Ok(c)
    }
}

/// Rule weights: defaults, optionally replaced by a fitted weights file,
/// then overridden key by key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub file: Option<PathBuf>,
    pub decision_threshold: Option<f64>,
    pub bias: Option<f64>,
    pub directives: BTreeMap<Directive, f64>,
}

impl WeightsConfig {
    pub fn resolve(&self) -> Result<RuleWeights, ServiceError> {
        let mut w = match &self.file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str::<RuleWeights>(&text)
                    .map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?
            }
            None => RuleWeights::default(),
        };
        if let Some(t) = self.decision_threshold {
            w.decision_threshold = t;
        }
        if let Some(b) = self.bias {
            w.bias = b;
        }
        for (d, v) in &self.directives {
            w.weights.insert(*d, *v);
        }
        w.validate().map_err(ServiceError::Config)?;
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub workers: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, ServiceError> {
        let config: Config = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.trust.validate().map_err(ServiceError::Config)?;
        self.thresholds.validate().map_err(ServiceError::Config)?;
        self.embedding
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        self.index
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        self.weights.resolve()?;
        if self.scan.workers == 0 {
            return Err(ServiceError::Config("scan.workers must be >= 1".into()));
        }
        Ok(())
    }
}
