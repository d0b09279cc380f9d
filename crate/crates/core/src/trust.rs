//! Popularity-based trust. Download registries compare weekly downloads;
//! Maven and Golang use an average ranking where lower is more popular.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{StoreError, TrustError};
use crate::registry::{PackageRef, RegistryId};
use crate::store::{MetadataStore, PackageMetadata};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustPolicy {
    pub download_threshold: BTreeMap<RegistryId, u64>,
    pub ranking_threshold: BTreeMap<RegistryId, f64>,
    pub download_dominance: f64,
    pub ranking_dominance: f64,
}

impl Default for TrustPolicy {
    fn default() -> Self {
        let download_threshold = BTreeMap::from([
            (RegistryId::Npm, 5000),
            (RegistryId::Pypi, 5000),
            (RegistryId::Rubygems, 5000),
            (RegistryId::Nuget, 5000),
            (RegistryId::Huggingface, 1000),
        ]);
        let ranking_threshold =
            BTreeMap::from([(RegistryId::Maven, 10.0), (RegistryId::Golang, 4.0)]);
        TrustPolicy {
            download_threshold,
            ranking_threshold,
            download_dominance: 10.0,
            ranking_dominance: 2.0,
        }
    }
}

impl TrustPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.download_threshold.values().any(|&t| t == 0) {
            return Err("download thresholds must be > 0".into());
        }
        if self.ranking_threshold.values().any(|&t| !(t > 0.0)) {
            return Err("ranking thresholds must be > 0".into());
        }
        if !(self.download_dominance > 1.0 && self.ranking_dominance > 1.0) {
            return Err("dominance factors must be > 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustSignal {
    Downloads,
    Ranking,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustVerdict {
    pub trusted: bool,
    pub signal_used: TrustSignal,
    pub signal_value: Option<f64>,
}

impl TrustVerdict {
    const UNTRUSTED: TrustVerdict = TrustVerdict {
        trusted: false,
        signal_used: TrustSignal::None,
        signal_value: None,
    };
}

pub fn is_trusted(meta: &PackageMetadata, policy: &TrustPolicy) -> TrustVerdict {
    let registry = meta.package.registry;
    if registry.uses_downloads() {
        match (meta.weekly_downloads, policy.download_threshold.get(&registry)) {
            (Some(d), Some(&threshold)) => TrustVerdict {
                trusted: d >= threshold,
                signal_used: TrustSignal::Downloads,
                signal_value: Some(d as f64),
            },
            _ => TrustVerdict::UNTRUSTED,
        }
    } else {
        match (meta.avg_ranking, policy.ranking_threshold.get(&registry)) {
            (Some(r), Some(&threshold)) => TrustVerdict {
                trusted: r <= threshold,
                signal_used: TrustSignal::Ranking,
                signal_value: Some(r),
            },
            _ => TrustVerdict::UNTRUSTED,
        }
    }
}

/// Higher-is-better popularity score derived from an average ranking.
pub fn ranking_score(avg_ranking: f64) -> f64 {
    1.0 / (1.0 + avg_ranking)
}

/// Whether `target` dominates `suspect` in popularity: ten times the
/// downloads, or twice the ranking score. The registry's own signal is
/// used when both packages have it, otherwise the other one.
pub fn is_more_trusted(
    target: &PackageMetadata,
    suspect: &PackageMetadata,
    policy: &TrustPolicy,
) -> Result<bool, TrustError> {
    let by_downloads = match (target.weekly_downloads, suspect.weekly_downloads) {
        (Some(t), Some(s)) => Some(t > s && t as f64 >= policy.download_dominance * s as f64),
        _ => None,
    };
    let by_ranking = match (target.avg_ranking, suspect.avg_ranking) {
        (Some(t), Some(s)) => Some(ranking_score(t) >= policy.ranking_dominance * ranking_score(s)),
        _ => None,
    };
    let decision = if target.package.registry.uses_downloads() {
        by_downloads.or(by_ranking)
    } else {
        by_ranking.or(by_downloads)
    };
    decision.ok_or(TrustError::SignalMissing)
}

/// Sort key: more popular first.
pub fn popularity(meta: &PackageMetadata) -> f64 {
    if meta.package.registry.uses_downloads() {
        meta.weekly_downloads.map_or(-1.0, |d| d as f64)
    } else {
        meta.avg_ranking.map_or(-1.0, ranking_score)
    }
}

/// Every trusted, non-denied package of a registry, most popular first.
pub fn trusted_set(
    store: &MetadataStore,
    registry: RegistryId,
    policy: &TrustPolicy,
) -> Result<Vec<PackageRef>, StoreError> {
    Ok(trusted_metadata(store, registry, policy)?
        .into_iter()
        .map(|m| m.package.clone())
        .collect())
}

pub fn trusted_metadata<'a>(
    store: &'a MetadataStore,
    registry: RegistryId,
    policy: &TrustPolicy,
) -> Result<Vec<&'a PackageMetadata>, StoreError> {
    if store.snapshot(registry).is_none() {
        return Err(StoreError::NoSnapshot(registry));
    }
    let mut out: Vec<&PackageMetadata> = store
        .packages_in(registry)
        .filter(|m| !store.is_denied(&m.package) && is_trusted(m, policy).trusted)
        .collect();
    out.sort_by(|a, b| {
        popularity(b)
            .total_cmp(&popularity(a))
            .then_with(|| a.package.raw.cmp(&b.package.raw))
    });
    Ok(out)
}
