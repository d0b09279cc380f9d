//! Detection of confusingly named packages across software registries.

pub mod ann;
pub mod benignity;
pub mod distance;
pub mod embedder;
pub mod error;
pub mod phonetic;
pub mod registry;
pub mod search;
pub mod similarity;
pub mod store;
pub mod trust;
