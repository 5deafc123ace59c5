//! Session-based recommenders behind a common fit/predict contract.
//!
//! * [`rules`]: association rules (AR) and sequential rules (SR).
//! * [`index`]: the inverted session index and per-item statistics shared by
//!   the nearest-neighbor family.
//! * [`knn`]: SKNN, V-SKNN, STAN and VSTAN scoring.

pub mod index;
pub mod knn;
pub mod rules;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ItemId, SessionSet, Timestamp};

pub use index::{ItemStats, NeighborIndex};
pub use knn::{KnnConfig, KnnModel, KnnVariant, Neighbor, SampleSize, Similarity, Weighting};
pub use rules::{RuleTable, SrConfig, SrDecay};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("training data is empty")]
    EmptyTraining,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredItem {
    pub item: ItemId,
    pub score: f64,
}

/// Ranked, duplicate-free item list. Scores are non-increasing and ties are
/// ordered by ascending item id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Recommendation(Vec<ScoredItem>);

impl Recommendation {
    pub fn empty() -> Self {
        Recommendation(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[ScoredItem] {
        &self.0
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.0.iter().map(|s| s.item)
    }

    pub fn item_ids(&self) -> Vec<ItemId> {
        self.items().collect()
    }

    /// Restricts the list to its first `k` entries.
    pub fn truncated(&self, k: usize) -> &[ScoredItem] {
        &self.0[..self.0.len().min(k)]
    }

    /// Wraps an already ranked list.
    pub(crate) fn from_ranked(items: Vec<ScoredItem>) -> Self {
        Recommendation(items)
    }
}

impl<'a> IntoIterator for &'a Recommendation {
    type Item = &'a ScoredItem;
    type IntoIter = std::slice::Iter<'a, ScoredItem>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Ranking order: score descending, then item id ascending.
pub fn ranking_order(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.score.total_cmp(&a.score).then(a.item.cmp(&b.item))
}

/// Keeps positive scores, sorts them by [`ranking_order`] and returns the
/// first `k`. Input items must be distinct.
pub fn rank_topk(scores: impl IntoIterator<Item = (ItemId, f64)>, k: usize) -> Recommendation {
    if k == 0 {
        return Recommendation::empty();
    }
    let mut items: Vec<ScoredItem> = scores
        .into_iter()
        .filter(|&(_, s)| s > 0.0 && s.is_finite())
        .map(|(item, score)| ScoredItem { item, score })
        .collect();
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, ranking_order);
        items.truncate(k);
    }
    items.sort_unstable_by(ranking_order);
    Recommendation(items)
}

/// A fitted, immutable recommender.
pub trait Recommender: Send + Sync {
    /// Candidate score table for a session prefix. `now` is the time of the
    /// last revealed event.
    fn scores(&self, prefix: &[ItemId], now: Timestamp) -> Vec<(ItemId, f64)>;

    fn recommend(&self, prefix: &[ItemId], now: Timestamp, k: usize) -> Recommendation {
        rank_topk(self.scores(prefix, now), k)
    }
}

impl<T: Recommender + ?Sized> Recommender for Arc<T> {
    fn scores(&self, prefix: &[ItemId], now: Timestamp) -> Vec<(ItemId, f64)> {
        (**self).scores(prefix, now)
    }

    fn recommend(&self, prefix: &[ItemId], now: Timestamp, k: usize) -> Recommendation {
        (**self).recommend(prefix, now, k)
    }
}

impl<T: Recommender + ?Sized> Recommender for Box<T> {
    fn scores(&self, prefix: &[ItemId], now: Timestamp) -> Vec<(ItemId, f64)> {
        (**self).scores(prefix, now)
    }

    fn recommend(&self, prefix: &[ItemId], now: Timestamp, k: usize) -> Recommendation {
        (**self).recommend(prefix, now, k)
    }
}

pub type FittedModel = Arc<dyn Recommender>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Ar,
    Sr,
    Sknn,
    Vsknn,
    Stan,
    Vstan,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 6] = [
        AlgorithmKind::Ar,
        AlgorithmKind::Sr,
        AlgorithmKind::Sknn,
        AlgorithmKind::Vsknn,
        AlgorithmKind::Stan,
        AlgorithmKind::Vstan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Ar => "ar",
            AlgorithmKind::Sr => "sr",
            AlgorithmKind::Sknn => "sknn",
            AlgorithmKind::Vsknn => "vsknn",
            AlgorithmKind::Stan => "stan",
            AlgorithmKind::Vstan => "vstan",
        }
    }

    pub fn knn_variant(self) -> Option<KnnVariant> {
        match self {
            AlgorithmKind::Sknn => Some(KnnVariant::Sknn),
            AlgorithmKind::Vsknn => Some(KnnVariant::Vsknn),
            AlgorithmKind::Stan => Some(KnnVariant::Stan),
            AlgorithmKind::Vstan => Some(KnnVariant::Vstan),
            AlgorithmKind::Ar | AlgorithmKind::Sr => None,
        }
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AlgorithmKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s) || s.eq_ignore_ascii_case(&k.name().replace("sknn", "-sknn")))
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// A fully specified algorithm with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum AlgorithmConfig {
    Ar,
    Sr(SrConfig),
    Knn(KnnVariant, KnnConfig),
}

impl AlgorithmConfig {
    pub fn kind(&self) -> AlgorithmKind {
        match self {
            AlgorithmConfig::Ar => AlgorithmKind::Ar,
            AlgorithmConfig::Sr(_) => AlgorithmKind::Sr,
            AlgorithmConfig::Knn(v, _) => v.kind(),
        }
    }

    /// Builds a configuration from a parameter table; absent parameters take
    /// their documented defaults.
    pub fn from_params(kind: AlgorithmKind, params: &toml::Table) -> Result<Self, FitError> {
        let invalid = |e: toml::de::Error| FitError::InvalidConfig(format!("{kind}: {}", e.message()));
        let value = toml::Value::Table(params.clone());
        let config = match kind {
            AlgorithmKind::Ar => {
                if let Some(key) = params.keys().next() {
                    return Err(FitError::InvalidConfig(format!("ar: unknown parameter `{key}`")));
                }
                AlgorithmConfig::Ar
            }
            AlgorithmKind::Sr => AlgorithmConfig::Sr(value.try_into().map_err(invalid)?),
            _ => {
                let variant = kind.knn_variant().expect("knn kind");
                let mut cfg: KnnConfig = value.try_into().map_err(invalid)?;
                if !params.contains_key("weighting") {
                    cfg.weighting = variant.default_weighting();
                }
                AlgorithmConfig::Knn(variant, cfg)
            }
        };
        config.validate()?;
        Ok(config)
    }

    /// Canonical parameter table, keys sorted.
    pub fn params(&self) -> toml::Table {
        let value = match self {
            AlgorithmConfig::Ar => return toml::Table::new(),
            AlgorithmConfig::Sr(cfg) => toml::Value::try_from(cfg),
            AlgorithmConfig::Knn(_, cfg) => toml::Value::try_from(cfg),
        };
        match value.expect("config serializes") {
            toml::Value::Table(t) => t,
            _ => unreachable!(),
        }
    }

    /// `key=value` pairs joined by `;`, in key order.
    pub fn params_string(&self) -> String {
        params_to_string(&self.params())
    }

    pub fn validate(&self) -> Result<(), FitError> {
        match self {
            AlgorithmConfig::Ar => Ok(()),
            AlgorithmConfig::Sr(cfg) => cfg.validate(),
            AlgorithmConfig::Knn(_, cfg) => cfg.validate(),
        }
    }

    pub fn fit(&self, train: &SessionSet) -> Result<FittedModel, FitError> {
        self.validate()?;
        if train.is_empty() {
            return Err(FitError::EmptyTraining);
        }
        Ok(match self {
            AlgorithmConfig::Ar => Arc::new(rules::fit_ar(train)),
            AlgorithmConfig::Sr(cfg) => Arc::new(rules::fit_sr_with(train, cfg)),
            AlgorithmConfig::Knn(variant, cfg) => {
                let index = Arc::new(NeighborIndex::build(train));
                Arc::new(KnnModel::new(index, *variant, cfg.clone()))
            }
        })
    }

    /// Like [`fit`](Self::fit), but reuses an index already built on the same
    /// training data for the nearest-neighbor family.
    pub fn fit_with_index(&self, train: &SessionSet, index: &Arc<NeighborIndex>) -> Result<FittedModel, FitError> {
        match self {
            AlgorithmConfig::Knn(variant, cfg) => {
                cfg.validate()?;
                if train.is_empty() {
                    return Err(FitError::EmptyTraining);
                }
                Ok(Arc::new(KnnModel::new(Arc::clone(index), *variant, cfg.clone())))
            }
            _ => self.fit(train),
        }
    }
}

pub fn params_to_string(params: &toml::Table) -> String {
    let mut keys: Vec<&String> = params.keys().collect();
    keys.sort();
    keys.iter()
        .map(|k| format!("{k}={}", value_to_string(&params[k.as_str()])))
        .collect::<Vec<_>>()
        .join(";")
}

fn value_to_string(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        other => other.to_string(),
    }
}
