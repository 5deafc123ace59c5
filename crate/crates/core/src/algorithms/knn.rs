//! Session-based nearest neighbors: SKNN, V-SKNN, STAN and VSTAN.
//!
//! All four variants share one scorer. Given the distinct items `C` of the
//! current prefix (each at the 1-based position `p` of its last occurrence,
//! prefix length `L`) and a neighbor's distinct items `N`:
//!
//! ```text
//! sim(C, N)   = Σ_{i ∈ C∩N} w(p_i) / √(|C|·|N|)       (cosine)
//!             = Σ_{i ∈ C∩N} w(p_i)                     (dot)
//! w(p)        = 1 | p / L | exp((p − L) / λ1)          (constant | linear | exponential)
//! recency     = exp(−max(0, now − end_time) / λ2)      (age in days)
//! proximity   = exp(−|q_i − q_anchor| / λ3)            (positions in the neighbor)
//! score(i)    = idf(i) · Σ_{n ∋ i} sim(n) · proximity(n, i)
//! ```
//!
//! The anchor is the last prefix item; when it does not occur in the
//! neighbor the proximity factor is 1. Sums over items run in ascending item
//! order and sums over neighbors in neighbor rank order, which makes the
//! reductions between variants exact.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::index::NeighborIndex;
use super::{AlgorithmKind, FitError, Recommendation, Recommender};
use crate::corpus::{ItemId, Timestamp, MILLIS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Cosine,
    Dot,
}

/// Weight of a prefix item as a function of its position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Constant,
    Linear,
    Exponential,
}

impl Weighting {
    /// `position` is 1-based, `len` is the prefix length.
    pub fn weight(self, position: usize, len: usize, lambda1: f64) -> f64 {
        match self {
            Weighting::Constant => 1.0,
            Weighting::Linear => position as f64 / len as f64,
            Weighting::Exponential => ((position as f64 - len as f64) / lambda1).exp(),
        }
    }
}

/// Number of most recent candidate sessions considered per prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSize(pub Option<usize>);

impl SampleSize {
    pub const ALL: SampleSize = SampleSize(None);

    pub fn limit(self) -> usize {
        self.0.unwrap_or(usize::MAX)
    }
}

impl fmt::Display for SampleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(m) => write!(f, "{m}"),
            None => f.write_str("all"),
        }
    }
}

impl Serialize for SampleSize {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(m) => s.serialize_u64(m as u64),
            None => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for SampleSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(u64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Count(m) => Ok(SampleSize(Some(m as usize))),
            Repr::Word(w) if w == "all" => Ok(SampleSize::ALL),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "sample_size must be a positive integer or \"all\", got `{w}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnConfig {
    #[serde(default = "default_k")]
    pub k_neighbors: usize,
    #[serde(default = "default_sample")]
    pub sample_size: SampleSize,
    #[serde(default)]
    pub similarity: Similarity,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    /// In days.
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    #[serde(default = "default_lambda3")]
    pub lambda3: f64,
    #[serde(default)]
    pub idf: bool,
}

fn default_k() -> usize {
    100
}
fn default_sample() -> SampleSize {
    SampleSize(Some(1000))
}
fn default_lambda1() -> f64 {
    2.0
}
fn default_lambda2() -> f64 {
    7.0
}
fn default_lambda3() -> f64 {
    2.0
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k_neighbors: default_k(),
            sample_size: default_sample(),
            similarity: Similarity::Cosine,
            weighting: Weighting::Constant,
            lambda1: default_lambda1(),
            lambda2: default_lambda2(),
            lambda3: default_lambda3(),
            idf: false,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: String| Err(FitError::InvalidConfig(m));
        if self.k_neighbors == 0 {
            return bad("k_neighbors must be >= 1".into());
        }
        if self.sample_size.0 == Some(0) {
            return bad("sample_size must be >= 1".into());
        }
        if self.k_neighbors > self.sample_size.limit() {
            return bad(format!(
                "k_neighbors ({}) exceeds sample_size ({})",
                self.k_neighbors, self.sample_size
            ));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if v.is_nan() || v <= 0.0 {
                return bad(format!("{name} must be > 0 (inf disables the decay), got {v}"));
            }
        }
        Ok(())
    }

    /// Exhaustive neighbor search with all decays disabled.
    pub fn unlimited(k_neighbors: usize) -> Self {
        KnnConfig {
            k_neighbors,
            sample_size: SampleSize::ALL,
            lambda1: f64::INFINITY,
            lambda2: f64::INFINITY,
            lambda3: f64::INFINITY,
            ..KnnConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KnnVariant {
    Sknn,
    Vsknn,
    Stan,
    Vstan,
}

impl KnnVariant {
    pub fn kind(self) -> AlgorithmKind {
        match self {
            KnnVariant::Sknn => AlgorithmKind::Sknn,
            KnnVariant::Vsknn => AlgorithmKind::Vsknn,
            KnnVariant::Stan => AlgorithmKind::Stan,
            KnnVariant::Vstan => AlgorithmKind::Vstan,
        }
    }

    pub fn default_weighting(self) -> Weighting {
        match self {
            KnnVariant::Sknn => Weighting::Constant,
            KnnVariant::Vsknn => Weighting::Linear,
            KnnVariant::Stan | KnnVariant::Vstan => Weighting::Exponential,
        }
    }

    /// Prefix weighting actually applied under `cfg`.
    pub fn weighting(self, cfg: &KnnConfig) -> Weighting {
        match self {
            KnnVariant::Sknn => Weighting::Constant,
            KnnVariant::Stan => Weighting::Exponential,
            KnnVariant::Vsknn | KnnVariant::Vstan => cfg.weighting,
        }
    }

    pub fn uses_time_factors(self) -> bool {
        matches!(self, KnnVariant::Stan | KnnVariant::Vstan)
    }

    pub fn uses_idf(self, cfg: &KnnConfig) -> bool {
        matches!(self, KnnVariant::Vsknn | KnnVariant::Vstan) && cfg.idf
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Rank of the training session in the index.
    pub rank: u32,
    pub similarity: f64,
}

/// Distinct prefix items ascending, each with its position weight.
fn weighted_prefix(prefix: &[ItemId], weighting: Weighting, lambda1: f64) -> Vec<(ItemId, f64)> {
    let len = prefix.len();
    let mut last: Vec<(ItemId, usize)> = prefix.iter().enumerate().map(|(p, &i)| (i, p + 1)).collect();
    last.sort_by_key(|&(i, p)| (i, std::cmp::Reverse(p)));
    last.dedup_by_key(|&mut (i, _)| i);
    last.into_iter()
        .map(|(i, p)| (i, weighting.weight(p, len, lambda1)))
        .collect()
}

fn age_days(now: Timestamp, end_time: Timestamp) -> f64 {
    (now - end_time).max(0) as f64 / MILLIS_PER_DAY as f64
}

/// Neighbor ordering: similarity descending, then more recent end time, then
/// ascending session id.
fn neighbor_order(index: &NeighborIndex, a: &Neighbor, b: &Neighbor) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| index.end_time(b.rank).cmp(&index.end_time(a.rank)))
        .then_with(|| index.session_id(a.rank).cmp(&index.session_id(b.rank)))
}

/// Most similar training sessions for a prefix.
///
/// Candidates are the `sample_size` most recent sessions sharing at least one
/// item with the prefix; zero-similarity candidates are dropped and the best
/// `k_neighbors` returned in neighbor order.
pub fn find_neighbors(
    index: &NeighborIndex,
    prefix: &[ItemId],
    cfg: &KnnConfig,
    variant: KnnVariant,
    now: Timestamp,
) -> Vec<Neighbor> {
    if prefix.is_empty() {
        return Vec::new();
    }
    let weighted = weighted_prefix(prefix, variant.weighting(cfg), cfg.lambda1);
    let distinct: Vec<ItemId> = weighted.iter().map(|&(i, _)| i).collect();
    let candidates = index.recent_candidates(&distinct, cfg.sample_size.limit());

    let mut neighbors: Vec<Neighbor> = candidates
        .into_iter()
        .filter_map(|rank| {
            let items = index.session_items(rank);
            let overlap = weighted_overlap(&weighted, items);
            let mut sim = match cfg.similarity {
                Similarity::Cosine => overlap / ((weighted.len() * items.len()) as f64).sqrt(),
                Similarity::Dot => overlap,
            };
            if variant.uses_time_factors() {
                sim *= (-age_days(now, index.end_time(rank)) / cfg.lambda2).exp();
            }
            (sim > 0.0).then_some(Neighbor { rank, similarity: sim })
        })
        .collect();

    let k = cfg.k_neighbors;
    if neighbors.len() > k {
        neighbors.select_nth_unstable_by(k - 1, |a, b| neighbor_order(index, a, b));
        neighbors.truncate(k);
    }
    neighbors.sort_unstable_by(|a, b| neighbor_order(index, a, b));
    neighbors
}

/// Sum of prefix weights over shared items; both inputs sorted by item.
fn weighted_overlap(prefix: &[(ItemId, f64)], neighbor: &[(ItemId, u32)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < prefix.len() && j < neighbor.len() {
        match prefix[i].0.cmp(&neighbor[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                sum += prefix[i].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

/// Item score table from a neighbor set.
pub fn score_items(
    index: &NeighborIndex,
    prefix: &[ItemId],
    neighbors: &[Neighbor],
    cfg: &KnnConfig,
    variant: KnnVariant,
) -> Vec<(ItemId, f64)> {
    let Some(&anchor_item) = prefix.last() else {
        return Vec::new();
    };
    let mut scores: HashMap<ItemId, f64> = HashMap::new();
    for n in neighbors {
        let items = index.session_items(n.rank);
        if variant.uses_time_factors() {
            let anchor = index.position(n.rank, anchor_item);
            for &(item, pos) in items {
                let proximity = match anchor {
                    Some(a) => (-(pos.abs_diff(a) as f64) / cfg.lambda3).exp(),
                    None => 1.0,
                };
                *scores.entry(item).or_insert(0.0) += n.similarity * proximity;
            }
        } else {
            for &(item, _) in items {
                *scores.entry(item).or_insert(0.0) += n.similarity;
            }
        }
    }
    let mut table: Vec<(ItemId, f64)> = scores.into_iter().collect();
    if variant.uses_idf(cfg) {
        let stats = index.stats();
        for (item, score) in &mut table {
            *score *= stats.idf(*item);
        }
    }
    table.sort_unstable_by_key(|&(i, _)| i);
    table
}

/// A fitted nearest-neighbor recommender.
#[derive(Debug, Clone)]
pub struct KnnModel {
    index: Arc<NeighborIndex>,
    variant: KnnVariant,
    cfg: KnnConfig,
}

impl KnnModel {
    pub fn new(index: Arc<NeighborIndex>, variant: KnnVariant, cfg: KnnConfig) -> Self {
        KnnModel { index, variant, cfg }
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn config(&self) -> &KnnConfig {
        &self.cfg
    }

    pub fn variant(&self) -> KnnVariant {
        self.variant
    }

    pub fn neighbors(&self, prefix: &[ItemId], now: Timestamp) -> Vec<Neighbor> {
        find_neighbors(&self.index, prefix, &self.cfg, self.variant, now)
    }
}

impl Recommender for KnnModel {
    fn scores(&self, prefix: &[ItemId], now: Timestamp) -> Vec<(ItemId, f64)> {
        let neighbors = self.neighbors(prefix, now);
        score_items(&self.index, prefix, &neighbors, &self.cfg, self.variant)
    }
}

pub fn predict_sknn(index: &Arc<NeighborIndex>, prefix: &[ItemId], cfg: &KnnConfig, k: usize) -> Recommendation {
    KnnModel::new(Arc::clone(index), KnnVariant::Sknn, cfg.clone()).recommend(prefix, 0, k)
}

pub fn predict_vsknn(index: &Arc<NeighborIndex>, prefix: &[ItemId], cfg: &KnnConfig, k: usize) -> Recommendation {
    KnnModel::new(Arc::clone(index), KnnVariant::Vsknn, cfg.clone()).recommend(prefix, 0, k)
}

pub fn predict_stan(
    index: &Arc<NeighborIndex>,
    prefix: &[ItemId],
    cfg: &KnnConfig,
    k: usize,
    now: Timestamp,
) -> Recommendation {
    KnnModel::new(Arc::clone(index), KnnVariant::Stan, cfg.clone()).recommend(prefix, now, k)
}

pub fn predict_vstan(
    index: &Arc<NeighborIndex>,
    prefix: &[ItemId],
    cfg: &KnnConfig,
    k: usize,
    now: Timestamp,
) -> Recommendation {
    KnnModel::new(Arc::clone(index), KnnVariant::Vstan, cfg.clone()).recommend(prefix, now, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Session, SessionSet};

    const A: ItemId = 0;
    const B: ItemId = 1;
    const C: ItemId = 2;
    const D: ItemId = 3;
    const DAY: i64 = MILLIS_PER_DAY;

    fn toy() -> Arc<NeighborIndex> {
        let set = SessionSet::from_sessions(vec![
            Session::new(1, vec![A, B, C], vec![1, 2, 3]),
            Session::new(2, vec![A, B, D], vec![4, 5, 6]),
            Session::new(3, vec![B, C, D], vec![7, 8, 9]),
        ]);
        Arc::new(NeighborIndex::build(&set))
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-4
    }

    fn sims(index: &NeighborIndex, ns: &[Neighbor]) -> Vec<(u32, f64)> {
        ns.iter().map(|n| (index.session_id(n.rank), n.similarity)).collect()
    }

    #[test]
    fn binary_cosine_neighbors() {
        let idx = toy();
        let cfg = KnnConfig::unlimited(10);
        let ns = find_neighbors(&idx, &[A, B], &cfg, KnnVariant::Sknn, 0);
        let s = sims(&idx, &ns);
        // s1 and s2 tie; the more recent one (s2) comes first
        assert_eq!(s.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 1, 3]);
        assert!(close(s[0].1, 0.8165) && close(s[1].1, 0.8165) && close(s[2].1, 0.4082));
    }

    #[test]
    fn unseen_prefix_has_no_neighbors() {
        let idx = toy();
        assert!(find_neighbors(&idx, &[42], &KnnConfig::unlimited(10), KnnVariant::Sknn, 0).is_empty());
    }

    #[test]
    fn sample_of_one_keeps_most_recent() {
        let idx = toy();
        let cfg = KnnConfig {
            k_neighbors: 1,
            sample_size: SampleSize(Some(1)),
            ..KnnConfig::default()
        };
        let ns = find_neighbors(&idx, &[A, B], &cfg, KnnVariant::Sknn, 0);
        assert_eq!(sims(&idx, &ns).iter().map(|x| x.0).collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn sknn_sums_neighbor_similarities() {
        let idx = toy();
        let cfg = KnnConfig::unlimited(2);
        let rec = predict_sknn(&idx, &[A, B], &cfg, 4);
        assert_eq!(rec.item_ids(), vec![A, B, C, D]);
        let s: Vec<f64> = rec.as_slice().iter().map(|x| x.score).collect();
        assert!(close(s[0], 1.633) && close(s[1], 1.633) && close(s[2], 0.8165) && close(s[3], 0.8165));
    }

    #[test]
    fn single_neighbor_scores_all_items_equally() {
        let set = SessionSet::from_sessions(vec![Session::new(0, vec![A, B, C], vec![1, 2, 3])]);
        let idx = Arc::new(NeighborIndex::build(&set));
        let rec = predict_sknn(&idx, &[A], &KnnConfig::unlimited(5), 10);
        assert_eq!(rec.item_ids(), vec![A, B, C]);
        assert!(predict_sknn(&idx, &[D], &KnnConfig::unlimited(5), 10).is_empty());
    }

    #[test]
    fn linear_weights() {
        let idx = toy();
        let cfg = KnnConfig {
            weighting: Weighting::Linear,
            ..KnnConfig::unlimited(10)
        };
        let ns = find_neighbors(&idx, &[A, B], &cfg, KnnVariant::Vsknn, 0);
        let s = sims(&idx, &ns);
        assert!(close(s[0].1, 0.6124) && close(s[1].1, 0.6124));
        assert_eq!(s[2].0, 3);
        assert!(close(s[2].1, 0.4082));
    }

    #[test]
    fn idf_multiplies_scores() {
        let idx = toy();
        let cfg = KnnConfig {
            idf: true,
            ..KnnConfig::unlimited(10)
        };
        let plain = KnnModel::new(Arc::clone(&idx), KnnVariant::Vsknn, KnnConfig { idf: false, ..cfg.clone() });
        let weighted = KnnModel::new(Arc::clone(&idx), KnnVariant::Vsknn, cfg);
        let p: HashMap<_, _> = plain.scores(&[A, B], 0).into_iter().collect();
        let w: HashMap<_, _> = weighted.scores(&[A, B], 0).into_iter().collect();
        assert!((w[&D] / p[&D] - 1.5f64.ln()).abs() < 1e-12);
        assert!((1.5f64.ln() - 0.405).abs() < 1e-3);
        assert_eq!(w[&B], 0.0);
    }

    #[test]
    fn proximity_factor() {
        let set = SessionSet::from_sessions(vec![Session::new(0, vec![A, B, C], vec![1, 2, 3])]);
        let idx = Arc::new(NeighborIndex::build(&set));
        let cfg = KnnConfig {
            lambda3: 1.0,
            ..KnnConfig::unlimited(5)
        };
        let model = KnnModel::new(idx, KnnVariant::Stan, cfg);
        let ns = model.neighbors(&[A, B], 3);
        let sim = ns[0].similarity;
        let s: HashMap<_, _> = model.scores(&[A, B], 3).into_iter().collect();
        assert!(close(s[&C] / sim, 0.3679));
        assert!(close(s[&A] / sim, 0.3679));
        assert_eq!(s[&B] / sim, 1.0);
    }

    #[test]
    fn recency_factor() {
        let set = SessionSet::from_sessions(vec![Session::new(0, vec![A, B], vec![0, 1])]);
        let idx = Arc::new(NeighborIndex::build(&set));
        let cfg = KnnConfig {
            lambda2: 2.0,
            ..KnnConfig::unlimited(5)
        };
        let fresh = find_neighbors(&idx, &[A], &cfg, KnnVariant::Stan, 1)[0].similarity;
        let aged = find_neighbors(&idx, &[A], &cfg, KnnVariant::Stan, 1 + 2 * DAY)[0].similarity;
        assert!(close(aged / fresh, 0.3679));
        // negative age clamps to zero
        let future = find_neighbors(&idx, &[A], &cfg, KnnVariant::Stan, -5 * DAY)[0].similarity;
        assert_eq!(future, fresh);
    }

    #[test]
    fn vstan_idf_suppresses_ubiquitous_item() {
        let idx = toy();
        let cfg = KnnConfig {
            idf: true,
            ..KnnConfig::unlimited(10)
        };
        let rec = predict_vstan(&idx, &[A, B], &cfg, 10, 10);
        assert!(!rec.item_ids().contains(&B));
        assert!(rec.item_ids().contains(&A) && rec.item_ids().contains(&C));
    }

    #[test]
    fn dot_similarity_skips_normalization() {
        let idx = toy();
        let cfg = KnnConfig {
            similarity: Similarity::Dot,
            ..KnnConfig::unlimited(10)
        };
        let ns = find_neighbors(&idx, &[A, B], &cfg, KnnVariant::Sknn, 0);
        assert_eq!(ns.iter().map(|n| n.similarity).collect::<Vec<_>>(), vec![2.0, 2.0, 1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(KnnConfig::default().validate().is_ok());
        let bad = KnnConfig {
            k_neighbors: 2000,
            ..KnnConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = KnnConfig {
            lambda2: 0.0,
            ..KnnConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(KnnConfig::unlimited(5000).validate().is_ok());
    }

    #[test]
    fn repeated_prefix_items_use_last_position() {
        let w = weighted_prefix(&[A, B, A], Weighting::Linear, 1.0);
        assert_eq!(w, vec![(A, 1.0), (B, 2.0 / 3.0)]);
    }
}
