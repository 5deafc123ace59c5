//! Shared fixtures: seeded random corpora and a brute-force scorer for the
//! nearest-neighbor family written directly from the formulas.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sessionrec::algorithms::{KnnConfig, KnnVariant, SampleSize, Similarity, Weighting};
use sessionrec::corpus::{ItemId, Session, SessionSet, Timestamp, MILLIS_PER_DAY};

pub struct Corpus {
    pub train: SessionSet,
    pub n_items: u32,
}

/// Random training sessions spread over ten days.
pub fn random_corpus(rng: &mut impl Rng, max_sessions: usize, max_items: u32) -> Corpus {
    let n_sessions = rng.gen_range(1..=max_sessions);
    let n_items = rng.gen_range(1..=max_items);
    let sessions = (0..n_sessions)
        .map(|id| {
            let len = rng.gen_range(1..=8);
            let start = rng.gen_range(0..10 * MILLIS_PER_DAY);
            let items = (0..len).map(|_| rng.gen_range(0..n_items)).collect();
            let times = (0..len as i64).map(|p| start + p * 30_000).collect();
            Session::new(id as u32, items, times)
        })
        .collect();
    Corpus {
        train: SessionSet::from_sessions(sessions),
        n_items,
    }
}

/// Prefix that may contain repeats and items unknown to the corpus.
pub fn random_prefix(rng: &mut impl Rng, n_items: u32) -> Vec<ItemId> {
    let len = rng.gen_range(1..=5);
    (0..len).map(|_| rng.gen_range(0..n_items + 2)).collect()
}

pub fn random_now(rng: &mut impl Rng) -> Timestamp {
    rng.gen_range(0..12 * MILLIS_PER_DAY)
}

fn random_lambda(rng: &mut impl Rng) -> f64 {
    if rng.gen_bool(0.2) {
        f64::INFINITY
    } else {
        rng.gen_range(0.1..20.0)
    }
}

/// Configuration with exhaustive candidate search and random settings.
pub fn random_knn_config(rng: &mut impl Rng) -> KnnConfig {
    KnnConfig {
        k_neighbors: rng.gen_range(1..=60),
        sample_size: SampleSize::ALL,
        similarity: if rng.gen_bool(0.5) { Similarity::Cosine } else { Similarity::Dot },
        weighting: [Weighting::Constant, Weighting::Linear, Weighting::Exponential][rng.gen_range(0..3)],
        lambda1: random_lambda(rng),
        lambda2: random_lambda(rng),
        lambda3: random_lambda(rng),
        idf: rng.gen_bool(0.5),
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const VARIANTS: [KnnVariant; 4] = [KnnVariant::Sknn, KnnVariant::Vsknn, KnnVariant::Stan, KnnVariant::Vstan];

/// Distinct items of a sequence with the 1-based position of their last
/// occurrence.
fn last_positions(items: &[ItemId]) -> BTreeMap<ItemId, usize> {
    let mut m = BTreeMap::new();
    for (p, &i) in items.iter().enumerate() {
        m.insert(i, p + 1);
    }
    m
}

/// Scores every candidate item by scanning all training sessions.
pub fn oracle_scores(
    train: &SessionSet,
    prefix: &[ItemId],
    now: Timestamp,
    variant: KnnVariant,
    cfg: &KnnConfig,
) -> BTreeMap<ItemId, f64> {
    let mut scores = BTreeMap::new();
    let Some(&last) = prefix.last() else {
        return scores;
    };
    let timed = matches!(variant, KnnVariant::Stan | KnnVariant::Vstan);
    let weighting = match variant {
        KnnVariant::Sknn => Weighting::Constant,
        KnnVariant::Stan => Weighting::Exponential,
        _ => cfg.weighting,
    };
    let len = prefix.len() as f64;
    let current = last_positions(prefix);
    let weight = |p: usize| match weighting {
        Weighting::Constant => 1.0,
        Weighting::Linear => p as f64 / len,
        Weighting::Exponential => ((p as f64 - len) / cfg.lambda1).exp(),
    };

    // (similarity, end time, session id, last positions)
    let mut candidates = Vec::new();
    for s in train.sessions() {
        let other = last_positions(&s.items);
        let mut overlap = 0.0;
        for (item, &p) in &current {
            if other.contains_key(item) {
                overlap += weight(p);
            }
        }
        let mut sim = match cfg.similarity {
            Similarity::Cosine => overlap / ((current.len() * other.len()) as f64).sqrt(),
            Similarity::Dot => overlap,
        };
        if timed {
            let age = (now - s.end_time()).max(0) as f64 / MILLIS_PER_DAY as f64;
            sim *= (-age / cfg.lambda2).exp();
        }
        if sim > 0.0 {
            candidates.push((sim, s.end_time(), s.id, other));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    candidates.truncate(cfg.k_neighbors);

    for (sim, _, _, other) in &candidates {
        let anchor = other.get(&last).copied();
        for (&item, &q) in other {
            let proximity = match (timed, anchor) {
                (true, Some(a)) => (-(q.abs_diff(a) as f64) / cfg.lambda3).exp(),
                _ => 1.0,
            };
            *scores.entry(item).or_insert(0.0) += sim * proximity;
        }
    }
    if matches!(variant, KnnVariant::Vsknn | KnnVariant::Vstan) && cfg.idf {
        let n = train.len() as f64;
        let containing: Vec<BTreeSet<ItemId>> = train.sessions().iter().map(|s| s.items.iter().copied().collect()).collect();
        for (item, score) in scores.iter_mut() {
            let df = containing.iter().filter(|set| set.contains(item)).count() as f64;
            *score *= (n / df).ln();
        }
    }
    scores
}

/// Top-k of a score table: score descending, then item ascending, positive
/// scores only.
pub fn oracle_ranking(scores: &BTreeMap<ItemId, f64>, k: usize) -> Vec<ItemId> {
    let mut items: Vec<(ItemId, f64)> = scores.iter().filter(|(_, &s)| s > 0.0).map(|(&i, &s)| (i, s)).collect();
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    items.into_iter().take(k).map(|(i, _)| i).collect()
}
