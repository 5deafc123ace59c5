//! Seeded synthetic session corpora with planted sequential rules.
//!
//! Every item `a` has one planted successor `succ(a)`; the successors form a
//! single cycle over the catalog so no item is its own successor. After each
//! event, the next item is `succ(previous)` with probability `rule_strength`
//! and otherwise an independent draw from a Zipf popularity distribution.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ItemId, Session, SessionSet, MILLIS_PER_SECOND};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub items: usize,
    pub sessions: usize,
    pub span_days: i64,
    /// Probability that the planted successor follows an item.
    pub rule_strength: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mean_length")]
    pub mean_session_length: f64,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    /// Seconds between consecutive events of a session.
    #[serde(default = "default_gap")]
    pub event_gap_secs: i64,
}

fn default_mean_length() -> f64 {
    5.0
}
fn default_zipf() -> f64 {
    1.0
}
fn default_gap() -> i64 {
    60
}

impl SyntheticSpec {
    pub fn new(items: usize, sessions: usize, span_days: i64, rule_strength: f64, seed: u64) -> Self {
        SyntheticSpec {
            items,
            sessions,
            span_days,
            rule_strength,
            seed,
            mean_session_length: default_mean_length(),
            zipf_exponent: default_zipf(),
            event_gap_secs: default_gap(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.items < 1 || self.sessions < 1 || self.span_days < 1 {
            return Err("items, sessions and span_days must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.rule_strength) {
            return Err(format!("rule_strength must be in [0, 1], got {}", self.rule_strength));
        }
        if self.mean_session_length.is_nan() || self.mean_session_length < 2.0 {
            return Err("mean_session_length must be >= 2".into());
        }
        if self.zipf_exponent.is_nan() || self.zipf_exponent < 0.0 || self.event_gap_secs < 1 {
            return Err("zipf_exponent must be >= 0 and event_gap_secs >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub sessions: SessionSet,
    /// Planted successor of each item.
    pub successor: Vec<ItemId>,
}

impl SyntheticCorpus {
    pub fn successor_of(&self, item: ItemId) -> ItemId {
        self.successor[item as usize]
    }
}

/// Generates a corpus. Item ids double as popularity ranks (item 0 is the
/// most popular). Session lengths are `2 + Geometric` with the configured
/// mean.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus, String> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut cycle: Vec<ItemId> = (0..spec.items as ItemId).collect();
    cycle.shuffle(&mut rng);
    let mut successor = vec![0; spec.items];
    for (i, &item) in cycle.iter().enumerate() {
        successor[item as usize] = cycle[(i + 1) % cycle.len()];
    }

    let weights: Vec<f64> = (1..=spec.items).map(|r| (r as f64).powf(-spec.zipf_exponent)).collect();
    let popularity = WeightedIndex::new(&weights).map_err(|e| e.to_string())?;
    let extra = spec.mean_session_length - 2.0;
    let continue_p = extra / (1.0 + extra);
    let horizon_secs = spec.span_days * 86_400;

    let sessions = (0..spec.sessions)
        .map(|sid| {
            let mut len = 2;
            while rng.gen::<f64>() < continue_p {
                len += 1;
            }
            let duration = (len as i64 - 1) * spec.event_gap_secs;
            let start = rng.gen_range(0..(horizon_secs - duration).max(1));
            let mut items = Vec::with_capacity(len);
            items.push(popularity.sample(&mut rng) as ItemId);
            while items.len() < len {
                let prev = *items.last().expect("non-empty");
                let next = if rng.gen::<f64>() < spec.rule_strength {
                    successor[prev as usize]
                } else {
                    popularity.sample(&mut rng) as ItemId
                };
                items.push(next);
            }
            let times = (0..len as i64)
                .map(|p| (start + p * spec.event_gap_secs) * MILLIS_PER_SECOND)
                .collect();
            Session::new(sid as u32, items, times)
        })
        .collect();
    Ok(SyntheticCorpus {
        sessions: SessionSet::from_sessions(sessions),
        successor,
    })
}
