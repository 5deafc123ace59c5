//! Association rules and sequential rules.
//!
//! Both methods count item co-occurrences inside training sessions and
//! recommend the row of the last item of the current session. AR counts
//! every pair of positions in both directions. SR only counts forward pairs
//! and weights each by a decay of the positional distance.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ranking_order, FitError, Recommendation, Recommender, ScoredItem};
use crate::corpus::{ItemId, SessionSet, Timestamp};

/// Item-to-item weights, each row pre-ranked by weight descending and item
/// ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleTable {
    rows: Vec<Vec<ScoredItem>>,
}

impl RuleTable {
    fn from_accumulators(acc: Vec<HashMap<ItemId, f64>>) -> Self {
        let rows = acc
            .into_iter()
            .map(|row| {
                let mut row: Vec<ScoredItem> = row
                    .into_iter()
                    .filter(|&(_, w)| w > 0.0)
                    .map(|(item, score)| ScoredItem { item, score })
                    .collect();
                row.sort_unstable_by(ranking_order);
                row
            })
            .collect();
        RuleTable { rows }
    }

    pub fn row(&self, item: ItemId) -> &[ScoredItem] {
        self.rows.get(item as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn weight(&self, from: ItemId, to: ItemId) -> Option<f64> {
        self.row(from).iter().find(|s| s.item == to).map(|s| s.score)
    }

    /// Number of `(from, to)` entries.
    pub fn n_rules(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemId, ItemId, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(from, row)| row.iter().map(move |s| (from as ItemId, s.item, s.score)))
    }

    /// The row of the last prefix item, cut to `k`. Prefix items are not
    /// excluded.
    pub fn predict(&self, prefix: &[ItemId], k: usize) -> Recommendation {
        match prefix.last() {
            Some(&last) => {
                let row = self.row(last);
                Recommendation::from_ranked(row[..row.len().min(k)].to_vec())
            }
            None => Recommendation::empty(),
        }
    }
}

impl Recommender for RuleTable {
    fn scores(&self, prefix: &[ItemId], _now: Timestamp) -> Vec<(ItemId, f64)> {
        match prefix.last() {
            Some(&last) => self.row(last).iter().map(|s| (s.item, s.score)).collect(),
            None => Vec::new(),
        }
    }

    fn recommend(&self, prefix: &[ItemId], _now: Timestamp, k: usize) -> Recommendation {
        self.predict(prefix, k)
    }
}

fn accumulators(train: &SessionSet) -> Vec<HashMap<ItemId, f64>> {
    let n = train.vocabulary().iter().next_back().map_or(0, |&m| m as usize + 1);
    vec![HashMap::new(); n]
}

/// Symmetric co-occurrence counts over position pairs.
pub fn fit_ar(train: &SessionSet) -> RuleTable {
    let mut acc = accumulators(train);
    for session in train.sessions() {
        let items = &session.items;
        for p in 0..items.len() {
            for q in p + 1..items.len() {
                let (i, j) = (items[p], items[q]);
                if i != j {
                    *acc[i as usize].entry(j).or_default() += 1.0;
                    *acc[j as usize].entry(i).or_default() += 1.0;
                }
            }
        }
    }
    RuleTable::from_accumulators(acc)
}

/// Decay applied to the distance between two positions in a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SrDecay {
    /// `1 / d`
    #[default]
    Reciprocal,
    /// `1` up to `step_window`, `0` beyond.
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrConfig {
    #[serde(default)]
    pub decay: SrDecay,
    #[serde(default = "default_step_window")]
    pub step_window: u32,
}

fn default_step_window() -> u32 {
    3
}

impl Default for SrConfig {
    fn default() -> Self {
        SrConfig {
            decay: SrDecay::Reciprocal,
            step_window: default_step_window(),
        }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.step_window == 0 {
            return Err(FitError::InvalidConfig("sr: step_window must be >= 1".into()));
        }
        Ok(())
    }

    pub fn decay(&self, distance: usize) -> f64 {
        match self.decay {
            SrDecay::Reciprocal => 1.0 / distance as f64,
            SrDecay::Step if distance <= self.step_window as usize => 1.0,
            SrDecay::Step => 0.0,
        }
    }
}

/// Forward co-occurrences weighted by `1 / distance`.
pub fn fit_sr(train: &SessionSet) -> RuleTable {
    fit_sr_with(train, &SrConfig::default())
}

pub fn fit_sr_with(train: &SessionSet, cfg: &SrConfig) -> RuleTable {
    let mut acc = accumulators(train);
    for session in train.sessions() {
        let items = &session.items;
        for p in 0..items.len() {
            for q in p + 1..items.len() {
                let (i, j) = (items[p], items[q]);
                let w = cfg.decay(q - p);
                if i != j && w > 0.0 {
                    *acc[i as usize].entry(j).or_default() += w;
                }
            }
        }
    }
    RuleTable::from_accumulators(acc)
}
