//! Filtering, timestamp synthesis, temporal slicing and train/test splits.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{day_of, ItemId, Session, SessionSet, Timestamp, MILLIS_PER_DAY, MILLIS_PER_SECOND};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("dataset is empty after filtering")]
    EmptyAfterFiltering,
    #[error("time span of {span_days} days is too small; need at least {required_days}")]
    SpanTooSmall { span_days: i64, required_days: i64 },
    #[error("{side} part of the split is empty (test_days = {test_days}, span = {span_days} days)")]
    EmptySplit {
        side: &'static str,
        test_days: i64,
        span_days: i64,
    },
    #[error("test set is empty after removing items unknown to training")]
    EmptyTestAfterRestriction,
}

/// How the item-support and session-length filters are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Item support on the raw data, then the length filter, once.
    #[default]
    SinglePass,
    /// Repeat both filters until nothing changes.
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_slices")]
    pub n_slices: usize,
    #[serde(default = "default_test_days")]
    pub test_days: i64,
    #[serde(default = "default_support")]
    pub min_item_support: usize,
    #[serde(default = "default_min_len")]
    pub min_session_length: usize,
    #[serde(default)]
    pub filter_mode: FilterMode,
}

fn default_slices() -> usize {
    5
}
fn default_test_days() -> i64 {
    1
}
fn default_support() -> usize {
    5
}
fn default_min_len() -> usize {
    2
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            n_slices: default_slices(),
            test_days: default_test_days(),
            min_item_support: default_support(),
            min_session_length: default_min_len(),
            filter_mode: FilterMode::SinglePass,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let bad = |m: &str| Err(PreprocessError::InvalidSpec(m.to_string()));
        if self.n_slices < 1 {
            return bad("n_slices must be >= 1");
        }
        if self.test_days < 1 {
            return bad("test_days must be >= 1");
        }
        if self.min_item_support < 1 {
            return bad("min_item_support must be >= 1");
        }
        if self.min_session_length < 2 {
            return bad("min_session_length must be >= 2");
        }
        Ok(())
    }

    /// Smallest time span that can be cut into slices with a train part each.
    pub fn required_span_days(&self) -> i64 {
        self.n_slices as i64 * (self.test_days + 1)
    }

    fn check_span(&self, span_days: i64) -> Result<(), PreprocessError> {
        let required_days = self.required_span_days();
        if span_days < required_days {
            return Err(PreprocessError::SpanTooSmall {
                span_days,
                required_days,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainTestSplit {
    pub train: SessionSet,
    pub test: SessionSet,
    pub boundary_time: Timestamp,
}

/// Removes rare items, then sessions that became too short.
pub fn filter_dataset(data: &SessionSet, spec: &SplitSpec) -> Result<SessionSet, PreprocessError> {
    spec.validate()?;
    let mut current = filter_once(data, spec);
    if spec.filter_mode == FilterMode::FixedPoint {
        loop {
            let next = filter_once(&current, spec);
            if next == current {
                break;
            }
            current = next;
        }
    }
    if current.is_empty() {
        return Err(PreprocessError::EmptyAfterFiltering);
    }
    Ok(current)
}

fn filter_once(data: &SessionSet, spec: &SplitSpec) -> SessionSet {
    let mut support: HashMap<ItemId, usize> = HashMap::new();
    for s in data.sessions() {
        for &item in &s.items {
            *support.entry(item).or_default() += 1;
        }
    }
    let sessions = data
        .sessions()
        .iter()
        .map(|s| s.retain_items(|i| support[&i] >= spec.min_item_support))
        .filter(|s| s.len() >= spec.min_session_length)
        .collect();
    SessionSet::from_sessions(sessions)
}

/// Gap between successive synthesized events of one session.
pub const SYNTHETIC_EVENT_STEP: Timestamp = MILLIS_PER_SECOND;

/// Assigns each session a seeded uniform start time in `[0, span_days)` and
/// spaces its events one second apart, keeping the original event order.
pub fn synthesize_timestamps(
    data: &SessionSet,
    seed: u64,
    span_days: i64,
    spec: &SplitSpec,
) -> Result<SessionSet, PreprocessError> {
    spec.validate()?;
    spec.check_span(span_days)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ordered: Vec<&Session> = data.sessions().iter().collect();
    ordered.sort_by_key(|s| s.id);
    let horizon = span_days * MILLIS_PER_DAY;
    let sessions = ordered
        .into_iter()
        .map(|s| {
            let start = rng.gen_range(0..horizon);
            let times = (0..s.len() as i64).map(|i| start + i * SYNTHETIC_EVENT_STEP).collect();
            Session {
                id: s.id,
                items: s.items.clone(),
                times,
            }
        })
        .collect();
    Ok(SessionSet::from_sessions(sessions))
}

/// Cuts the data into `n_slices` contiguous windows of equal calendar
/// length. A session belongs to the window containing its end time.
pub fn make_slices(data: &SessionSet, spec: &SplitSpec) -> Result<Vec<SessionSet>, PreprocessError> {
    spec.validate()?;
    spec.check_span(data.span_days())?;
    let (Some(first), Some(last)) = (data.first_time(), data.last_time()) else {
        unreachable!("non-empty span implies sessions");
    };
    let origin = day_of(first) * MILLIS_PER_DAY;
    let width = (day_of(last) + 1) * MILLIS_PER_DAY - origin;
    let n = spec.n_slices as i128;
    let mut buckets: Vec<Vec<Session>> = vec![Vec::new(); spec.n_slices];
    for s in data.sessions() {
        let offset = (s.end_time() - origin) as i128;
        let idx = ((offset * n) / width as i128).clamp(0, n - 1) as usize;
        buckets[idx].push(s.clone());
    }
    Ok(buckets.into_iter().map(SessionSet::from_sessions).collect())
}

/// Uses the last `test_days` calendar days of the slice for testing.
pub fn split_slice(slice: &SessionSet, spec: &SplitSpec) -> Result<TrainTestSplit, PreprocessError> {
    split_last_days(slice, spec.test_days)
}

pub(crate) fn split_last_days(data: &SessionSet, test_days: i64) -> Result<TrainTestSplit, PreprocessError> {
    let span_days = data.span_days();
    let empty = |side| PreprocessError::EmptySplit {
        side,
        test_days,
        span_days,
    };
    let last = data.last_time().ok_or_else(|| empty("train"))?;
    let boundary_time = (day_of(last) + 1 - test_days) * MILLIS_PER_DAY;
    let (train, test): (Vec<Session>, Vec<Session>) = data
        .sessions()
        .iter()
        .cloned()
        .partition(|s| s.end_time() < boundary_time);
    if train.is_empty() {
        return Err(empty("train"));
    }
    if test.is_empty() {
        return Err(empty("test"));
    }
    Ok(TrainTestSplit {
        train: SessionSet::from_sessions(train),
        test: SessionSet::from_sessions(test),
        boundary_time,
    })
}

/// Drops events whose item is not in `vocabulary`, then sessions shorter
/// than `min_session_length`.
pub fn restrict_to_vocabulary(
    data: &SessionSet,
    vocabulary: &BTreeSet<ItemId>,
    min_session_length: usize,
) -> SessionSet {
    let sessions = data
        .sessions()
        .iter()
        .map(|s| s.retain_items(|i| vocabulary.contains(&i)))
        .filter(|s| s.len() >= min_session_length)
        .collect();
    SessionSet::from_sessions(sessions)
}

pub fn restrict_test_to_known_items(
    split: TrainTestSplit,
    min_session_length: usize,
) -> Result<TrainTestSplit, PreprocessError> {
    let test = restrict_to_vocabulary(&split.test, split.train.vocabulary(), min_session_length);
    if test.is_empty() {
        return Err(PreprocessError::EmptyTestAfterRestriction);
    }
    Ok(TrainTestSplit { test, ..split })
}
