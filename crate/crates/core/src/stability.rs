//! Day-by-day evaluation with and without refitting.
//!
//! Given an initial training set `T0` and test days `D1..Dn`, the
//! retraining mode evaluates day `i` with a model fitted on
//! `T0 ∪ D1 ∪ .. ∪ D(i-1)`; the no-retraining mode uses the `T0` model for
//! every day. In both modes only items of `T0`'s vocabulary are evaluated
//! or recommended.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::algorithms::{AlgorithmConfig, FitError, FittedModel, ItemStats, Recommender};
use crate::corpus::{day_of, ItemId, Session, SessionSet, Timestamp};
use crate::evaluation::{evaluate, EvaluationError};
use crate::preprocess::restrict_to_vocabulary;

pub const STABILITY_CUTOFF: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("need at least 2 test days, got {0}")]
    TooFewDays(usize),
    #[error("fit failed before day {day}: {source}")]
    Fit { day: usize, source: FitError },
    #[error("evaluation failed on day {day}: {source}")]
    Evaluation { day: usize, source: EvaluationError },
    #[error("series have different lengths ({0} vs {1})")]
    Misaligned(usize, usize),
    #[error("no day has both values and a non-zero retraining value")]
    NoUsableDays,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainMode {
    Retraining,
    NoRetraining,
}

impl fmt::Display for RetrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrainMode::Retraining => "retraining",
            RetrainMode::NoRetraining => "no_retraining",
        })
    }
}

/// One calendar day of test sessions, by session end time.
#[derive(Debug, Clone, PartialEq)]
pub struct TestDay {
    pub day: i64,
    pub sessions: SessionSet,
}

/// Splits sessions into consecutive calendar days from the first to the last
/// end day; days without sessions are kept, empty.
pub fn split_by_day(test: &SessionSet) -> Vec<TestDay> {
    let (Some(first), Some(last)) = (test.first_time(), test.last_time()) else {
        return Vec::new();
    };
    let (d0, d1) = (day_of(first), day_of(last));
    let mut buckets: Vec<Vec<Session>> = vec![Vec::new(); (d1 - d0 + 1) as usize];
    for s in test.sessions() {
        buckets[(day_of(s.end_time()) - d0) as usize].push(s.clone());
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(i, b)| TestDay {
            day: d0 + i as i64,
            sessions: SessionSet::from_sessions(b),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayMetrics {
    pub n_events: usize,
    pub hit_rate: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayResult {
    pub day: i64,
    /// Sessions in the training data of the model used for this day.
    pub train_sessions: usize,
    /// `None` when the day has no prediction events.
    pub metrics: Option<DayMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRun {
    pub mode: RetrainMode,
    pub days: Vec<DayResult>,
}

impl StabilityRun {
    pub fn hit_rates(&self) -> Vec<Option<f64>> {
        self.days.iter().map(|d| d.metrics.map(|m| m.hit_rate)).collect()
    }

    pub fn mrrs(&self) -> Vec<Option<f64>> {
        self.days.iter().map(|d| d.metrics.map(|m| m.mrr)).collect()
    }
}

/// Hides every item outside a fixed vocabulary.
struct VocabularyFilter<'a> {
    model: FittedModel,
    vocabulary: &'a BTreeSet<ItemId>,
}

impl Recommender for VocabularyFilter<'_> {
    fn scores(&self, prefix: &[ItemId], now: Timestamp) -> Vec<(ItemId, f64)> {
        let mut scores = self.model.scores(prefix, now);
        scores.retain(|(i, _)| self.vocabulary.contains(i));
        scores
    }
}

pub fn run_stability(
    config: &AlgorithmConfig,
    t0: &SessionSet,
    days: &[TestDay],
    mode: RetrainMode,
    min_session_length: usize,
) -> Result<StabilityRun, StabilityError> {
    if days.len() < 2 {
        return Err(StabilityError::TooFewDays(days.len()));
    }
    let vocabulary = t0.vocabulary();
    let fit = |train: &SessionSet, day: usize| -> Result<FittedModel, StabilityError> {
        config.fit(train).map_err(|source| StabilityError::Fit { day, source })
    };
    let mut train = t0.clone();
    let mut model = fit(&train, 1)?;
    let mut results = Vec::with_capacity(days.len());
    for (i, day) in days.iter().enumerate() {
        let n = i + 1;
        if mode == RetrainMode::Retraining && i > 0 {
            train = train.union(&days[i - 1].sessions);
            model = fit(&train, n)?;
        }
        let test = restrict_to_vocabulary(&day.sessions, vocabulary, min_session_length);
        let filtered = VocabularyFilter {
            model: model.clone(),
            vocabulary,
        };
        let stats = ItemStats::from_sessions(&train);
        let metrics = match evaluate(&filtered, &test, &[STABILITY_CUTOFF], vocabulary, &stats) {
            Ok(r) => Some(DayMetrics {
                n_events: r.n_events,
                hit_rate: r.metrics[0].hit_rate,
                mrr: r.metrics[0].mrr,
            }),
            Err(EvaluationError::NoEvents) => None,
            Err(source) => return Err(StabilityError::Evaluation { day: n, source }),
        };
        results.push(DayResult {
            day: day.day,
            train_sessions: train.len(),
            metrics,
        });
    }
    Ok(StabilityRun { mode, days: results })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DropSummary {
    /// Mean per-day change of no-retraining relative to retraining, percent.
    pub percent: f64,
    pub days_used: usize,
    /// Days skipped because the retraining value was 0.
    pub zero_days_excluded: usize,
}

/// Mean over days of `100 * noretrain / retrain - 100`. Days missing from
/// either series are skipped; days with a zero retraining value are skipped
/// and counted.
pub fn relative_drop(retrain: &[Option<f64>], noretrain: &[Option<f64>]) -> Result<DropSummary, StabilityError> {
    if retrain.len() != noretrain.len() {
        return Err(StabilityError::Misaligned(retrain.len(), noretrain.len()));
    }
    let mut sum = 0.0;
    let mut used = 0;
    let mut zero = 0;
    for (r, n) in retrain.iter().zip(noretrain) {
        let (Some(r), Some(n)) = (r, n) else { continue };
        if *r == 0.0 {
            log::warn!("retraining value is 0 on a test day; day excluded from the drop average");
            zero += 1;
            continue;
        }
        sum += 100.0 * n / r - 100.0;
        used += 1;
    }
    if used == 0 {
        return Err(StabilityError::NoUsableDays);
    }
    Ok(DropSummary {
        percent: sum / used as f64,
        days_used: used,
        zero_days_excluded: zero,
    })
}
