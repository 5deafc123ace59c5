//! Incremental-reveal evaluation and ranking metrics.
//!
//! Each test session of length `L` yields `L − 1` prediction events. The
//! immediate next item is the target for hit rate and MRR; the distinct items
//! of the rest of the session are the relevance set for precision, recall
//! and average precision.
//!
//! Conventions: precision always divides by the cut-off, even for shorter
//! lists; average precision divides by `min(κ, |remaining|)`; popularity is
//! averaged over every emitted list slot.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::algorithms::{ItemStats, Recommendation, Recommender};
use crate::corpus::{ItemId, SessionId, SessionSet, Timestamp};

pub const DEFAULT_CUTOFFS: [usize; 3] = [5, 10, 20];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("test data yields no prediction events")]
    NoEvents,
    #[error("invalid cut-offs: {0}")]
    InvalidCutoffs(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionEvent<'a> {
    pub session_id: SessionId,
    pub prefix: &'a [ItemId],
    /// Time of the last revealed event.
    pub now: Timestamp,
    pub next_item: ItemId,
    /// Distinct items not yet revealed, ascending.
    pub remaining: Vec<ItemId>,
}

fn session_events(session: &crate::corpus::Session) -> impl Iterator<Item = PredictionEvent<'_>> {
    (1..session.len()).map(move |t| {
        let mut remaining = session.items[t..].to_vec();
        remaining.sort_unstable();
        remaining.dedup();
        PredictionEvent {
            session_id: session.id,
            prefix: &session.items[..t],
            now: session.times[t - 1],
            next_item: session.items[t],
            remaining,
        }
    })
}

pub fn enumerate_events(test: &SessionSet) -> Vec<PredictionEvent<'_>> {
    test.sessions().iter().flat_map(session_events).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EventScores {
    pub hit: f64,
    pub reciprocal_rank: f64,
    pub precision: f64,
    pub recall: f64,
    pub average_precision: f64,
}

pub fn score_event(rec: &Recommendation, ev: &PredictionEvent<'_>, cutoff: usize) -> EventScores {
    score_items(&rec.item_ids(), ev, cutoff)
}

fn score_items(items: &[ItemId], ev: &PredictionEvent<'_>, cutoff: usize) -> EventScores {
    let top = &items[..items.len().min(cutoff)];
    let mut scores = EventScores::default();
    if let Some(rank) = top.iter().position(|&i| i == ev.next_item) {
        scores.hit = 1.0;
        scores.reciprocal_rank = 1.0 / (rank + 1) as f64;
    }
    let mut relevant = 0usize;
    let mut precision_sum = 0.0;
    for (j, item) in top.iter().enumerate() {
        if ev.remaining.binary_search(item).is_ok() {
            relevant += 1;
            precision_sum += relevant as f64 / (j + 1) as f64;
        }
    }
    scores.precision = relevant as f64 / cutoff as f64;
    scores.recall = relevant as f64 / ev.remaining.len() as f64;
    scores.average_precision = precision_sum / cutoff.min(ev.remaining.len()) as f64;
    scores
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffMetrics {
    pub cutoff: usize,
    pub hit_rate: f64,
    pub mrr: f64,
    pub precision: f64,
    pub recall: f64,
    pub map: f64,
    pub coverage: f64,
    pub popularity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n_events: usize,
    pub metrics: Vec<CutoffMetrics>,
}

impl MetricsReport {
    pub fn at(&self, cutoff: usize) -> Option<&CutoffMetrics> {
        self.metrics.iter().find(|m| m.cutoff == cutoff)
    }
}

#[derive(Debug, Clone, Default)]
struct Partial {
    events: usize,
    /// Per cut-off: hit, rr, precision, recall, ap, popularity sum, slots.
    sums: Vec<[f64; 7]>,
    /// Per cut-off: emitted items of this session.
    emitted: Vec<Vec<ItemId>>,
}

pub fn validate_cutoffs(cutoffs: &[usize]) -> Result<(), EvaluationError> {
    if cutoffs.is_empty() {
        return Err(EvaluationError::InvalidCutoffs("no cut-offs given".into()));
    }
    if cutoffs.contains(&0) {
        return Err(EvaluationError::InvalidCutoffs("cut-offs must be >= 1".into()));
    }
    Ok(())
}

/// Runs every prediction event of `test` through `model`.
///
/// Sessions are scored in parallel; partial sums are merged in session order
/// so the result does not depend on the thread count.
pub fn evaluate(
    model: &dyn Recommender,
    test: &SessionSet,
    cutoffs: &[usize],
    catalog: &BTreeSet<ItemId>,
    stats: &ItemStats,
) -> Result<MetricsReport, EvaluationError> {
    validate_cutoffs(cutoffs)?;
    let max_k = *cutoffs.iter().max().expect("non-empty");
    let partials: Vec<Partial> = test
        .sessions()
        .par_iter()
        .map(|session| {
            let mut part = Partial {
                events: 0,
                sums: vec![[0.0; 7]; cutoffs.len()],
                emitted: vec![Vec::new(); cutoffs.len()],
            };
            for ev in session_events(session) {
                let rec = model.recommend(ev.prefix, ev.now, max_k).item_ids();
                part.events += 1;
                for (c, &k) in cutoffs.iter().enumerate() {
                    let s = score_items(&rec, &ev, k);
                    let top = &rec[..rec.len().min(k)];
                    let sums = &mut part.sums[c];
                    sums[0] += s.hit;
                    sums[1] += s.reciprocal_rank;
                    sums[2] += s.precision;
                    sums[3] += s.recall;
                    sums[4] += s.average_precision;
                    sums[5] += top.iter().map(|&i| stats.popularity(i)).sum::<f64>();
                    sums[6] += top.len() as f64;
                    part.emitted[c].extend_from_slice(top);
                }
            }
            for e in &mut part.emitted {
                e.sort_unstable();
                e.dedup();
            }
            part
        })
        .collect();

    let mut events = 0usize;
    let mut sums = vec![[0.0f64; 7]; cutoffs.len()];
    let mut emitted: Vec<BTreeSet<ItemId>> = vec![BTreeSet::new(); cutoffs.len()];
    for part in partials {
        events += part.events;
        for c in 0..cutoffs.len() {
            for (acc, v) in sums[c].iter_mut().zip(part.sums[c]) {
                *acc += v;
            }
            emitted[c].extend(part.emitted[c].iter().copied());
        }
    }
    if events == 0 {
        return Err(EvaluationError::NoEvents);
    }
    let n = events as f64;
    let metrics = cutoffs
        .iter()
        .enumerate()
        .map(|(c, &cutoff)| {
            let s = &sums[c];
            let covered = emitted[c].iter().filter(|i| catalog.contains(i)).count();
            CutoffMetrics {
                cutoff,
                hit_rate: s[0] / n,
                mrr: s[1] / n,
                precision: s[2] / n,
                recall: s[3] / n,
                map: s[4] / n,
                coverage: if catalog.is_empty() {
                    0.0
                } else {
                    covered as f64 / catalog.len() as f64
                },
                popularity: if s[6] > 0.0 { s[5] / s[6] } else { 0.0 },
            }
        })
        .collect();
    Ok(MetricsReport {
        n_events: events,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::rank_topk;
    use crate::corpus::Session;

    const A: ItemId = 0;
    const B: ItemId = 1;
    const C: ItemId = 2;
    const D: ItemId = 3;

    fn set(sessions: &[&[ItemId]]) -> SessionSet {
        SessionSet::from_sessions(
            sessions
                .iter()
                .enumerate()
                .map(|(id, items)| {
                    let t = (0..items.len() as i64).map(|x| id as i64 * 100 + x).collect();
                    Session::new(id as u32, items.to_vec(), t)
                })
                .collect(),
        )
    }

    fn rec(items: &[ItemId]) -> Recommendation {
        let n = items.len() as f64;
        rank_topk(items.iter().enumerate().map(|(r, &i)| (i, n - r as f64)), items.len().max(1))
    }

    fn event(next: ItemId, remaining: &[ItemId]) -> PredictionEvent<'static> {
        PredictionEvent {
            session_id: 0,
            prefix: &[],
            now: 0,
            next_item: next,
            remaining: remaining.to_vec(),
        }
    }

    #[test]
    fn unrolls_sessions() {
        let data = set(&[&[A, B, C]]);
        let evs = enumerate_events(&data);
        assert_eq!(evs.len(), 2);
        assert_eq!((evs[0].prefix, evs[0].next_item, evs[0].remaining.clone()), (&[A][..], B, vec![B, C]));
        assert_eq!((evs[1].prefix, evs[1].next_item, evs[1].remaining.clone()), (&[A, B][..], C, vec![C]));
        assert_eq!(enumerate_events(&set(&[&[A, B]])).len(), 1);
        assert_eq!(enumerate_events(&set(&[&[A, B], &[A, B, C], &[A, B, C, D]])).len(), 6);
    }

    #[test]
    fn worked_example() {
        let s = score_event(&rec(&[A, C, D]), &event(C, &[C, D]), 3);
        assert_eq!(s.hit, 1.0);
        assert_eq!(s.reciprocal_rank, 0.5);
        assert_eq!(s.precision, 2.0 / 3.0);
        assert_eq!(s.recall, 1.0);
        assert_eq!(s.average_precision, (0.5 + 2.0 / 3.0) / 2.0);
    }

    #[test]
    fn empty_list_scores_zero() {
        assert_eq!(score_event(&Recommendation::empty(), &event(C, &[C]), 20), EventScores::default());
    }

    #[test]
    fn first_rank_hit() {
        assert_eq!(score_event(&rec(&[C, A]), &event(C, &[C]), 5).reciprocal_rank, 1.0);
    }

    struct Fixed(Vec<ItemId>);

    impl Recommender for Fixed {
        fn scores(&self, _p: &[ItemId], _now: Timestamp) -> Vec<(ItemId, f64)> {
            let n = self.0.len() as f64;
            self.0.iter().enumerate().map(|(r, &i)| (i, n - r as f64)).collect()
        }
    }

    #[test]
    fn coverage_and_popularity() {
        let train = set(&[&[A, B, C], &[A, B, D], &[B, C, D]]);
        let stats = ItemStats::from_sessions(&train);
        let test = set(&[&[A, B]]);
        let report = evaluate(&Fixed(vec![A, C, D]), &test, &[3], train.vocabulary(), &stats).unwrap();
        let m = report.at(3).unwrap();
        assert_eq!(m.coverage, 0.75);
        assert_eq!(m.popularity, 0.0);

        struct Alternating;
        impl Recommender for Alternating {
            fn scores(&self, prefix: &[ItemId], _now: Timestamp) -> Vec<(ItemId, f64)> {
                if prefix.len() == 1 {
                    vec![(A, 3.0), (C, 2.0), (D, 1.0)]
                } else {
                    vec![(A, 3.0), (B, 2.0), (C, 1.0)]
                }
            }
        }
        let test = set(&[&[A, B, C]]);
        let report = evaluate(&Alternating, &test, &[3], train.vocabulary(), &stats).unwrap();
        assert_eq!(report.at(3).unwrap().coverage, 1.0);
        assert_eq!(report.at(3).unwrap().popularity, 1.0 / 6.0);
    }

    #[test]
    fn silent_model_scores_zero() {
        let train = set(&[&[A, B]]);
        let stats = ItemStats::from_sessions(&train);
        let report = evaluate(&Fixed(vec![]), &set(&[&[A, B, A]]), &DEFAULT_CUTOFFS, train.vocabulary(), &stats).unwrap();
        for m in &report.metrics {
            assert_eq!(
                [m.hit_rate, m.mrr, m.precision, m.recall, m.map, m.coverage],
                [0.0; 6]
            );
        }
    }

    #[test]
    fn no_events_is_an_error() {
        let stats = ItemStats::default();
        let err = evaluate(&Fixed(vec![]), &SessionSet::default(), &[20], &BTreeSet::new(), &stats);
        assert_eq!(err, Err(EvaluationError::NoEvents));
        assert!(evaluate(&Fixed(vec![]), &SessionSet::default(), &[], &BTreeSet::new(), &stats).is_err());
    }

    #[test]
    fn single_relevant_item_ap_equals_rr() {
        let ev = event(B, &[B]);
        for list in [[A, B, C, D], [B, A, C, D], [C, D, A, B]] {
            let s = score_event(&rec(&list), &ev, 4);
            assert_eq!(s.average_precision, s.reciprocal_rank);
        }
    }
}
