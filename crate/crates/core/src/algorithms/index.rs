//! In-memory lookup tables for neighbor search.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::corpus::{ItemId, SessionId, SessionSet, Timestamp};

/// Per-item training statistics, indexed by dense item id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ItemStats {
    counts: Vec<u64>,
    session_counts: Vec<u32>,
    popularity: Vec<f64>,
    idf: Vec<f64>,
    n_sessions: usize,
}

impl ItemStats {
    pub fn from_sessions(train: &SessionSet) -> Self {
        let n = train.vocabulary().iter().next_back().map_or(0, |&m| m as usize + 1);
        let mut counts = vec![0u64; n];
        let mut session_counts = vec![0u32; n];
        let mut seen = vec![usize::MAX; n];
        for (s_idx, session) in train.sessions().iter().enumerate() {
            for &item in &session.items {
                counts[item as usize] += 1;
                if seen[item as usize] != s_idx {
                    seen[item as usize] = s_idx;
                    session_counts[item as usize] += 1;
                }
            }
        }
        let present = || counts.iter().copied().filter(|&c| c > 0);
        let min = present().min().unwrap_or(0);
        let max = present().max().unwrap_or(0);
        let popularity = counts
            .iter()
            .map(|&c| {
                if c == 0 || max == min {
                    0.0
                } else {
                    (c - min) as f64 / (max - min) as f64
                }
            })
            .collect();
        let n_sessions = train.len();
        let idf = session_counts
            .iter()
            .map(|&sc| if sc == 0 { 0.0 } else { (n_sessions as f64 / sc as f64).ln() })
            .collect();
        ItemStats {
            counts,
            session_counts,
            popularity,
            idf,
            n_sessions,
        }
    }

    pub fn count(&self, item: ItemId) -> u64 {
        self.counts.get(item as usize).copied().unwrap_or(0)
    }

    pub fn session_count(&self, item: ItemId) -> u32 {
        self.session_counts.get(item as usize).copied().unwrap_or(0)
    }

    /// Min-max normalized occurrence count in `[0, 1]`.
    pub fn popularity(&self, item: ItemId) -> f64 {
        self.popularity.get(item as usize).copied().unwrap_or(0.0)
    }

    /// `ln(N / n_i)`; zero for items absent from training.
    pub fn idf(&self, item: ItemId) -> f64 {
        self.idf.get(item as usize).copied().unwrap_or(0.0)
    }

    pub fn n_sessions(&self) -> usize {
        self.n_sessions
    }

    /// Items ordered by training count descending, ties by id.
    pub fn most_popular(&self, k: usize) -> Vec<ItemId> {
        let mut items: Vec<ItemId> = (0..self.counts.len() as ItemId)
            .filter(|&i| self.counts[i as usize] > 0)
            .collect();
        items.sort_by_key(|&i| (Reverse(self.counts[i as usize]), i));
        items.truncate(k);
        items
    }
}

/// Inverted index from items to the training sessions containing them.
///
/// Training sessions are addressed by their rank in end-time order, so every
/// posting list is sorted by end time and the most recent sessions sit at the
/// tail.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    postings: Vec<Vec<u32>>,
    /// Distinct items of each session, ascending, with the 1-based position
    /// of their last occurrence.
    session_items: Vec<Box<[(ItemId, u32)]>>,
    end_times: Vec<Timestamp>,
    session_ids: Vec<SessionId>,
    stats: ItemStats,
}

impl NeighborIndex {
    pub fn build(train: &SessionSet) -> Self {
        let n_items = train.vocabulary().iter().next_back().map_or(0, |&m| m as usize + 1);
        let mut postings: Vec<Vec<u32>> = vec![Vec::new(); n_items];
        let mut session_items = Vec::with_capacity(train.len());
        for (rank, session) in train.sessions().iter().enumerate() {
            let mut items: Vec<(ItemId, u32)> = session
                .items
                .iter()
                .enumerate()
                .map(|(p, &i)| (i, p as u32 + 1))
                .collect();
            // keep the last occurrence of each item
            items.sort_by_key(|&(i, p)| (i, Reverse(p)));
            items.dedup_by_key(|&mut (i, _)| i);
            for &(item, _) in &items {
                postings[item as usize].push(rank as u32);
            }
            session_items.push(items.into_boxed_slice());
        }
        NeighborIndex {
            postings,
            session_items,
            end_times: train.sessions().iter().map(|s| s.end_time()).collect(),
            session_ids: train.sessions().iter().map(|s| s.id).collect(),
            stats: ItemStats::from_sessions(train),
        }
    }

    pub fn stats(&self) -> &ItemStats {
        &self.stats
    }

    pub fn n_sessions(&self) -> usize {
        self.session_items.len()
    }

    /// Training sessions (by rank) containing `item`, oldest first.
    pub fn postings(&self, item: ItemId) -> &[u32] {
        self.postings.get(item as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn n_postings(&self) -> usize {
        self.postings.iter().map(Vec::len).sum()
    }

    pub fn session_items(&self, rank: u32) -> &[(ItemId, u32)] {
        &self.session_items[rank as usize]
    }

    /// 1-based position of the last occurrence of `item` in session `rank`.
    pub fn position(&self, rank: u32, item: ItemId) -> Option<u32> {
        let items = self.session_items(rank);
        items
            .binary_search_by_key(&item, |&(i, _)| i)
            .ok()
            .map(|idx| items[idx].1)
    }

    pub fn end_time(&self, rank: u32) -> Timestamp {
        self.end_times[rank as usize]
    }

    pub fn session_id(&self, rank: u32) -> SessionId {
        self.session_ids[rank as usize]
    }

    /// The `limit` most recent sessions containing at least one of `items`,
    /// most recent first. `items` must be distinct.
    ///
    /// Walks the posting lists backwards with a k-way merge, so the cost is
    /// bounded by `limit` rather than by the size of the lists.
    pub fn recent_candidates(&self, items: &[ItemId], limit: usize) -> Vec<u32> {
        let lists: Vec<&[u32]> = items
            .iter()
            .map(|&i| self.postings(i))
            .filter(|l| !l.is_empty())
            .collect();
        let mut heap: BinaryHeap<(u32, usize)> = lists
            .iter()
            .enumerate()
            .map(|(li, l)| (l[l.len() - 1], li))
            .collect();
        let mut cursors: Vec<usize> = lists.iter().map(|l| l.len() - 1).collect();
        let mut out = Vec::new();
        while let Some((rank, li)) = heap.pop() {
            if out.last() != Some(&rank) {
                if out.len() == limit {
                    break;
                }
                out.push(rank);
            }
            if cursors[li] > 0 {
                cursors[li] -= 1;
                heap.push((lists[li][cursors[li]], li));
            }
        }
        out
    }
}
