mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use common::{oracle_ranking, oracle_scores, random_corpus, random_knn_config, random_now, random_prefix, seeded, VARIANTS};
use sessionrec::algorithms::{KnnConfig, KnnModel, KnnVariant, NeighborIndex, Recommender, SampleSize, Similarity, Weighting};

fn model(index: &Arc<NeighborIndex>, variant: KnnVariant, cfg: &KnnConfig) -> KnnModel {
    KnnModel::new(Arc::clone(index), variant, cfg.clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_match_brute_force(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let corpus = random_corpus(&mut rng, 40, 12);
        let index = Arc::new(NeighborIndex::build(&corpus.train));
        for variant in VARIANTS {
            let cfg = random_knn_config(&mut rng);
            let prefix = random_prefix(&mut rng, corpus.n_items);
            let now = random_now(&mut rng);
            let m = model(&index, variant, &cfg);
            let got: BTreeMap<_, _> = m.scores(&prefix, now).into_iter().collect();
            let want = oracle_scores(&corpus.train, &prefix, now, variant, &cfg);
            prop_assert_eq!(got.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>());
            for (item, s) in &want {
                prop_assert!((got[item] - s).abs() <= 1e-9, "{:?} item {} {} vs {}", variant, item, got[item], s);
            }
            prop_assert_eq!(m.recommend(&prefix, now, 20).item_ids(), oracle_ranking(&want, 20));
        }
    }

    #[test]
    fn neighbor_count_and_order(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let corpus = random_corpus(&mut rng, 40, 12);
        let index = Arc::new(NeighborIndex::build(&corpus.train));
        let cfg = random_knn_config(&mut rng);
        let prefix = random_prefix(&mut rng, corpus.n_items);
        let ns = model(&index, KnnVariant::Stan, &cfg).neighbors(&prefix, random_now(&mut rng));
        prop_assert!(ns.len() <= cfg.k_neighbors);
        prop_assert!(ns.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        prop_assert!(ns.iter().all(|n| n.similarity > 0.0));
    }

    #[test]
    fn smaller_sample_keeps_most_recent(seed in any::<u64>(), m in 1usize..10) {
        let mut rng = seeded(seed);
        let corpus = random_corpus(&mut rng, 40, 8);
        let index = Arc::new(NeighborIndex::build(&corpus.train));
        let prefix = random_prefix(&mut rng, corpus.n_items);
        let cfg = KnnConfig { k_neighbors: m, sample_size: SampleSize(Some(m)), ..KnnConfig::unlimited(m) };
        let ns = model(&index, KnnVariant::Sknn, &cfg).neighbors(&prefix, 0);
        // every chosen neighbor is at least as recent as every sharing session left out
        let chosen: Vec<u32> = ns.iter().map(|n| n.rank).collect();
        let sharing: Vec<u32> = (0..index.n_sessions() as u32)
            .filter(|&r| index.session_items(r).iter().any(|(i, _)| prefix.contains(i)))
            .collect();
        if sharing.len() > m {
            let oldest_chosen = chosen.iter().map(|&r| index.end_time(r)).min();
            let newest_left = sharing.iter().filter(|r| !chosen.contains(r)).map(|&r| index.end_time(r)).max();
            if let (Some(a), Some(b)) = (oldest_chosen, newest_left) {
                prop_assert!(a >= b);
            }
        }
    }

    #[test]
    fn reductions_are_exact(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let corpus = random_corpus(&mut rng, 40, 12);
        let index = Arc::new(NeighborIndex::build(&corpus.train));
        let mut cfg = random_knn_config(&mut rng);
        cfg.sample_size = SampleSize(Some(cfg.k_neighbors + 5));
        let prefix = random_prefix(&mut rng, corpus.n_items);
        let now = random_now(&mut rng);
        let table = |v: KnnVariant, c: &KnnConfig| model(&index, v, c).scores(&prefix, now);

        let vstan = KnnConfig { weighting: Weighting::Exponential, idf: false, ..cfg.clone() };
        prop_assert_eq!(table(KnnVariant::Vstan, &vstan), table(KnnVariant::Stan, &cfg));

        let flat = KnnConfig {
            similarity: Similarity::Cosine,
            lambda1: f64::INFINITY,
            lambda2: f64::INFINITY,
            lambda3: f64::INFINITY,
            ..cfg.clone()
        };
        prop_assert_eq!(table(KnnVariant::Stan, &flat), table(KnnVariant::Sknn, &flat));

        let constant = KnnConfig { weighting: Weighting::Constant, idf: false, ..cfg.clone() };
        prop_assert_eq!(table(KnnVariant::Vsknn, &constant), table(KnnVariant::Sknn, &constant));
    }
}
