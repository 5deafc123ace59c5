//! Random hyperparameter search against a validation split.
//!
//! The validation split covers the last `test_days` of the training data.
//! Each trial samples a configuration, fits it on the remaining training
//! sessions and is scored by MRR@20 on the validation sessions.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithms::{AlgorithmConfig, AlgorithmKind, ItemStats, NeighborIndex};
use crate::corpus::SessionSet;
use crate::evaluation::evaluate;
use crate::preprocess::{restrict_to_vocabulary, split_last_days, PreprocessError};

/// Cut-off of the optimization target.
pub const TARGET_CUTOFF: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuningError {
    #[error("cannot build validation split: {0}")]
    Split(#[from] PreprocessError),
    #[error("n_iter must be >= 1")]
    NoIterations,
    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),
    #[error("all {} trials failed: {}", .0.len(), .0.join("; "))]
    AllTrialsFailed(Vec<String>),
}

/// Sampling distribution of one hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamDistribution {
    Choice { values: Vec<toml::Value> },
    IntRange { low: i64, high: i64 },
    /// Log-uniform over `[low, high]`; with probability `inf_probability`
    /// the value is `inf` instead.
    LogUniform {
        low: f64,
        high: f64,
        #[serde(default)]
        inf_probability: f64,
    },
}

impl ParamDistribution {
    fn validate(&self, name: &str) -> Result<(), TuningError> {
        let bad = |m: &str| Err(TuningError::InvalidSpace(format!("{name}: {m}")));
        match self {
            ParamDistribution::Choice { values } if values.is_empty() => bad("empty choice"),
            ParamDistribution::IntRange { low, high } if low > high => bad("low > high"),
            ParamDistribution::LogUniform {
                low,
                high,
                inf_probability,
            } => {
                if !(*low > 0.0 && low <= high && high.is_finite()) {
                    return bad("need 0 < low <= high < inf");
                }
                if !(0.0..=1.0).contains(inf_probability) {
                    return bad("inf_probability must be in [0, 1]");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> toml::Value {
        match self {
            ParamDistribution::Choice { values } => values[rng.gen_range(0..values.len())].clone(),
            ParamDistribution::IntRange { low, high } => toml::Value::Integer(rng.gen_range(*low..=*high)),
            ParamDistribution::LogUniform {
                low,
                high,
                inf_probability,
            } => {
                let u: f64 = rng.gen();
                if u < *inf_probability {
                    return toml::Value::Float(f64::INFINITY);
                }
                let x = Uniform::new_inclusive(low.ln(), high.ln()).sample(rng).exp();
                toml::Value::Float(x)
            }
        }
    }
}

/// Hyperparameter search space, keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSpace(pub BTreeMap<String, ParamDistribution>);

impl ParamSpace {
    pub fn validate(&self) -> Result<(), TuningError> {
        self.0.iter().try_for_each(|(k, d)| d.validate(k))
    }

    /// Default space for an algorithm.
    pub fn default_for(kind: AlgorithmKind) -> Self {
        use ParamDistribution::*;
        let strs = |xs: &[&str]| Choice {
            values: xs.iter().map(|s| toml::Value::String(s.to_string())).collect(),
        };
        let lambda = || LogUniform {
            low: 0.1,
            high: 100.0,
            inf_probability: 0.1,
        };
        let mut m = BTreeMap::new();
        match kind {
            AlgorithmKind::Ar => {}
            AlgorithmKind::Sr => {
                m.insert("decay".into(), strs(&["reciprocal", "step"]));
                m.insert("step_window".into(), IntRange { low: 1, high: 10 });
            }
            _ => {
                m.insert("k_neighbors".into(), IntRange { low: 50, high: 1500 });
                m.insert("sample_size".into(), IntRange { low: 500, high: 5000 });
                m.insert("similarity".into(), strs(&["cosine", "dot"]));
                if matches!(kind, AlgorithmKind::Stan | AlgorithmKind::Vstan) {
                    m.insert("lambda1".into(), lambda());
                    m.insert("lambda2".into(), lambda());
                    m.insert("lambda3".into(), lambda());
                }
                if matches!(kind, AlgorithmKind::Vsknn | AlgorithmKind::Vstan) {
                    m.insert("weighting".into(), strs(&["constant", "linear", "exponential"]));
                    m.insert(
                        "idf".into(),
                        Choice {
                            values: vec![toml::Value::Boolean(true), toml::Value::Boolean(false)],
                        },
                    );
                }
                if kind == AlgorithmKind::Vsknn {
                    m.insert("lambda1".into(), lambda());
                }
            }
        }
        ParamSpace(m)
    }

    /// Default space with `overrides` replacing or adding entries.
    pub fn with_overrides(kind: AlgorithmKind, overrides: &ParamSpace) -> Self {
        let mut space = Self::default_for(kind);
        for (k, v) in &overrides.0 {
            space.0.insert(k.clone(), v.clone());
        }
        space
    }

    /// Draws one parameter table, in key order. `k_neighbors` is drawn again
    /// until it does not exceed `sample_size`.
    pub fn sample(&self, rng: &mut impl Rng) -> toml::Table {
        let mut table = toml::Table::new();
        for (name, dist) in &self.0 {
            table.insert(name.clone(), dist.sample(rng));
        }
        if let (Some(dist), Some(m)) = (self.0.get("k_neighbors"), table.get("sample_size").and_then(|v| v.as_integer()))
        {
            for _ in 0..1000 {
                match table.get("k_neighbors").and_then(|v| v.as_integer()) {
                    Some(k) if k > m => {
                        table.insert("k_neighbors".into(), dist.sample(rng));
                    }
                    _ => break,
                }
            }
        }
        table
    }
}

/// Training data with its validation tail.
///
/// Fitting only ever sees `subtrain`; `validation` is used for scoring.
#[derive(Debug, Clone)]
pub struct ValidationSplit {
    subtrain: SessionSet,
    validation: SessionSet,
}

impl ValidationSplit {
    pub fn subtrain(&self) -> &SessionSet {
        &self.subtrain
    }

    pub fn validation(&self) -> &SessionSet {
        &self.validation
    }
}

/// Holds out the last `test_days` of `train`, restricted to items seen in
/// the remaining part.
pub fn make_validation_split(
    train: &SessionSet,
    test_days: i64,
    min_session_length: usize,
) -> Result<ValidationSplit, TuningError> {
    let split = split_last_days(train, test_days)?;
    let validation = restrict_to_vocabulary(&split.test, split.train.vocabulary(), min_session_length);
    if validation.is_empty() {
        return Err(PreprocessError::EmptyTestAfterRestriction.into());
    }
    Ok(ValidationSplit {
        subtrain: split.train,
        validation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub params: toml::Table,
    pub mrr_at_20: f64,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TuningOutcome {
    pub best: AlgorithmConfig,
    pub best_trial: usize,
    pub trials: Vec<Trial>,
}

impl TuningOutcome {
    pub fn best_score(&self) -> f64 {
        self.trials[self.best_trial].mrr_at_20
    }
}

/// Samples `n_iter` configurations and keeps the one with the highest
/// validation MRR@20; ties go to the earlier trial. `fixed` parameters are
/// applied first and overridden by sampled ones.
pub fn random_search(
    kind: AlgorithmKind,
    fixed: &toml::Table,
    space: &ParamSpace,
    n_iter: usize,
    seed: u64,
    split: &ValidationSplit,
) -> Result<TuningOutcome, TuningError> {
    if n_iter == 0 {
        return Err(TuningError::NoIterations);
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn: Vec<toml::Table> = (0..n_iter)
        .map(|_| {
            let mut params = fixed.clone();
            params.extend(space.sample(&mut rng));
            params
        })
        .collect();

    let subtrain = split.subtrain();
    let index = kind.knn_variant().map(|_| Arc::new(NeighborIndex::build(subtrain)));
    let stats = ItemStats::from_sessions(subtrain);

    let trials: Vec<(Trial, Option<AlgorithmConfig>)> = drawn
        .into_par_iter()
        .enumerate()
        .map(|(i, params)| {
            let start = Instant::now();
            let outcome = AlgorithmConfig::from_params(kind, &params)
                .map_err(|e| e.to_string())
                .and_then(|cfg| {
                    let model = match &index {
                        Some(idx) => cfg.fit_with_index(subtrain, idx),
                        None => cfg.fit(subtrain),
                    }
                    .map_err(|e| e.to_string())?;
                    let report = evaluate(
                        model.as_ref(),
                        split.validation(),
                        &[TARGET_CUTOFF],
                        subtrain.vocabulary(),
                        &stats,
                    )
                    .map_err(|e| e.to_string())?;
                    Ok((cfg, report.metrics[0].mrr))
                });
            let seconds = start.elapsed().as_secs_f64();
            match outcome {
                Ok((cfg, mrr)) => (
                    Trial {
                        index: i,
                        params,
                        mrr_at_20: mrr,
                        seconds,
                        error: None,
                    },
                    Some(cfg),
                ),
                Err(e) => (
                    Trial {
                        index: i,
                        params,
                        mrr_at_20: 0.0,
                        seconds,
                        error: Some(e),
                    },
                    None,
                ),
            }
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (t, cfg) in &trials {
        if cfg.is_some() && best.is_none_or(|(_, s)| t.mrr_at_20 > s) {
            best = Some((t.index, t.mrr_at_20));
        }
    }
    let Some((best_trial, _)) = best else {
        let causes = trials
            .iter()
            .map(|(t, _)| format!("trial {}: {}", t.index, t.error.as_deref().unwrap_or("unknown")))
            .collect();
        return Err(TuningError::AllTrialsFailed(causes));
    };
    let (trials, configs): (Vec<Trial>, Vec<Option<AlgorithmConfig>>) = trials.into_iter().unzip();
    Ok(TuningOutcome {
        best: configs[best_trial].clone().expect("best trial succeeded"),
        best_trial,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{KnnConfig, KnnVariant};
    use crate::corpus::{day_of, Session, MILLIS_PER_DAY};
    use crate::harness::synthetic::{generate_synthetic_corpus, SyntheticSpec};

    fn sessions_ending_on(days: impl IntoIterator<Item = i64>) -> SessionSet {
        SessionSet::from_sessions(
            days.into_iter()
                .enumerate()
                .map(|(i, d)| {
                    Session::new(i as u32, vec![0, 1], vec![d * MILLIS_PER_DAY, d * MILLIS_PER_DAY + 1])
                })
                .collect(),
        )
    }

    #[test]
    fn validation_covers_last_days() {
        let train = sessions_ending_on(1..=8);
        let split = make_validation_split(&train, 2, 2).unwrap();
        let days = |s: &SessionSet| s.sessions().iter().map(|x| day_of(x.end_time())).collect::<Vec<_>>();
        assert_eq!(days(split.subtrain()), (1..=6).collect::<Vec<_>>());
        assert_eq!(days(split.validation()), vec![7, 8]);
        assert_eq!(split.subtrain().union(split.validation()), train);
        assert!(make_validation_split(&train, 8, 2).is_err());
    }

    fn synthetic_split(strength: f64, seed: u64) -> ValidationSplit {
        let corpus = generate_synthetic_corpus(&SyntheticSpec::new(60, 600, 20, strength, seed)).unwrap();
        make_validation_split(&corpus.sessions, 3, 2).unwrap()
    }

    #[test]
    fn single_trial_wins() {
        let split = synthetic_split(0.5, 1);
        let out = random_search(
            AlgorithmKind::Sknn,
            &toml::Table::new(),
            &ParamSpace::default_for(AlgorithmKind::Sknn),
            1,
            7,
            &split,
        )
        .unwrap();
        assert_eq!(out.best_trial, 0);
        assert_eq!(out.trials.len(), 1);
    }

    #[test]
    fn search_is_deterministic_and_argmax_consistent() {
        let split = synthetic_split(0.5, 2);
        let space = ParamSpace::default_for(AlgorithmKind::Vstan);
        let a = random_search(AlgorithmKind::Vstan, &toml::Table::new(), &space, 6, 11, &split).unwrap();
        let b = random_search(AlgorithmKind::Vstan, &toml::Table::new(), &space, 6, 11, &split).unwrap();
        let strip = |o: &TuningOutcome| o.trials.iter().map(|t| (t.params.clone(), t.mrr_at_20)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.best, b.best);
        let max = a.trials.iter().map(|t| t.mrr_at_20).fold(f64::MIN, f64::max);
        assert_eq!(a.best_score(), max);
        let first = a.trials.iter().position(|t| t.mrr_at_20 == max).unwrap();
        assert_eq!(a.best_trial, first);
    }

    #[test]
    fn sampled_configs_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [AlgorithmKind::Sknn, AlgorithmKind::Vsknn, AlgorithmKind::Stan, AlgorithmKind::Vstan, AlgorithmKind::Sr] {
            let space = ParamSpace::default_for(kind);
            for _ in 0..200 {
                let p = space.sample(&mut rng);
                AlgorithmConfig::from_params(kind, &p).unwrap();
            }
        }
    }

    #[test]
    fn small_space_search_matches_exhaustive_best() {
        let split = synthetic_split(0.9, 4);
        let space = ParamSpace(BTreeMap::from([
            (
                "decay".to_string(),
                ParamDistribution::Choice {
                    values: vec!["reciprocal".into(), "step".into()],
                },
            ),
            ("step_window".to_string(), ParamDistribution::IntRange { low: 1, high: 3 }),
        ]));
        let out = random_search(AlgorithmKind::Sr, &toml::Table::new(), &space, 30, 5, &split).unwrap();
        let stats = ItemStats::from_sessions(split.subtrain());
        for decay in ["reciprocal", "step"] {
            for w in 1..=3 {
                let mut t = toml::Table::new();
                t.insert("decay".into(), decay.into());
                t.insert("step_window".into(), toml::Value::Integer(w));
                let cfg = AlgorithmConfig::from_params(AlgorithmKind::Sr, &t).unwrap();
                let model = cfg.fit(split.subtrain()).unwrap();
                let r = evaluate(model.as_ref(), split.validation(), &[20], split.subtrain().vocabulary(), &stats).unwrap();
                assert!(out.best_score() >= r.metrics[0].mrr - 1e-12, "{decay}/{w}");
            }
        }
    }

    #[test]
    fn failed_trials_score_zero() {
        let split = synthetic_split(0.5, 6);
        let mut fixed = toml::Table::new();
        fixed.insert("lambda1".into(), toml::Value::Float(-1.0));
        let space = ParamSpace(BTreeMap::from([(
            "k_neighbors".to_string(),
            ParamDistribution::IntRange { low: 5, high: 10 },
        )]));
        let err = random_search(AlgorithmKind::Stan, &fixed, &space, 3, 1, &split).unwrap_err();
        match err {
            TuningError::AllTrialsFailed(causes) => assert_eq!(causes.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad = ParamSpace(BTreeMap::from([(
            "k_neighbors".to_string(),
            ParamDistribution::IntRange { low: 10, high: 5 },
        )]));
        assert!(matches!(
            random_search(AlgorithmKind::Sknn, &toml::Table::new(), &bad, 1, 1, &split),
            Err(TuningError::InvalidSpace(_))
        ));
        assert_eq!(
            random_search(AlgorithmKind::Sknn, &toml::Table::new(), &ParamSpace::default(), 0, 1, &split).unwrap_err(),
            TuningError::NoIterations
        );
    }

    #[test]
    fn fixed_params_apply() {
        let split = synthetic_split(0.5, 8);
        let mut fixed = toml::Table::new();
        fixed.insert("k_neighbors".into(), toml::Value::Integer(7));
        fixed.insert("sample_size".into(), toml::Value::Integer(50));
        let out = random_search(AlgorithmKind::Sknn, &fixed, &ParamSpace::default(), 2, 1, &split).unwrap();
        let expected = KnnConfig {
            k_neighbors: 7,
            sample_size: crate::algorithms::SampleSize(Some(50)),
            ..KnnConfig::default()
        };
        assert_eq!(out.best, AlgorithmConfig::Knn(KnnVariant::Sknn, expected));
    }
}
