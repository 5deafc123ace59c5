//! Experiment orchestration: load, preprocess, slice, tune, fit, evaluate,
//! and write result files.
//!
//! Files written to the output directory:
//!
//! | file | content |
//! |------|---------|
//! | `detail.csv` | one row per slice, algorithm and cut-off |
//! | `summary.csv` | per algorithm and cut-off, the mean over slices |
//! | `metadata.json` | formula decisions, fingerprint, seed, config echo, data and slice statistics |
//! | `ids_items.csv`, `ids_sessions.csv` | dense-to-raw id tables (file datasets) |
//! | `trials_<name>.csv`, `tuned_params.toml` | search log and best parameters (tune stage) |
//! | `stability.csv`, `stability_drop.csv` | per-day series and drops (stability stage) |
//! | `timing.csv` | all wall-clock measurements (bench stage) |
//!
//! Wall-clock values appear only in `timing.csv`, so every other file is
//! reproducible byte for byte under a fixed seed.

pub mod config;
pub mod output;
pub mod synthetic;

use std::fmt::Display;
use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::algorithms::{AlgorithmConfig, ItemStats};
use crate::bench::{hardware_descriptor, time_prediction, time_training};
use crate::corpus::{load_event_log, sessionize, DatasetStats, IdMap, SessionSet, Timestamp};
use crate::evaluation::evaluate;
use crate::preprocess::{
    filter_dataset, make_slices, restrict_test_to_known_items, split_slice, synthesize_timestamps,
};
use crate::stability::{relative_drop, run_stability, split_by_day, RetrainMode, StabilityRun};
use crate::tuning::{make_validation_split, random_search, ParamSpace, Trial, TARGET_CUTOFF};

pub use config::{ExperimentConfig, Stage};
use output::{DetailRow, DropRow, StabilityRow, SummaryRow, TimingRow, TrialRow};
pub use synthetic::{generate_synthetic_corpus, SyntheticCorpus, SyntheticSpec};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every formula choice that affects reported numbers. The fingerprint in
/// each result row is derived from this text.
pub const FORMULA_DECISIONS: &[&str] = &[
    "timestamps: seconds in the input, stored as integer milliseconds; a session's time is its last event",
    "session order: (end_time, session_id); within a session events are stable-sorted by time",
    "filtering: item support counted on the raw data, then sessions shorter than min_session_length dropped; applied once to the whole dataset before slicing unless filter_mode = fixed_point",
    "slices: n equal calendar windows from the start of the first day to the end of the last day; a session belongs to the window of its end time",
    "split: the last test_days calendar days of a slice form the test set; test events with items unseen in training are removed, then short sessions",
    "knn similarity: cosine = sum of prefix weights over shared distinct items / sqrt(|C| * |N|); dot = the unnormalized sum",
    "knn prefix weights: constant 1, linear p/L, exponential exp((p - L) / lambda1), p = 1-based position of the last occurrence",
    "knn recency: exp(-age_days / lambda2), age = max(0, now - neighbor end time)",
    "knn proximity: exp(-|q_i - q_anchor| / lambda3) with the last prefix item as anchor; 1 when the anchor is not in the neighbor",
    "knn idf: ln(N / n_i) over training sessions, multiplied into the final score",
    "knn sampling: the sample_size most recent candidate sessions sharing an item with the prefix; neighbors ranked by similarity, then end time desc, then session id",
    "ranking: score desc, then item id asc; non-positive scores are never recommended; prefix items are not excluded",
    "ar: +1 for every ordered pair of distinct positions in a session",
    "sr: forward pairs at distance d weighted 1/d (reciprocal) or 1 if d <= step_window (step)",
    "metrics: hit rate and MRR on the next item; precision, recall and MAP against the distinct remaining items; precision divides by the cut-off; AP divides by min(cut-off, |remaining|)",
    "coverage: distinct recommended items over the training vocabulary; popularity: mean min-max normalized training count over recommended slots",
    "summary: arithmetic mean of per-slice metrics",
    "tuning: random search scored by MRR@20 on the last validation_days of the first slice's training data; ties keep the earlier trial; failed trials score 0",
    "stability: calendar test days; retraining fits on T0 plus all earlier test days; only T0 items evaluated and recommended; drop = mean over days of 100 * noretrain / retrain - 100, days with retrain = 0 excluded",
    "timing: warm-up calls excluded; single-threaded; p95 by nearest rank",
];

/// SHA-256 of the formula decision text, hex encoded.
pub fn formula_fingerprint() -> String {
    hex(&Sha256::digest(FORMULA_DECISIONS.join("\n").as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Derives an independent seed for one named use of the experiment seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[{stage}{context}] {message}")]
    Stage {
        stage: &'static str,
        context: String,
        message: String,
    },
}

impl HarnessError {
    fn stage(stage: &'static str, context: impl Into<String>, err: impl Display) -> Self {
        HarnessError::Stage {
            stage,
            context: context.into(),
            message: err.to_string(),
        }
    }

    /// Name of the stage that failed.
    pub fn stage_name(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Stage { stage, .. } => stage,
        }
    }
}

fn ctx(slice: Option<usize>, algorithm: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(i) = slice {
        s.push_str(&format!(" slice={i}"));
    }
    if let Some(a) = algorithm {
        s.push_str(&format!(" algorithm={a}"));
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceInfo {
    pub index: usize,
    pub boundary_time: Timestamp,
    pub train: DatasetStats,
    pub test: DatasetStats,
}

#[derive(Debug, Clone)]
pub struct TuningRecord {
    pub algorithm: String,
    pub space: ParamSpace,
    pub seed: u64,
    pub trials: Vec<Trial>,
    pub best_trial: usize,
    pub best: AlgorithmConfig,
}

#[derive(Debug, Clone)]
pub struct StabilityRecord {
    pub slice: usize,
    pub algorithm: String,
    pub retraining: StabilityRun,
    pub no_retraining: StabilityRun,
}

/// Everything a run produced; also what was written to disk.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub ids: Option<IdMap>,
    pub raw_stats: Option<DatasetStats>,
    pub filtered_stats: Option<DatasetStats>,
    pub slices: Vec<SliceInfo>,
    /// Final configuration per algorithm, in config order.
    pub algorithms: Vec<(String, AlgorithmConfig)>,
    pub tuning: Vec<TuningRecord>,
    pub detail: Vec<DetailRow>,
    pub summary: Vec<SummaryRow>,
    pub stability: Vec<StabilityRecord>,
    pub stability_rows: Vec<StabilityRow>,
    pub drop_rows: Vec<DropRow>,
    pub timing: Vec<TimingRow>,
    pub files: Vec<PathBuf>,
}

/// Loads or generates the configured dataset.
pub fn load_dataset(config: &ExperimentConfig) -> Result<(SessionSet, Option<IdMap>), HarnessError> {
    if let Some(spec) = &config.data.synthetic {
        let spec = SyntheticSpec {
            seed: derive_seed(config.seed, &format!("synthetic/{}", spec.seed)),
            ..spec.clone()
        };
        let corpus = generate_synthetic_corpus(&spec).map_err(|e| HarnessError::stage("load", "", e))?;
        return Ok((corpus.sessions, None));
    }
    let path = config.data.path.as_ref().ok_or_else(|| HarnessError::Config("data.path missing".into()))?;
    let log = load_event_log(path, &config.data.columns).map_err(|e| HarnessError::stage("load", "", e))?;
    Ok((sessionize(&log.events), Some(log.ids)))
}

/// Runs every enabled stage and writes the result files. On failure the
/// rows gathered so far are still written and metadata records the error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    config.validate().map_err(HarnessError::Config)?;
    let mut report = RunReport::default();
    let result = execute(config, &mut report);
    let status = match &result {
        Ok(()) => "complete".to_string(),
        Err(e) => format!("failed: {e}"),
    };
    let written = write_outputs(config, &report, &status);
    result?;
    report.files = written?;
    Ok(report)
}

fn execute(config: &ExperimentConfig, report: &mut RunReport) -> Result<(), HarnessError> {
    let spec = &config.split;
    let (mut data, ids) = load_dataset(config)?;
    report.ids = ids;
    if let Some(ts) = &config.data.synthesize_timestamps {
        data = synthesize_timestamps(&data, derive_seed(config.seed, "timestamps"), ts.span_days, spec)
            .map_err(|e| HarnessError::stage("preprocess", "", e))?;
    }
    report.raw_stats = Some(data.stats());
    let data = filter_dataset(&data, spec).map_err(|e| HarnessError::stage("preprocess", "", e))?;
    report.filtered_stats = Some(data.stats());
    let slices = make_slices(&data, spec).map_err(|e| HarnessError::stage("split", "", e))?;

    let mut splits = Vec::with_capacity(slices.len());
    for (i, slice) in slices.iter().enumerate() {
        let raw = split_slice(slice, spec).map_err(|e| HarnessError::stage("split", ctx(Some(i), None), e))?;
        let raw_test = raw.test.clone();
        let split = restrict_test_to_known_items(raw, spec.min_session_length)
            .map_err(|e| HarnessError::stage("split", ctx(Some(i), None), e))?;
        report.slices.push(SliceInfo {
            index: i,
            boundary_time: split.boundary_time,
            train: split.train.stats(),
            test: split.test.stats(),
        });
        splits.push((split, raw_test));
    }

    let bench = config.has_stage(Stage::Bench);
    let hardware = if bench { hardware_descriptor() } else { String::new() };
    if config.has_stage(Stage::Tune) {
        let validation = make_validation_split(&splits[0].0.train, config.validation_days(), spec.min_session_length)
            .map_err(|e| HarnessError::stage("tune", ctx(Some(0), None), e))?;
        for entry in &config.algorithms {
            let label = entry.label();
            let space = entry.search_space();
            let seed = derive_seed(config.seed, &format!("tune/{label}"));
            let outcome = random_search(entry.kind, &entry.params, &space, config.tuning.iterations, seed, &validation)
                .map_err(|e| HarnessError::stage("tune", ctx(None, Some(&label)), e))?;
            if bench {
                report.timing.extend(outcome.trials.iter().map(|t| TimingRow {
                    dataset: config.name.clone(),
                    slice: None,
                    algorithm: label.clone(),
                    measurement: "trial",
                    trial: Some(t.index),
                    seconds: Some(t.seconds),
                    train_minutes: None,
                    predictions: None,
                    predict_ms_mean: None,
                    predict_ms_median: None,
                    predict_ms_p95: None,
                    hardware: hardware.clone(),
                }));
            }
            report.algorithms.push((label.clone(), outcome.best.clone()));
            report.tuning.push(TuningRecord {
                algorithm: label,
                space,
                seed,
                best_trial: outcome.best_trial,
                best: outcome.best,
                trials: outcome.trials,
            });
        }
    } else {
        for entry in &config.algorithms {
            let cfg = entry.fixed_config().map_err(HarnessError::Config)?;
            report.algorithms.push((entry.label(), cfg));
        }
    }

    let evaluate_stage = config.has_stage(Stage::Evaluate);
    let fingerprint = formula_fingerprint();
    let max_cutoff = *config.cutoffs.iter().max().expect("validated cutoffs");
    let algorithms = report.algorithms.clone();
    for (i, (split, raw_test)) in splits.iter().enumerate() {
        let stats = ItemStats::from_sessions(&split.train);
        for (label, cfg) in &algorithms {
            let here = || ctx(Some(i), Some(label));
            if evaluate_stage || bench {
                let (model, train_seconds) =
                    time_training(cfg, &split.train).map_err(|e| HarnessError::stage("fit", here(), e))?;
                if evaluate_stage {
                    let r = evaluate(model.as_ref(), &split.test, &config.cutoffs, split.train.vocabulary(), &stats)
                        .map_err(|e| HarnessError::stage("evaluate", here(), e))?;
                    report.detail.extend(r.metrics.iter().map(|m| DetailRow {
                        dataset: config.name.clone(),
                        slice: i,
                        algorithm: label.clone(),
                        kind: cfg.kind().to_string(),
                        params: cfg.params_string(),
                        cutoff: m.cutoff,
                        events: r.n_events,
                        hit_rate: m.hit_rate,
                        mrr: m.mrr,
                        precision: m.precision,
                        recall: m.recall,
                        map: m.map,
                        coverage: m.coverage,
                        popularity: m.popularity,
                        code_version: CODE_VERSION.to_string(),
                        fingerprint: fingerprint.clone(),
                    }));
                }
                if bench {
                    let t = time_prediction(
                        model.as_ref(),
                        &split.test,
                        max_cutoff,
                        config.bench.warmup,
                        config.bench.sample_limit,
                    )
                    .map_err(|e| HarnessError::stage("bench", here(), e))?;
                    report.timing.push(TimingRow {
                        dataset: config.name.clone(),
                        slice: Some(i),
                        algorithm: label.clone(),
                        measurement: "fit",
                        trial: None,
                        seconds: Some(train_seconds),
                        train_minutes: Some(train_seconds / 60.0),
                        predictions: None,
                        predict_ms_mean: None,
                        predict_ms_median: None,
                        predict_ms_p95: None,
                        hardware: hardware.clone(),
                    });
                    report.timing.push(TimingRow {
                        dataset: config.name.clone(),
                        slice: Some(i),
                        algorithm: label.clone(),
                        measurement: "predict",
                        trial: None,
                        seconds: None,
                        train_minutes: None,
                        predictions: Some(t.predictions),
                        predict_ms_mean: Some(t.mean_ms),
                        predict_ms_median: Some(t.median_ms),
                        predict_ms_p95: Some(t.p95_ms),
                        hardware: hardware.clone(),
                    });
                }
            }
            if config.has_stage(Stage::Stability) {
                run_stability_stage(config, report, i, label, cfg, &split.train, raw_test)?;
            }
        }
    }
    report.summary = summarize(&report.detail, &algorithms, &config.cutoffs);
    Ok(())
}

fn run_stability_stage(
    config: &ExperimentConfig,
    report: &mut RunReport,
    slice: usize,
    label: &str,
    cfg: &AlgorithmConfig,
    t0: &SessionSet,
    test: &SessionSet,
) -> Result<(), HarnessError> {
    let here = ctx(Some(slice), Some(label));
    let days = split_by_day(test);
    let min_len = config.split.min_session_length;
    let run = |mode| run_stability(cfg, t0, &days, mode, min_len).map_err(|e| HarnessError::stage("stability", here.clone(), e));
    let retraining = run(RetrainMode::Retraining)?;
    let no_retraining = run(RetrainMode::NoRetraining)?;
    for r in [&retraining, &no_retraining] {
        report.stability_rows.extend(r.days.iter().enumerate().map(|(d, day)| StabilityRow {
            dataset: config.name.clone(),
            slice,
            algorithm: label.to_string(),
            mode: r.mode.to_string(),
            day_index: d + 1,
            day: day.day,
            train_sessions: day.train_sessions,
            events: day.metrics.map(|m| m.n_events),
            hit_rate_at_20: day.metrics.map(|m| m.hit_rate),
            mrr_at_20: day.metrics.map(|m| m.mrr),
        }));
    }
    for (metric, re, no) in [
        ("hit_rate_at_20", retraining.hit_rates(), no_retraining.hit_rates()),
        ("mrr_at_20", retraining.mrrs(), no_retraining.mrrs()),
    ] {
        // a slice without any usable day yields an empty drop, not an error
        let drop = relative_drop(&re, &no).ok();
        report.drop_rows.push(DropRow {
            dataset: config.name.clone(),
            slice,
            algorithm: label.to_string(),
            metric,
            drop_percent: drop.map(|d| d.percent),
            days_used: drop.map_or(0, |d| d.days_used),
            zero_days_excluded: drop.map_or(0, |d| d.zero_days_excluded),
        });
    }
    report.stability.push(StabilityRecord {
        slice,
        algorithm: label.to_string(),
        retraining,
        no_retraining,
    });
    Ok(())
}

/// Means of the detail rows over slices, per algorithm and cut-off, summed
/// in slice order.
pub fn summarize(detail: &[DetailRow], algorithms: &[(String, AlgorithmConfig)], cutoffs: &[usize]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (label, cfg) in algorithms {
        for &cutoff in cutoffs {
            let group: Vec<&DetailRow> = detail.iter().filter(|r| &r.algorithm == label && r.cutoff == cutoff).collect();
            let Some(first) = group.first() else { continue };
            let n = group.len() as f64;
            let mean = |f: fn(&DetailRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            rows.push(SummaryRow {
                dataset: first.dataset.clone(),
                algorithm: label.clone(),
                kind: cfg.kind().to_string(),
                params: cfg.params_string(),
                cutoff,
                slices: group.len(),
                events: group.iter().map(|r| r.events).sum(),
                hit_rate: mean(|r| r.hit_rate),
                mrr: mean(|r| r.mrr),
                precision: mean(|r| r.precision),
                recall: mean(|r| r.recall),
                map: mean(|r| r.map),
                coverage: mean(|r| r.coverage),
                popularity: mean(|r| r.popularity),
                code_version: first.code_version.clone(),
                fingerprint: first.fingerprint.clone(),
            });
        }
    }
    rows
}

fn write_outputs(config: &ExperimentConfig, report: &RunReport, status: &str) -> Result<Vec<PathBuf>, HarnessError> {
    let io_err = |e: std::io::Error| HarnessError::stage("output", "", e);
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut files = Vec::new();
    let mut csv_file = |name: String, write: &dyn Fn(&std::path::Path) -> std::io::Result<()>| {
        let path = dir.join(name);
        write(&path).map_err(io_err)?;
        files.push(path);
        Ok::<_, HarnessError>(())
    };
    if !report.detail.is_empty() {
        csv_file("detail.csv".into(), &|p| output::write_csv(p, &report.detail))?;
        csv_file("summary.csv".into(), &|p| output::write_csv(p, &report.summary))?;
    }
    for rec in &report.tuning {
        let rows: Vec<TrialRow> = rec
            .trials
            .iter()
            .map(|t| TrialRow {
                trial: t.index,
                params: crate::algorithms::params_to_string(&t.params),
                mrr_at_20: t.mrr_at_20,
                status: if t.error.is_some() { "failed" } else { "ok" },
                error: t.error.clone().unwrap_or_default(),
            })
            .collect();
        csv_file(format!("trials_{}.csv", rec.algorithm), &|p| output::write_csv(p, &rows))?;
    }
    if !report.tuning.is_empty() {
        let mut doc = toml::Table::new();
        for rec in &report.tuning {
            let mut entry = toml::Table::new();
            entry.insert("kind".into(), rec.best.kind().to_string().into());
            entry.insert("params".into(), toml::Value::Table(rec.best.params()));
            doc.insert(rec.algorithm.clone(), toml::Value::Table(entry));
        }
        let text = toml::to_string(&doc).expect("table serializes");
        csv_file("tuned_params.toml".into(), &|p| fs::write(p, &text))?;
    }
    if !report.stability_rows.is_empty() {
        csv_file("stability.csv".into(), &|p| output::write_csv(p, &report.stability_rows))?;
        csv_file("stability_drop.csv".into(), &|p| output::write_csv(p, &report.drop_rows))?;
    }
    if !report.timing.is_empty() {
        csv_file("timing.csv".into(), &|p| output::write_csv(p, &report.timing))?;
    }
    if let Some(ids) = &report.ids {
        files.extend(output::write_id_maps(dir, ids).map_err(io_err)?);
    }
    let meta_path = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&metadata(config, report, status)).expect("metadata serializes");
    fs::write(&meta_path, text + "\n").map_err(io_err)?;
    files.push(meta_path);
    Ok(files)
}

fn metadata(config: &ExperimentConfig, report: &RunReport, status: &str) -> serde_json::Value {
    let tuning: Vec<serde_json::Value> = report
        .tuning
        .iter()
        .map(|t| {
            serde_json::json!({
                "algorithm": t.algorithm,
                "space": t.space,
                "seed": t.seed,
                "iterations": t.trials.len(),
                "target": format!("mrr@{TARGET_CUTOFF}"),
                "best_trial": t.best_trial,
                "best_mrr_at_20": t.trials[t.best_trial].mrr_at_20,
                "best_params": t.best.params_string(),
            })
        })
        .collect();
    let algorithms: Vec<serde_json::Value> = report
        .algorithms
        .iter()
        .map(|(label, cfg)| serde_json::json!({"name": label, "kind": cfg.kind().to_string(), "params": cfg.params_string()}))
        .collect();
    serde_json::json!({
        "status": status,
        "code_version": CODE_VERSION,
        "formula_fingerprint": formula_fingerprint(),
        "formula_decisions": FORMULA_DECISIONS,
        "dataset": config.name,
        "seed": config.seed,
        "stages": config.stages.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "config": config.to_toml_string(),
        "data": {
            "raw": report.raw_stats,
            "filtered": report.filtered_stats,
            "filter_mode": config.split.filter_mode,
        },
        "slices": report.slices,
        "algorithms": algorithms,
        "tuning": tuning,
        "bench": if config.has_stage(Stage::Bench) {
            serde_json::json!({"warmup": config.bench.warmup, "sample_limit": config.bench.sample_limit})
        } else {
            serde_json::Value::Null
        },
    })
}
