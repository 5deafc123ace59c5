//! Training time and per-prediction latency.

use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::algorithms::{AlgorithmConfig, FitError, FittedModel, Recommender};
use crate::corpus::SessionSet;
use crate::evaluation::enumerate_events;

pub const DEFAULT_WARMUP: usize = 100;
pub const DEFAULT_SAMPLE_LIMIT: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("test set has no prediction events")]
    NoEvents,
    #[error("sample_limit must be >= 1")]
    ZeroSampleLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionTiming {
    pub predictions: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub train_seconds: f64,
    pub prediction: PredictionTiming,
    pub hardware: String,
}

impl TimingReport {
    pub fn train_minutes(&self) -> f64 {
        self.train_seconds / 60.0
    }
}

/// Fits `config` and returns the model with the fit's wall-clock seconds.
pub fn time_training(config: &AlgorithmConfig, train: &SessionSet) -> Result<(FittedModel, f64), FitError> {
    let start = Instant::now();
    let model = config.fit(train)?;
    Ok((model, start.elapsed().as_secs_f64()))
}

/// Times single recommendation calls of length `k` over the prediction
/// events of `test`, in order. The first `warmup` calls are made but not
/// measured, except that at least one call is always measured.
pub fn time_prediction(
    model: &dyn Recommender,
    test: &SessionSet,
    k: usize,
    warmup: usize,
    sample_limit: usize,
) -> Result<PredictionTiming, BenchError> {
    if sample_limit == 0 {
        return Err(BenchError::ZeroSampleLimit);
    }
    let events = enumerate_events(test);
    if events.is_empty() {
        return Err(BenchError::NoEvents);
    }
    let warmup = warmup.min(events.len() - 1);
    for ev in &events[..warmup] {
        black_box(model.recommend(ev.prefix, ev.now, k));
    }
    let mut ms: Vec<f64> = events[warmup..]
        .iter()
        .take(sample_limit)
        .map(|ev| {
            let start = Instant::now();
            black_box(model.recommend(ev.prefix, ev.now, k));
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    let mean_ms = ms.iter().sum::<f64>() / ms.len() as f64;
    ms.sort_by(f64::total_cmp);
    Ok(PredictionTiming {
        predictions: ms.len(),
        mean_ms,
        median_ms: median(&ms),
        p95_ms: ms[nearest_rank(ms.len(), 0.95)],
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn nearest_rank(n: usize, q: f64) -> usize {
    ((q * n as f64).ceil() as usize).clamp(1, n) - 1
}

/// CPU model name and available parallelism.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu}; {threads} threads; {}", std::env::consts::OS)
}
