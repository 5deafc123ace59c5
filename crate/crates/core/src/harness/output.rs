//! Result rows and file writers.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::corpus::{IdMap, SessionSet, MILLIS_PER_SECOND};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetailRow {
    pub dataset: String,
    pub slice: usize,
    pub algorithm: String,
    pub kind: String,
    pub params: String,
    pub cutoff: usize,
    pub events: usize,
    pub hit_rate: f64,
    pub mrr: f64,
    pub precision: f64,
    pub recall: f64,
    pub map: f64,
    pub coverage: f64,
    pub popularity: f64,
    pub code_version: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub algorithm: String,
    pub kind: String,
    pub params: String,
    pub cutoff: usize,
    pub slices: usize,
    pub events: usize,
    pub hit_rate: f64,
    pub mrr: f64,
    pub precision: f64,
    pub recall: f64,
    pub map: f64,
    pub coverage: f64,
    pub popularity: f64,
    pub code_version: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub params: String,
    pub mrr_at_20: f64,
    pub status: &'static str,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub dataset: String,
    pub slice: usize,
    pub algorithm: String,
    pub mode: String,
    pub day_index: usize,
    pub day: i64,
    pub train_sessions: usize,
    /// Empty for days without prediction events.
    pub events: Option<usize>,
    pub hit_rate_at_20: Option<f64>,
    pub mrr_at_20: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropRow {
    pub dataset: String,
    pub slice: usize,
    pub algorithm: String,
    pub metric: &'static str,
    pub drop_percent: Option<f64>,
    pub days_used: usize,
    pub zero_days_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub dataset: String,
    pub slice: Option<usize>,
    pub algorithm: String,
    /// `fit`, `predict` or `trial`.
    pub measurement: &'static str,
    pub trial: Option<usize>,
    pub seconds: Option<f64>,
    pub train_minutes: Option<f64>,
    pub predictions: Option<usize>,
    pub predict_ms_mean: Option<f64>,
    pub predict_ms_median: Option<f64>,
    pub predict_ms_p95: Option<f64>,
    pub hardware: String,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
}

/// Writes the dense-to-raw identifier tables.
pub fn write_id_maps(dir: &Path, ids: &IdMap) -> io::Result<Vec<PathBuf>> {
    let items = dir.join("ids_items.csv");
    let mut w = csv::Writer::from_path(&items)?;
    w.write_record(["item_id", "raw_item_id"])?;
    for (dense, raw) in ids.items() {
        w.write_record([dense.to_string(), raw.to_string()])?;
    }
    w.flush()?;
    let sessions = dir.join("ids_sessions.csv");
    let mut w = csv::Writer::from_path(&sessions)?;
    w.write_record(["session_id", "raw_session_id"])?;
    for (dense, raw) in ids.sessions() {
        w.write_record([dense.to_string(), raw.to_string()])?;
    }
    w.flush()?;
    Ok(vec![items, sessions])
}

/// Writes sessions as a `session_id,item_id,timestamp` log with timestamps
/// in seconds, readable by the default column layout.
pub fn write_sessions_csv(path: &Path, data: &SessionSet) -> io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["session_id", "item_id", "timestamp"])?;
    for s in data.sessions() {
        for ev in s.events() {
            let t = ev.timestamp;
            let secs = if t % MILLIS_PER_SECOND == 0 {
                (t / MILLIS_PER_SECOND).to_string()
            } else {
                format!("{}.{:03}", t / MILLIS_PER_SECOND, t % MILLIS_PER_SECOND)
            };
            w.write_record([ev.session_id.to_string(), ev.item_id.to_string(), secs])?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_event_log, sessionize, ColumnSpec, Session};

    #[test]
    fn sessions_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let data = SessionSet::from_sessions(vec![
            Session::new(0, vec![3, 4], vec![1000, 2500]),
            Session::new(1, vec![5, 3, 4], vec![7000, 8000, 9001]),
        ]);
        let path = dir.path().join("nested/log.csv");
        write_sessions_csv(&path, &data).unwrap();
        let log = load_event_log(&path, &ColumnSpec::default()).unwrap();
        let back = sessionize(&log.events);
        let raw = |s: &SessionSet, ids: Option<&IdMap>| -> Vec<(u64, Vec<u64>, Vec<i64>)> {
            s.sessions()
                .iter()
                .map(|x| {
                    let map_i = |i: u32| ids.map_or(i as u64, |m| m.raw_item(i).unwrap());
                    let sid = ids.map_or(x.id as u64, |m| m.raw_session(x.id).unwrap());
                    (sid, x.items.iter().map(|&i| map_i(i)).collect(), x.times.clone())
                })
                .collect()
        };
        assert_eq!(raw(&back, Some(&log.ids)), raw(&data, None));
    }

    #[test]
    fn optional_fields_are_blank() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let row = StabilityRow {
            dataset: "d".into(),
            slice: 0,
            algorithm: "sr".into(),
            mode: "retraining".into(),
            day_index: 1,
            day: 12,
            train_sessions: 3,
            events: None,
            hit_rate_at_20: None,
            mrr_at_20: Some(0.5),
        };
        write_csv(&path, &[row]).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(
            text,
            "dataset,slice,algorithm,mode,day_index,day,train_sessions,events,hit_rate_at_20,mrr_at_20\n\
             d,0,sr,retraining,1,12,3,,,0.5\n"
        );
    }
}
