//! Interaction logs, sessions and the canonical in-memory dataset.
//!
//! Raw identifiers are remapped to dense `u32` ids when a log is loaded so
//! that every downstream table can be array-backed. The mapping is kept in an
//! [`IdMap`] and written next to the result files by the harness.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense item identifier.
pub type ItemId = u32;
/// Dense session identifier.
pub type SessionId = u32;
/// Milliseconds since the Unix epoch.
pub type Timestamp = i64;

pub const MILLIS_PER_SECOND: i64 = 1_000;
pub const MILLIS_PER_DAY: i64 = 86_400_000;

/// Calendar day (UTC) of a timestamp.
pub fn day_of(ts: Timestamp) -> i64 {
    ts.div_euclid(MILLIS_PER_DAY)
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: header has no column named `{column}`")]
    MissingColumn { path: PathBuf, column: String },
}

/// One user interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub session_id: SessionId,
    pub item_id: ItemId,
    pub timestamp: Timestamp,
}

impl Event {
    pub fn new(session_id: SessionId, item_id: ItemId, timestamp: Timestamp) -> Self {
        Event {
            session_id,
            item_id,
            timestamp,
        }
    }
}

/// A column is addressed either by its header name or by a zero-based index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

/// Layout of a delimiter-separated interaction log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub session: ColumnRef,
    pub item: ColumnRef,
    pub time: ColumnRef,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_true")]
    pub header: bool,
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            session: ColumnRef::Index(0),
            item: ColumnRef::Index(1),
            time: ColumnRef::Index(2),
            delimiter: ',',
            header: true,
        }
    }
}

/// Mapping between the raw identifiers of a log file and dense ids.
///
/// Dense ids are assigned in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    items: Vec<u64>,
    sessions: Vec<u64>,
    item_lookup: HashMap<u64, ItemId>,
    session_lookup: HashMap<u64, SessionId>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern_item(&mut self, raw: u64) -> ItemId {
        intern(&mut self.items, &mut self.item_lookup, raw)
    }

    pub fn intern_session(&mut self, raw: u64) -> SessionId {
        intern(&mut self.sessions, &mut self.session_lookup, raw)
    }

    pub fn raw_item(&self, id: ItemId) -> Option<u64> {
        self.items.get(id as usize).copied()
    }

    pub fn raw_session(&self, id: SessionId) -> Option<u64> {
        self.sessions.get(id as usize).copied()
    }

    pub fn dense_item(&self, raw: u64) -> Option<ItemId> {
        self.item_lookup.get(&raw).copied()
    }

    pub fn dense_session(&self, raw: u64) -> Option<SessionId> {
        self.session_lookup.get(&raw).copied()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// `(dense, raw)` pairs for items, in dense order.
    pub fn items(&self) -> impl Iterator<Item = (ItemId, u64)> + '_ {
        self.items.iter().enumerate().map(|(i, &r)| (i as ItemId, r))
    }

    pub fn sessions(&self) -> impl Iterator<Item = (SessionId, u64)> + '_ {
        self.sessions.iter().enumerate().map(|(i, &r)| (i as SessionId, r))
    }
}

fn intern(table: &mut Vec<u64>, lookup: &mut HashMap<u64, u32>, raw: u64) -> u32 {
    *lookup.entry(raw).or_insert_with(|| {
        table.push(raw);
        (table.len() - 1) as u32
    })
}

/// Events of a log file (with dense ids) together with the id mapping.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    pub events: Vec<Event>,
    pub ids: IdMap,
}

/// Parses a time field given in integer or fractional seconds into
/// milliseconds. Sub-millisecond precision is truncated.
pub fn parse_seconds(field: &str) -> Option<Timestamp> {
    let field = field.trim();
    if let Ok(secs) = field.parse::<i64>() {
        return secs.checked_mul(MILLIS_PER_SECOND);
    }
    let secs: f64 = field.parse().ok()?;
    if !secs.is_finite() {
        return None;
    }
    let millis = (secs * MILLIS_PER_SECOND as f64).trunc();
    if millis.abs() >= i64::MAX as f64 {
        return None;
    }
    Some(millis as Timestamp)
}

/// Reads a delimiter-separated interaction log.
///
/// Every data row must parse; the first bad row aborts the load with its
/// 1-based line number.
pub fn load_event_log(path: &Path, spec: &ColumnSpec) -> Result<EventLog, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, message: String| CorpusError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut header: Option<Vec<String>> = None;
    if spec.header {
        match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| parse_err(1, e.to_string()))?;
                header = Some(
                    line.trim_end_matches('\r')
                        .split(spec.delimiter)
                        .map(|s| s.trim().to_string())
                        .collect(),
                );
            }
            None => return Ok(EventLog::default()),
        }
    }
    let resolve = |col: &ColumnRef| -> Result<usize, CorpusError> {
        match col {
            ColumnRef::Index(i) => Ok(*i),
            ColumnRef::Name(name) => header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| CorpusError::MissingColumn {
                    path: path.to_path_buf(),
                    column: name.clone(),
                }),
        }
    };
    let (s_col, i_col, t_col) = (resolve(&spec.session)?, resolve(&spec.item)?, resolve(&spec.time)?);

    let mut log = EventLog::default();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(spec.delimiter).collect();
        let field = |col: usize, what: &str| {
            fields
                .get(col)
                .map(|f| f.trim())
                .ok_or_else(|| parse_err(line_no, format!("missing {what} column {col}")))
        };
        let raw_session = field(s_col, "session")?;
        let raw_item = field(i_col, "item")?;
        let raw_time = field(t_col, "time")?;
        let session: u64 = raw_session
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid session id `{raw_session}`")))?;
        let item: u64 = raw_item
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid item id `{raw_item}`")))?;
        let timestamp = parse_seconds(raw_time)
            .ok_or_else(|| parse_err(line_no, format!("invalid timestamp `{raw_time}`")))?;
        if timestamp < 0 {
            return Err(parse_err(line_no, format!("negative timestamp `{raw_time}`")));
        }
        let session_id = log.ids.intern_session(session);
        let item_id = log.ids.intern_item(item);
        log.events.push(Event::new(session_id, item_id, timestamp));
    }
    Ok(log)
}

/// A time-ordered sequence of interactions sharing one session id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Session {
    pub id: SessionId,
    pub items: Vec<ItemId>,
    pub times: Vec<Timestamp>,
}

impl Session {
    /// Builds a session from parallel item/time vectors, sorting stably by time.
    pub fn new(id: SessionId, items: Vec<ItemId>, times: Vec<Timestamp>) -> Self {
        assert_eq!(items.len(), times.len(), "items and times must align");
        let mut session = Session { id, items, times };
        session.sort_stable();
        session
    }

    fn sort_stable(&mut self) {
        if self.times.windows(2).all(|w| w[0] <= w[1]) {
            return;
        }
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.sort_by_key(|&i| self.times[i]);
        self.items = order.iter().map(|&i| self.items[i]).collect();
        self.times = order.iter().map(|&i| self.times[i]).collect();
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn start_time(&self) -> Timestamp {
        self.times.first().copied().unwrap_or(0)
    }

    pub fn end_time(&self) -> Timestamp {
        self.times.last().copied().unwrap_or(0)
    }

    pub fn events(&self) -> impl Iterator<Item = Event> + '_ {
        self.items
            .iter()
            .zip(&self.times)
            .map(move |(&item, &t)| Event::new(self.id, item, t))
    }

    /// Keeps the events whose item satisfies `keep`.
    pub fn retain_items(&self, mut keep: impl FnMut(ItemId) -> bool) -> Session {
        let (items, times) = self
            .items
            .iter()
            .zip(&self.times)
            .filter(|(&i, _)| keep(i))
            .map(|(&i, &t)| (i, t))
            .unzip();
        Session {
            id: self.id,
            items,
            times,
        }
    }
}

/// Sessions ordered by end time together with their item vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionSet {
    sessions: Vec<Session>,
    vocabulary: BTreeSet<ItemId>,
}

impl SessionSet {
    /// Orders sessions by `(end_time, id)` and derives the vocabulary.
    /// Empty sessions are discarded.
    pub fn from_sessions(mut sessions: Vec<Session>) -> Self {
        sessions.retain(|s| !s.is_empty());
        sessions.sort_by_key(|s| (s.end_time(), s.id));
        let vocabulary = sessions.iter().flat_map(|s| s.items.iter().copied()).collect();
        SessionSet {
            sessions,
            vocabulary,
        }
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn into_sessions(self) -> Vec<Session> {
        self.sessions
    }

    pub fn vocabulary(&self) -> &BTreeSet<ItemId> {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.sessions.iter().map(Session::len).sum()
    }

    pub fn n_items(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn first_time(&self) -> Option<Timestamp> {
        self.sessions.iter().map(Session::start_time).min()
    }

    pub fn last_time(&self) -> Option<Timestamp> {
        self.sessions.last().map(Session::end_time)
    }

    /// Number of calendar days from the first to the last event, inclusive.
    pub fn span_days(&self) -> i64 {
        match (self.first_time(), self.last_time()) {
            (Some(first), Some(last)) => day_of(last) - day_of(first) + 1,
            _ => 0,
        }
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            actions: self.n_events(),
            sessions: self.len(),
            items: self.n_items(),
            days: self.span_days(),
        }
    }

    /// Sessions of both sets, re-sorted.
    pub fn union(&self, other: &SessionSet) -> SessionSet {
        let mut all = self.sessions.clone();
        all.extend(other.sessions.iter().cloned());
        SessionSet::from_sessions(all)
    }

    pub fn filter(&self, keep: impl FnMut(&&Session) -> bool) -> SessionSet {
        SessionSet::from_sessions(self.sessions.iter().filter(keep).cloned().collect())
    }
}

/// Dataset characteristics: actions, sessions, items and days covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub actions: usize,
    pub sessions: usize,
    pub items: usize,
    pub days: i64,
}

/// Groups events into sessions.
pub fn sessionize(events: &[Event]) -> SessionSet {
    let mut grouped: HashMap<SessionId, (Vec<ItemId>, Vec<Timestamp>)> = HashMap::new();
    for e in events {
        let entry = grouped.entry(e.session_id).or_default();
        entry.0.push(e.item_id);
        entry.1.push(e.timestamp);
    }
    let sessions = grouped
        .into_iter()
        .map(|(id, (items, times))| Session::new(id, items, times))
        .collect();
    SessionSet::from_sessions(sessions)
}
