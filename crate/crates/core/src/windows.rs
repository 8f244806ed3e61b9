//! Fixed-length analysis windows, team size and normalised productivity.
//!
//! Windows are non-overlapping, `window_days` long (42 weeks by default)
//! and anchored at the project's first commit. A window only counts when
//! the history covers it completely, unless `drop_partial_tail` is off.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::format_ts;
use crate::metrics::FileMetricVector;
use crate::networks::NetworkMetrics;
use crate::ownership::EventRow;

#[derive(Debug, thiserror::Error)]
pub enum WindowError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("no code delta for retained commit {0}")]
    MissingDelta(String),
    #[error("window length {0} days is not a whole number of weeks")]
    InvalidLength(i64),
    #[error("{measure} = {value} cannot be {transform}-transformed (project {project}, window {window})")]
    NonPositiveUnderLog { measure: String, value: f64, transform: &'static str, project: String, window: usize },
    #[error("unknown measure `{0}`")]
    UnknownMeasure(String),
    #[error("observation table row {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub window_days: i64,
    pub drop_partial_tail: bool,
    /// Length of the trailing window behind point-in-time team sizes.
    pub moving_window_days: i64,
    /// Report productivity per day instead of per window.
    pub per_day: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window_days: 294, drop_partial_tail: true, moving_window_days: 294, per_day: false }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), WindowError> {
        if self.window_days <= 0 || self.window_days % 7 != 0 {
            return Err(WindowError::InvalidLength(self.window_days));
        }
        Ok(())
    }

    pub fn length(&self) -> Duration {
        Duration::days(self.window_days)
    }

    /// Divisor applied for the window length.
    pub fn time_scale(&self) -> f64 {
        if self.per_day {
            self.window_days as f64
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub index: usize,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    /// Indices into the timestamp slice given to [`segment_windows`].
    pub members: Vec<usize>,
}

/// Splits `[anchor, history_end]` into windows and assigns each timestamp
/// to the window containing it. Window `j` covers
/// `[anchor + j*len, anchor + (j+1)*len)`.
pub fn segment_windows(
    timestamps: &[DateTime<Utc>],
    anchor: DateTime<Utc>,
    history_end: DateTime<Utc>,
    cfg: &WindowConfig,
) -> Result<Vec<Window>, WindowError> {
    cfg.validate()?;
    if timestamps.is_empty() {
        return Err(WindowError::EmptyHistory);
    }
    let len = cfg.length();
    let span = (history_end - anchor).num_seconds().max(0);
    let full = (span / len.num_seconds()) as usize;
    let count = if cfg.drop_partial_tail { full } else { full + 1 };
    let mut windows: Vec<Window> = (0..count)
        .map(|j| {
            let start = anchor + len * j as i32;
            Window { index: j, start, end: start + len, members: Vec::new() }
        })
        .collect();
    for (i, ts) in timestamps.iter().enumerate() {
        if *ts < anchor {
            continue;
        }
        let j = ((*ts - anchor).num_seconds() / len.num_seconds()) as usize;
        if let Some(w) = windows.get_mut(j) {
            w.members.push(i);
        }
    }
    Ok(windows)
}

/// Distinct contributors.
pub fn team_size<'a, I: IntoIterator<Item = &'a str>>(authors: I) -> usize {
    authors.into_iter().collect::<HashSet<_>>().len()
}

/// Distinct authors with a commit in `(t - moving_window_days, t]`.
pub fn moving_team_size(commits: &[(DateTime<Utc>, &str)], t: DateTime<Utc>, cfg: &WindowConfig) -> usize {
    let from = t - Duration::days(cfg.moving_window_days);
    team_size(commits.iter().filter(|(ts, _)| *ts > from && *ts <= t).map(|(_, a)| *a))
}

pub const PRODUCTIVITY_MEASURES: [&str; 8] = ["comms", "events", "levd", "nloc", "tokens", "funcs", "cycc", "haleff"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Productivity {
    pub comms: f64,
    pub events: f64,
    pub levd: f64,
    pub nloc: f64,
    pub tokens: f64,
    pub funcs: f64,
    pub cycc: f64,
    pub haleff: f64,
}

impl Productivity {
    pub fn values(&self) -> [f64; 8] {
        [self.comms, self.events, self.levd, self.nloc, self.tokens, self.funcs, self.cycc, self.haleff]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        PRODUCTIVITY_MEASURES.iter().position(|m| *m == name).map(|i| self.values()[i])
    }

    fn from_values(v: [f64; 8]) -> Self {
        Self { comms: v[0], events: v[1], levd: v[2], nloc: v[3], tokens: v[4], funcs: v[5], cycc: v[6], haleff: v[7] }
    }

    pub fn is_inactive(&self) -> bool {
        self.values().iter().all(|v| *v == 0.0)
    }
}

/// Sums commit counts, edit events, Levenshtein distance and code deltas
/// over the window, then divides by team size and the time scale.
pub fn aggregate_productivity(
    commits: &[&str],
    deltas: &BTreeMap<String, FileMetricVector>,
    events: &[EventRow],
    team_size: usize,
    time_scale: f64,
) -> Result<Productivity, WindowError> {
    if team_size == 0 || commits.is_empty() {
        return Ok(Productivity::default());
    }
    let in_window: BTreeSet<&str> = commits.iter().copied().collect();
    let mut code = FileMetricVector::default();
    for c in &in_window {
        let d = deltas.get(*c).ok_or_else(|| WindowError::MissingDelta(c.to_string()))?;
        code = code + *d;
    }
    let mut n_events = 0u64;
    let mut levd = 0u64;
    for e in events.iter().filter(|e| in_window.contains(e.commit_hash.as_str())) {
        n_events += 1;
        levd += e.lev_distance as u64;
    }
    let raw = [
        in_window.len() as f64,
        n_events as f64,
        levd as f64,
        code.nloc as f64,
        code.token_count as f64,
        code.function_count as f64,
        code.cyclomatic as f64,
        code.halstead.effort,
    ];
    let norm = team_size as f64 * time_scale;
    Ok(Productivity::from_values(raw.map(|v| v / norm)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowObservation {
    pub project_id: String,
    pub window_index: usize,
    pub start_ts: DateTime<Utc>,
    pub end_ts: DateTime<Utc>,
    pub team_size: usize,
    pub productivity: Productivity,
    pub network: Option<NetworkMetrics>,
}

pub const NETWORK_MEASURES: [&str; 8] = ["n", "edges", "dens", "diam", "clustc", "ind", "fmodr", "eigg"];

impl WindowObservation {
    /// Value of a named column (`team_size`, a productivity or a network
    /// measure).
    pub fn value(&self, name: &str) -> Option<f64> {
        if name == "team_size" {
            return Some(self.team_size as f64);
        }
        self.productivity.get(name).or_else(|| self.network.as_ref().and_then(|n| n.get(name)))
    }
}

/// Drops windows where every productivity measure is zero.
pub fn drop_inactive(obs: Vec<WindowObservation>) -> Vec<WindowObservation> {
    obs.into_iter().filter(|o| !o.productivity.is_inactive()).collect()
}

// ---------------------------------------------------------------------------
// Transforms

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Log,
    Sqrt,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Log => "log",
            Transform::Sqrt => "sqrt",
        }
    }

    pub fn apply(self, v: f64) -> Option<f64> {
        match self {
            Transform::Identity => Some(v),
            Transform::Log => (v > 0.0).then(|| v.ln()),
            Transform::Sqrt => (v >= 0.0).then(|| v.sqrt()),
        }
    }
}

/// Transform per column; columns not listed are left unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransformSpec(pub BTreeMap<String, Transform>);

impl Default for TransformSpec {
    fn default() -> Self {
        let mut m: BTreeMap<String, Transform> =
            PRODUCTIVITY_MEASURES.iter().map(|p| (p.to_string(), Transform::Log)).collect();
        m.insert("team_size".into(), Transform::Log);
        m.insert("ind".into(), Transform::Log);
        m.insert("fmodr".into(), Transform::Identity);
        Self(m)
    }
}

impl TransformSpec {
    pub fn get(&self, column: &str) -> Transform {
        self.0.get(column).copied().unwrap_or(Transform::Identity)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.0).expect("string map serialises")
    }

    pub fn from_toml_str(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s).map(TransformSpec)
    }
}

pub fn observation_columns() -> Vec<&'static str> {
    let mut cols = vec!["team_size"];
    cols.extend(PRODUCTIVITY_MEASURES);
    cols.extend(NETWORK_MEASURES);
    cols
}

/// Observations as named numeric columns after transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedTable {
    pub keys: Vec<(String, usize)>,
    pub columns: BTreeMap<String, Vec<f64>>,
    pub spec: TransformSpec,
}

/// Applies `spec` to every available column. Columns of missing network
/// measures are omitted.
pub fn apply_transforms(obs: &[WindowObservation], spec: &TransformSpec) -> Result<TransformedTable, WindowError> {
    for name in spec.0.keys() {
        if !observation_columns().contains(&name.as_str()) {
            return Err(WindowError::UnknownMeasure(name.clone()));
        }
    }
    let mut columns = BTreeMap::new();
    for col in observation_columns() {
        if obs.iter().any(|o| o.value(col).is_none()) {
            continue;
        }
        let t = spec.get(col);
        let mut values = Vec::with_capacity(obs.len());
        for o in obs {
            let v = o.value(col).unwrap();
            values.push(t.apply(v).ok_or_else(|| WindowError::NonPositiveUnderLog {
                measure: col.to_string(),
                value: v,
                transform: t.name(),
                project: o.project_id.clone(),
                window: o.window_index,
            })?);
        }
        columns.insert(col.to_string(), values);
    }
    Ok(TransformedTable {
        keys: obs.iter().map(|o| (o.project_id.clone(), o.window_index)).collect(),
        columns,
        spec: spec.clone(),
    })
}

impl TransformedTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let names: Vec<&String> = self.columns.keys().collect();
        let mut header = vec!["project_id".to_string(), "window_index".to_string()];
        header.extend(names.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (i, (p, j)) in self.keys.iter().enumerate() {
            let mut rec = vec![p.clone(), j.to_string()];
            rec.extend(names.iter().map(|n| self.columns[*n][i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Observation table

pub fn observation_header() -> Vec<&'static str> {
    let mut h = vec!["project_id", "window_index", "start_ts", "end_ts"];
    h.extend(observation_columns());
    h
}

pub fn write_observations<W: Write>(writer: W, obs: &[WindowObservation]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(observation_header())?;
    for o in obs {
        let mut rec = vec![
            o.project_id.clone(),
            o.window_index.to_string(),
            format_ts(&o.start_ts),
            format_ts(&o.end_ts),
            o.team_size.to_string(),
        ];
        rec.extend(o.productivity.values().iter().map(|v| v.to_string()));
        match &o.network {
            Some(n) => rec.extend(n.values().iter().map(|v| v.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), NETWORK_MEASURES.len())),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations<R: Read>(reader: R) -> Result<Vec<WindowObservation>, WindowError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != observation_header() {
        return Err(WindowError::Malformed { line: 1, msg: "unexpected header".into() });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| WindowError::Malformed { line, msg };
        let f = |k: usize| -> Result<f64, WindowError> {
            rec[k].parse::<f64>().map_err(|_| bad(format!("bad number `{}`", &rec[k])))
        };
        let ts = |k: usize| -> Result<DateTime<Utc>, WindowError> {
            DateTime::parse_from_rfc3339(&rec[k]).map(|d| d.with_timezone(&Utc)).map_err(|e| bad(e.to_string()))
        };
        let mut prod = [0.0; 8];
        for (j, p) in prod.iter_mut().enumerate() {
            *p = f(5 + j)?;
        }
        let network = if rec[13].is_empty() {
            None
        } else {
            let mut v = [0.0; 8];
            for (j, x) in v.iter_mut().enumerate() {
                *x = f(13 + j)?;
            }
            Some(NetworkMetrics::from_values(v))
        };
        out.push(WindowObservation {
            project_id: rec[0].to_string(),
            window_index: rec[1].parse().map_err(|_| bad("bad window index".into()))?,
            start_ts: ts(2)?,
            end_ts: ts(3)?,
            team_size: rec[4].parse().map_err(|_| bad("bad team size".into()))?,
            productivity: Productivity::from_values(prod),
            network,
        });
    }
    Ok(out)
}
