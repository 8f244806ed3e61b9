//! Line ownership replay.
//!
//! Every line of every text file has exactly one owner: the identity that
//! last added or modified it. Replaying a commit diffs each changed file
//! against the first parent's state and emits one [`EditEvent`] per added,
//! modified or deleted line. A modification or deletion of a line owned by
//! `A`, made by `B`, is a co-edit `A -> B`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use similar::{Algorithm, DiffOp};

use crate::ingest::{ChangeAction, CommitRecord};

#[derive(Debug, thiserror::Error)]
pub enum OwnershipError {
    #[error("commit {commit}: parent {parent} has not been replayed")]
    StateMissing { commit: String, parent: String },
    #[error("no commit totals to filter")]
    EmptyInput,
    #[error("invalid percentile bounds ({0}, {1})")]
    InvalidBounds(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Addition,
    Deletion,
    Modification,
}

impl EditKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EditKind::Addition => "addition",
            EditKind::Deletion => "deletion",
            EditKind::Modification => "modification",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditEvent {
    pub commit_hash: String,
    pub editor: String,
    pub path: String,
    pub kind: EditKind,
    pub pre_line_text: Option<String>,
    pub post_line_text: Option<String>,
    pub previous_owner: Option<String>,
    pub lev_distance: usize,
    /// Set for events produced by merge commits.
    pub from_merge: bool,
}

impl EditEvent {
    /// Co-edits are modifications and deletions of an owned line.
    pub fn is_coedit(&self) -> bool {
        self.kind != EditKind::Addition && self.previous_owner.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OwnedLine {
    pub owner: Arc<str>,
    pub text: String,
}

/// Per-path owned lines. Files untouched by a commit share storage with
/// the parent state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OwnershipState {
    pub files: BTreeMap<String, Arc<Vec<OwnedLine>>>,
}

impl OwnershipState {
    pub fn line_count(&self) -> usize {
        self.files.values().map(|f| f.len()).sum()
    }

    /// `(owner, text)` pairs per path; convenient for comparisons.
    pub fn snapshot(&self) -> BTreeMap<String, Vec<(String, String)>> {
        self.files
            .iter()
            .map(|(p, lines)| {
                (p.clone(), lines.iter().map(|l| (l.owner.to_string(), l.text.clone())).collect())
            })
            .collect()
    }
}

/// Splits on `\n`; a trailing newline does not start another line.
pub fn split_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }
    text.strip_suffix('\n').unwrap_or(text).split('\n').collect()
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if lc == sc { diag } else { 1 + diag.min(up).min(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

/// Result of positional pairing inside one replace hunk, as indices into
/// the hunk's removed and added lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HunkPairing {
    pub modifications: Vec<(usize, usize)>,
    pub deletions: Vec<usize>,
    pub additions: Vec<usize>,
}

pub fn pair_hunk_lines<T>(removed: &[T], added: &[T]) -> HunkPairing {
    let paired = removed.len().min(added.len());
    HunkPairing {
        modifications: (0..paired).map(|i| (i, i)).collect(),
        deletions: (paired..removed.len()).collect(),
        additions: (paired..added.len()).collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayOptions {
    /// Keep events of merge commits in downstream aggregation.
    pub emit_merges: bool,
    /// Retain the state of every commit in [`Replay::states`].
    pub keep_states: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReplayStats {
    pub path_conflicts: usize,
    pub binary_skipped: usize,
    /// Modify/rename/delete of a path the parent state does not hold.
    pub missing_parent_files: usize,
}

#[derive(Debug, Default)]
pub struct Replay {
    pub events: Vec<EditEvent>,
    /// Per-commit states; empty unless `keep_states` was requested.
    pub states: HashMap<String, OwnershipState>,
    pub stats: ReplayStats,
}

impl Replay {
    /// Events used for aggregation under the given merge policy.
    pub fn aggregated<'a>(&'a self, opts: &'a ReplayOptions) -> impl Iterator<Item = &'a EditEvent> + 'a {
        self.events.iter().filter(move |e| opts.emit_merges || !e.from_merge)
    }
}

fn diff_file(
    commit: &CommitRecord,
    editor: &Arc<str>,
    path: &str,
    old: &[OwnedLine],
    new_text: &str,
    events: &mut Vec<EditEvent>,
) -> Vec<OwnedLine> {
    let old_texts: Vec<&str> = old.iter().map(|l| l.text.as_str()).collect();
    let new_texts = split_lines(new_text);
    let ops = similar::capture_diff_slices(Algorithm::Myers, &old_texts, &new_texts);
    let mut out: Vec<OwnedLine> = Vec::with_capacity(new_texts.len());
    let mut removed: Vec<usize> = Vec::new();
    let mut added: Vec<usize> = Vec::new();

    let mut flush = |removed: &mut Vec<usize>, added: &mut Vec<usize>, out: &mut Vec<OwnedLine>| {
        if removed.is_empty() && added.is_empty() {
            return;
        }
        let pairing = pair_hunk_lines(removed, added);
        let mut hunk_events: Vec<(usize, EditEvent)> = Vec::new();
        let event = |kind, pre: Option<&OwnedLine>, post: Option<&str>| EditEvent {
            commit_hash: commit.hash.clone(),
            editor: editor.to_string(),
            path: path.to_string(),
            kind,
            pre_line_text: pre.map(|l| l.text.clone()),
            post_line_text: post.map(str::to_string),
            previous_owner: pre.map(|l| l.owner.to_string()),
            lev_distance: levenshtein(pre.map_or("", |l| l.text.as_str()), post.unwrap_or("")),
            from_merge: commit.is_merge,
        };
        for &(r, a) in &pairing.modifications {
            let pre = &old[removed[r]];
            hunk_events.push((a, event(EditKind::Modification, Some(pre), Some(new_texts[added[a]]))));
        }
        for &r in &pairing.deletions {
            hunk_events.push((added.len() + r, event(EditKind::Deletion, Some(&old[removed[r]]), None)));
        }
        for &a in &pairing.additions {
            hunk_events.push((a, event(EditKind::Addition, None, Some(new_texts[added[a]]))));
        }
        // Pre-line order, additions after the paired lines they follow.
        hunk_events.sort_by_key(|(k, _)| *k);
        events.extend(hunk_events.into_iter().map(|(_, e)| e));
        for &a in added.iter() {
            out.push(OwnedLine { owner: editor.clone(), text: new_texts[a].to_string() });
        }
        removed.clear();
        added.clear();
    };

    for op in ops {
        match op {
            DiffOp::Equal { old_index, len, .. } => {
                flush(&mut removed, &mut added, &mut out);
                out.extend(old[old_index..old_index + len].iter().cloned());
            }
            DiffOp::Delete { old_index, old_len, .. } => removed.extend(old_index..old_index + old_len),
            DiffOp::Insert { new_index, new_len, .. } => added.extend(new_index..new_index + new_len),
            DiffOp::Replace { old_index, old_len, new_index, new_len } => {
                removed.extend(old_index..old_index + old_len);
                added.extend(new_index..new_index + new_len);
            }
        }
    }
    flush(&mut removed, &mut added, &mut out);
    out
}

fn apply_commit(
    commit: &CommitRecord,
    parent: &OwnershipState,
    events: &mut Vec<EditEvent>,
    stats: &mut ReplayStats,
) -> OwnershipState {
    let editor: Arc<str> = Arc::from(commit.author());
    let mut child = parent.clone();
    let mut changes: Vec<_> = commit.changes.iter().collect();
    changes.sort_by(|a, b| a.path.cmp(&b.path));

    for ch in &changes {
        if matches!(ch.action, ChangeAction::Delete | ChangeAction::Rename) || ch.is_binary {
            child.files.remove(ch.source_path());
        }
    }
    let empty: Vec<OwnedLine> = Vec::new();
    for ch in changes {
        if ch.is_binary {
            stats.binary_skipped += 1;
            continue;
        }
        let old: &[OwnedLine] = match ch.action {
            ChangeAction::Add => &empty,
            _ => match parent.files.get(ch.source_path()) {
                Some(lines) => lines,
                None => {
                    stats.missing_parent_files += 1;
                    &empty
                }
            },
        };
        match ch.action {
            ChangeAction::Delete => {
                diff_file(commit, &editor, &ch.path, old, "", events);
            }
            _ => {
                let new_text = ch.post_text.as_deref().unwrap_or("");
                let lines = diff_file(commit, &editor, &ch.path, old, new_text, events);
                if ch.action == ChangeAction::Rename && child.files.contains_key(&ch.path) {
                    stats.path_conflicts += 1;
                }
                child.files.insert(ch.path.clone(), Arc::new(lines));
            }
        }
    }
    child
}

/// Replays a topologically ordered stream. Each commit starts from its
/// first parent's state (empty for roots).
pub fn replay_ownership(stream: &[CommitRecord], opts: &ReplayOptions) -> Result<Replay, OwnershipError> {
    // Remaining first-parent children per commit, to release states early.
    let mut remaining: HashMap<&str, usize> = HashMap::new();
    for c in stream {
        if let Some(p) = c.parents.first() {
            *remaining.entry(p.as_str()).or_default() += 1;
        }
    }
    let mut live: HashMap<String, OwnershipState> = HashMap::new();
    let mut replay = Replay::default();
    let empty = OwnershipState::default();
    for c in stream {
        let state = {
            let parent = match c.parents.first() {
                None => &empty,
                Some(p) => live.get(p).ok_or_else(|| OwnershipError::StateMissing {
                    commit: c.hash.clone(),
                    parent: p.clone(),
                })?,
            };
            apply_commit(c, parent, &mut replay.events, &mut replay.stats)
        };
        if let Some(p) = c.parents.first() {
            if let Some(n) = remaining.get_mut(p.as_str()) {
                *n -= 1;
                if *n == 0 && !opts.keep_states {
                    live.remove(p);
                }
            }
        }
        if opts.keep_states {
            replay.states.insert(c.hash.clone(), state.clone());
        }
        if remaining.get(c.hash.as_str()).copied().unwrap_or(0) > 0 || opts.keep_states {
            live.insert(c.hash.clone(), state);
        }
    }
    Ok(replay)
}

/// Total Levenshtein distance per non-merge commit; commits without events
/// total zero.
pub fn commit_lev_totals(stream: &[CommitRecord], events: &[EditEvent]) -> BTreeMap<String, u64> {
    let mut totals: BTreeMap<String, u64> =
        stream.iter().filter(|c| !c.is_merge).map(|c| (c.hash.clone(), 0)).collect();
    for e in events {
        if let Some(t) = totals.get_mut(&e.commit_hash) {
            *t += e.lev_distance as u64;
        }
    }
    totals
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierConfig {
    pub p_low: f64,
    pub p_high: f64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self { p_low: 2.5, p_high: 97.5 }
    }
}

/// Percentile by linear interpolation between closest ranks: rank
/// `n * p / 100 + 0.5` (1-based), clamped to the sample.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (n as f64 * p / 100.0 + 0.5).clamp(1.0, n as f64);
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo >= n {
        return sorted[n - 1];
    }
    sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
}

/// Keeps commits whose total lies within `[P(p_low), P(p_high)]`.
pub fn filter_outlier_commits(
    totals: &BTreeMap<String, u64>,
    cfg: &OutlierConfig,
) -> Result<BTreeSet<String>, OwnershipError> {
    if !(0.0 <= cfg.p_low && cfg.p_low < cfg.p_high && cfg.p_high <= 100.0) {
        return Err(OwnershipError::InvalidBounds(cfg.p_low, cfg.p_high));
    }
    if totals.is_empty() {
        return Err(OwnershipError::EmptyInput);
    }
    let mut sorted: Vec<f64> = totals.values().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (lo, hi) = (percentile(&sorted, cfg.p_low), percentile(&sorted, cfg.p_high));
    Ok(totals
        .iter()
        .filter(|(_, &v)| (lo..=hi).contains(&(v as f64)))
        .map(|(k, _)| k.clone())
        .collect())
}

pub const EVENT_HEADER: [&str; 6] = ["commit_hash", "editor", "path", "kind", "previous_owner", "lev_distance"];

/// Event export without line texts, in replay order.
pub fn write_events<W: Write>(writer: W, events: &[EditEvent]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EVENT_HEADER)?;
    for e in events {
        w.write_record([
            e.commit_hash.as_str(),
            e.editor.as_str(),
            e.path.as_str(),
            e.kind.as_str(),
            e.previous_owner.as_deref().unwrap_or(""),
            &e.lev_distance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// An exported event row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRow {
    pub commit_hash: String,
    pub editor: String,
    pub path: String,
    pub kind: EditKind,
    pub previous_owner: Option<String>,
    pub lev_distance: usize,
}

impl From<&EditEvent> for EventRow {
    fn from(e: &EditEvent) -> Self {
        Self {
            commit_hash: e.commit_hash.clone(),
            editor: e.editor.clone(),
            path: e.path.clone(),
            kind: e.kind,
            previous_owner: e.previous_owner.clone(),
            lev_distance: e.lev_distance,
        }
    }
}

pub fn read_events<R: std::io::Read>(reader: R) -> Result<Vec<EventRow>, csv::Error> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<EventRow>() {
        let mut row = row?;
        if row.previous_owner.as_deref() == Some("") {
            row.previous_owner = None;
        }
        out.push(row);
    }
    Ok(out)
}
