//! Canonical commit streams and author identity resolution.
//!
//! A stream is read either from a `.commits.jsonl` dump (one JSON commit per
//! line, full pre/post text of every changed file) or from a git working
//! copy through the `git` command line. Both routes produce the same
//! canonical order: parents before children, ties broken by
//! `(timestamp, hash)`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::Command;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

pub const DUMP_EXTENSION: &str = ".commits.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {msg}")]
    UnreadableSource { path: String, msg: String },
    #[error("commit graph contains a cycle ({0} commits unordered)")]
    CyclicHistory(usize),
    #[error("duplicate commit hash {0}")]
    DuplicateCommit(String),
    #[error("dump line {line}: {msg}")]
    MalformedDump { line: usize, msg: String },
    #[error("invalid file change in {commit}: {msg}")]
    InvalidChange { commit: String, msg: String },
    #[error("alias map line {line}: {msg}")]
    MalformedAliasMap { line: usize, msg: String },
    #[error("git: {0}")]
    Git(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeAction {
    Add,
    Delete,
    Modify,
    Rename,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub path: String,
    pub old_path: Option<String>,
    pub action: ChangeAction,
    pub pre_text: Option<String>,
    pub post_text: Option<String>,
    pub is_binary: bool,
}

impl FileChange {
    pub fn validate(&self) -> Result<(), String> {
        if self.is_binary && (self.pre_text.is_some() || self.post_text.is_some()) {
            return Err(format!("{}: binary change carries text", self.path));
        }
        match self.action {
            ChangeAction::Add if self.pre_text.is_some() => {
                Err(format!("{}: add with pre_text", self.path))
            }
            ChangeAction::Delete if self.post_text.is_some() => {
                Err(format!("{}: delete with post_text", self.path))
            }
            ChangeAction::Rename if self.old_path.is_none() => {
                Err(format!("{}: rename without old_path", self.path))
            }
            _ => Ok(()),
        }
    }

    /// Path the file had in the parent tree.
    pub fn source_path(&self) -> &str {
        self.old_path.as_deref().unwrap_or(&self.path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub hash: String,
    pub parents: Vec<String>,
    pub author_name: String,
    pub author_email: String,
    pub author_id: Option<String>,
    pub timestamp: DateTime<Utc>,
    pub is_merge: bool,
    pub changes: Vec<FileChange>,
}

impl CommitRecord {
    /// Resolved author, falling back to the raw email before resolution.
    pub fn author(&self) -> &str {
        self.author_id.as_deref().unwrap_or(&self.author_email)
    }
}

/// Counters for tolerated input problems.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub binary_files: usize,
}

// ---------------------------------------------------------------------------
// Ordering

/// Orders commits parents-first; among ready commits the smallest
/// `(timestamp, hash)` goes next. Parents outside the stream are ignored.
pub fn topo_sort(commits: Vec<CommitRecord>) -> Result<Vec<CommitRecord>, IngestError> {
    let mut index: HashMap<String, usize> = HashMap::with_capacity(commits.len());
    for (i, c) in commits.iter().enumerate() {
        if index.insert(c.hash.clone(), i).is_some() {
            return Err(IngestError::DuplicateCommit(c.hash.clone()));
        }
    }
    let mut pending = vec![0usize; commits.len()];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); commits.len()];
    for (i, c) in commits.iter().enumerate() {
        let known: BTreeSet<usize> = c.parents.iter().filter_map(|p| index.get(p).copied()).collect();
        pending[i] = known.len();
        for p in known {
            children[p].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<(DateTime<Utc>, String, usize)>> = commits
        .iter()
        .enumerate()
        .filter(|(i, _)| pending[*i] == 0)
        .map(|(i, c)| Reverse((c.timestamp, c.hash.clone(), i)))
        .collect();
    let mut order = Vec::with_capacity(commits.len());
    while let Some(Reverse((_, _, i))) = ready.pop() {
        order.push(i);
        for &ch in &children[i] {
            pending[ch] -= 1;
            if pending[ch] == 0 {
                let c = &commits[ch];
                ready.push(Reverse((c.timestamp, c.hash.clone(), ch)));
            }
        }
    }
    if order.len() != commits.len() {
        return Err(IngestError::CyclicHistory(commits.len() - order.len()));
    }
    let mut slots: Vec<Option<CommitRecord>> = commits.into_iter().map(Some).collect();
    Ok(order.into_iter().map(|i| slots[i].take().unwrap()).collect())
}

fn normalize(mut c: CommitRecord, stats: &mut IngestStats) -> Result<CommitRecord, IngestError> {
    c.is_merge = c.parents.len() >= 2;
    for ch in &mut c.changes {
        if ch.is_binary {
            stats.binary_files += 1;
            ch.pre_text = None;
            ch.post_text = None;
        }
        ch.validate().map_err(|msg| IngestError::InvalidChange { commit: c.hash.clone(), msg })?;
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// Dump format

pub fn read_dump<R: Read>(reader: R) -> Result<(Vec<CommitRecord>, IngestStats), IngestError> {
    let mut stats = IngestStats::default();
    let mut commits = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CommitRecord = serde_json::from_str(&line)
            .map_err(|e| IngestError::MalformedDump { line: i + 1, msg: e.to_string() })?;
        commits.push(normalize(rec, &mut stats)?);
    }
    Ok((topo_sort(commits)?, stats))
}

pub fn write_dump<W: Write>(mut writer: W, commits: &[CommitRecord]) -> Result<(), IngestError> {
    for c in commits {
        let line = serde_json::to_string(c).map_err(std::io::Error::other)?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a dump file or a git working copy.
pub fn extract_commit_stream(source: &Path) -> Result<(Vec<CommitRecord>, IngestStats), IngestError> {
    let unreadable = |msg: String| IngestError::UnreadableSource {
        path: source.display().to_string(),
        msg,
    };
    let meta = std::fs::metadata(source).map_err(|e| unreadable(e.to_string()))?;
    if meta.is_dir() {
        extract_git(source)
    } else {
        let f = std::fs::File::open(source).map_err(|e| unreadable(e.to_string()))?;
        read_dump(f)
    }
}

// ---------------------------------------------------------------------------
// git working copies

fn git(repo: &Path, args: &[&str]) -> Result<Vec<u8>, IngestError> {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(args)
        .output()
        .map_err(|e| IngestError::Git(format!("failed to run git: {e}")))?;
    if !out.status.success() {
        return Err(IngestError::Git(String::from_utf8_lossy(&out.stderr).trim().to_string()));
    }
    Ok(out.stdout)
}

fn blob_text(repo: &Path, sha: &str) -> Result<Option<String>, IngestError> {
    let bytes = git(repo, &["cat-file", "blob", sha])?;
    if bytes.contains(&0) {
        return Ok(None);
    }
    Ok(String::from_utf8(bytes).ok())
}

struct RawEntry {
    status: char,
    old_sha: String,
    new_sha: String,
    path: String,
    old_path: Option<String>,
}

fn parse_raw_diff(bytes: &[u8]) -> Result<Vec<RawEntry>, IngestError> {
    let text = String::from_utf8_lossy(bytes);
    let mut fields = text.split('\0').filter(|s| !s.is_empty());
    let mut out = Vec::new();
    while let Some(head) = fields.next() {
        // ":100644 100644 <old> <new> M"
        let parts: Vec<&str> = head.trim_start_matches(':').split_whitespace().collect();
        if parts.len() < 5 {
            return Err(IngestError::Git(format!("unexpected diff-tree line `{head}`")));
        }
        let status = parts[4].chars().next().unwrap_or('M');
        let first = fields.next().ok_or_else(|| IngestError::Git("truncated diff".into()))?;
        let (path, old_path) = if matches!(status, 'R' | 'C') {
            let second = fields.next().ok_or_else(|| IngestError::Git("truncated diff".into()))?;
            (second.to_string(), Some(first.to_string()))
        } else {
            (first.to_string(), None)
        };
        out.push(RawEntry {
            status,
            old_sha: parts[2].to_string(),
            new_sha: parts[3].to_string(),
            path,
            old_path,
        });
    }
    Ok(out)
}

fn extract_git(repo: &Path) -> Result<(Vec<CommitRecord>, IngestStats), IngestError> {
    let log = git(repo, &["log", "--all", "--format=%H%x1f%P%x1f%an%x1f%ae%x1f%at%x1e"])?;
    let log = String::from_utf8_lossy(&log);
    let mut commits = Vec::new();
    let mut stats = IngestStats::default();
    for entry in log.split('\x1e').map(str::trim).filter(|s| !s.is_empty()) {
        let f: Vec<&str> = entry.split('\x1f').collect();
        if f.len() != 5 {
            return Err(IngestError::Git(format!("unexpected log entry `{entry}`")));
        }
        let hash = f[0].to_string();
        let parents: Vec<String> = f[1].split_whitespace().map(str::to_string).collect();
        let secs: i64 = f[4].parse().map_err(|_| IngestError::Git(format!("bad time {}", f[4])))?;
        let timestamp = Utc
            .timestamp_opt(secs, 0)
            .single()
            .ok_or_else(|| IngestError::Git(format!("bad time {secs}")))?;
        let raw = match parents.first() {
            Some(p) => git(repo, &["diff-tree", "-r", "-M", "--raw", "-z", "--no-commit-id", p, &hash])?,
            None => git(repo, &["diff-tree", "-r", "--root", "--raw", "-z", "--no-commit-id", &hash])?,
        };
        let mut changes = Vec::new();
        for e in parse_raw_diff(&raw)? {
            let action = match e.status {
                'A' | 'C' => ChangeAction::Add,
                'D' => ChangeAction::Delete,
                'R' => ChangeAction::Rename,
                _ => ChangeAction::Modify,
            };
            let pre = match action {
                ChangeAction::Add => None,
                _ => Some(blob_text(repo, &e.old_sha)?),
            };
            let post = match action {
                ChangeAction::Delete => None,
                _ => Some(blob_text(repo, &e.new_sha)?),
            };
            let is_binary = matches!(pre, Some(None)) || matches!(post, Some(None));
            let (pre_text, post_text) = if is_binary { (None, None) } else { (pre.flatten(), post.flatten()) };
            changes.push(FileChange {
                path: e.path,
                old_path: if action == ChangeAction::Rename { e.old_path } else { None },
                action,
                pre_text,
                post_text,
                is_binary,
            });
        }
        changes.sort_by(|a, b| a.path.cmp(&b.path));
        let rec = CommitRecord {
            hash,
            is_merge: parents.len() >= 2,
            parents,
            author_name: f[2].to_string(),
            author_email: f[3].to_string(),
            author_id: None,
            timestamp,
            changes,
        };
        commits.push(normalize(rec, &mut stats)?);
    }
    Ok((topo_sort(commits)?, stats))
}

// ---------------------------------------------------------------------------
// Identities

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Identity {
    pub canonical_id: String,
    pub aliases: BTreeSet<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasEntry {
    pub name: String,
    pub email: String,
    pub canonical_id: String,
}

/// Explicit alias assignments. An entry with an empty name matches every
/// author using that email.
#[derive(Debug, Clone, Default)]
pub struct AliasMap {
    pub entries: Vec<AliasEntry>,
}

impl AliasMap {
    pub fn read<R: Read>(reader: R) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| IngestError::MalformedAliasMap { line: 1, msg: e.to_string() })?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["name", "email", "canonical_id"] {
            return Err(IngestError::MalformedAliasMap {
                line: 1,
                msg: "expected header name,email,canonical_id".into(),
            });
        }
        let mut entries = Vec::new();
        for (i, rec) in rdr.deserialize::<AliasEntry>().enumerate() {
            let e = rec.map_err(|e| IngestError::MalformedAliasMap { line: i + 2, msg: e.to_string() })?;
            if e.canonical_id.is_empty() || (e.name.is_empty() && e.email.is_empty()) {
                return Err(IngestError::MalformedAliasMap { line: i + 2, msg: "empty key".into() });
            }
            entries.push(e);
        }
        Ok(Self { entries })
    }

    fn lookup(&self, name: &str, email: &str) -> Option<&str> {
        let (name, email) = (fold(name), fold(email));
        self.entries
            .iter()
            .find(|e| {
                fold(&e.email) == email && (e.name.is_empty() || normalize_name(&e.name) == normalize_name(&name))
            })
            .map(|e| e.canonical_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentityConfig {
    pub merge_by_email: bool,
    pub merge_by_name: bool,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        Self { merge_by_email: true, merge_by_name: false }
    }
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

fn normalize_name(s: &str) -> String {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups `(name, email)` pairs into identities and fills `author_id`.
///
/// Merge rules, in order: alias map entries, equal case-folded email,
/// equal normalized name (when enabled). The canonical id is the alias
/// map's id when the group has one, else the smallest case-folded email.
pub fn resolve_identities(
    mut stream: Vec<CommitRecord>,
    aliases: Option<&AliasMap>,
    cfg: &IdentityConfig,
) -> (Vec<CommitRecord>, Vec<Identity>) {
    let pairs: Vec<(String, String)> = stream
        .iter()
        .map(|c| (c.author_name.clone(), c.author_email.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = pairs.len();
    let mut dsu = DisjointSet::new(n);
    let mut mapped: Vec<Option<String>> = vec![None; n];
    let mut by_canon: HashMap<String, usize> = HashMap::new();
    let mut by_email: HashMap<String, usize> = HashMap::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    for (i, (name, email)) in pairs.iter().enumerate() {
        if let Some(canon) = aliases.and_then(|m| m.lookup(name, email)) {
            mapped[i] = Some(canon.to_string());
            let first = *by_canon.entry(canon.to_string()).or_insert(i);
            dsu.union(first, i);
        }
        let email = fold(email);
        if cfg.merge_by_email && !email.is_empty() {
            let first = *by_email.entry(email).or_insert(i);
            dsu.union(first, i);
        }
        let name = normalize_name(name);
        if cfg.merge_by_name && !name.is_empty() {
            let first = *by_name.entry(name).or_insert(i);
            dsu.union(first, i);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = dsu.find(i);
        groups.entry(r).or_default().push(i);
    }
    let mut identities = Vec::with_capacity(groups.len());
    let mut lookup: HashMap<(String, String), String> = HashMap::with_capacity(n);
    for members in groups.values() {
        let canonical_id = members
            .iter()
            .filter_map(|&i| mapped[i].clone())
            .min()
            .or_else(|| members.iter().map(|&i| fold(&pairs[i].1)).filter(|e| !e.is_empty()).min())
            .unwrap_or_else(|| members.iter().map(|&i| normalize_name(&pairs[i].0)).min().unwrap_or_default());
        let aliases: BTreeSet<(String, String)> = members.iter().map(|&i| pairs[i].clone()).collect();
        for p in &aliases {
            lookup.insert(p.clone(), canonical_id.clone());
        }
        identities.push(Identity { canonical_id, aliases });
    }
    identities.sort_by(|a, b| a.canonical_id.cmp(&b.canonical_id));
    for c in &mut stream {
        c.author_id = lookup.get(&(c.author_name.clone(), c.author_email.clone())).cloned();
    }
    (stream, identities)
}

pub fn write_identities<W: Write>(writer: W, identities: &[Identity]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["canonical_id", "name", "email"])?;
    for id in identities {
        for (name, email) in &id.aliases {
            w.write_record([id.canonical_id.as_str(), name, email])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn commit(hash: &str, parents: &[&str], day: i64) -> CommitRecord {
        CommitRecord {
            hash: hash.into(),
            parents: parents.iter().map(|s| s.to_string()).collect(),
            author_name: "a".into(),
            author_email: "a@x".into(),
            author_id: None,
            timestamp: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::days(day),
            is_merge: parents.len() > 1,
            changes: vec![],
        }
    }

    #[test]
    fn parents_come_first() {
        // B is older by timestamp but still follows its parent.
        let out = topo_sort(vec![commit("B", &["A"], 0), commit("A", &[], 5)]).unwrap();
        assert_eq!(out.iter().map(|c| c.hash.as_str()).collect::<Vec<_>>(), ["A", "B"]);
    }

    #[test]
    fn ties_by_timestamp_then_hash() {
        let out = topo_sort(vec![
            commit("r", &[], 0),
            commit("z", &["r"], 1),
            commit("y", &["r"], 1),
            commit("a", &["r"], 2),
        ])
        .unwrap();
        assert_eq!(out.iter().map(|c| c.hash.as_str()).collect::<Vec<_>>(), ["r", "y", "z", "a"]);
    }

    #[test]
    fn cycles_and_duplicates_rejected() {
        let err = topo_sort(vec![commit("a", &["b"], 0), commit("b", &["a"], 0)]).unwrap_err();
        assert!(matches!(err, IngestError::CyclicHistory(2)));
        let err = topo_sort(vec![commit("a", &[], 0), commit("a", &[], 0)]).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateCommit(_)));
    }

    #[test]
    fn root_add_has_no_pre_text() {
        let mut c = commit("r", &[], 0);
        c.changes.push(FileChange {
            path: "f.py".into(),
            old_path: None,
            action: ChangeAction::Add,
            pre_text: None,
            post_text: Some("a\nb\nc\n".into()),
            is_binary: false,
        });
        let mut buf = Vec::new();
        write_dump(&mut buf, &[c]).unwrap();
        let (back, _) = read_dump(&buf[..]).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].changes[0].action, ChangeAction::Add);
        assert!(back[0].changes[0].pre_text.is_none());
    }

    #[test]
    fn invalid_change_rejected() {
        let mut c = commit("r", &[], 0);
        c.changes.push(FileChange {
            path: "f".into(),
            old_path: None,
            action: ChangeAction::Rename,
            pre_text: Some(String::new()),
            post_text: Some(String::new()),
            is_binary: false,
        });
        let line = serde_json::to_string(&c).unwrap();
        assert!(matches!(read_dump(line.as_bytes()), Err(IngestError::InvalidChange { .. })));
    }

    #[test]
    fn binary_texts_dropped_and_counted() {
        let mut c = commit("r", &[], 0);
        c.changes.push(FileChange {
            path: "img.png".into(),
            old_path: None,
            action: ChangeAction::Add,
            pre_text: None,
            post_text: None,
            is_binary: true,
        });
        let line = serde_json::to_string(&c).unwrap();
        let (_, stats) = read_dump(line.as_bytes()).unwrap();
        assert_eq!(stats.binary_files, 1);
    }

    fn by(name: &str, email: &str, hash: &str) -> CommitRecord {
        let mut c = commit(hash, &[], 0);
        c.author_name = name.into();
        c.author_email = email.into();
        c
    }

    #[test]
    fn email_case_fold_merges() {
        let s = vec![by("Ada L", "ada@x.org", "1"), by("ada lovelace", "ADA@X.ORG", "2")];
        let (s, ids) = resolve_identities(s, None, &IdentityConfig::default());
        assert_eq!(ids.len(), 1);
        assert_eq!(ids[0].canonical_id, "ada@x.org");
        assert_eq!(s[0].author_id, s[1].author_id);
    }

    #[test]
    fn alias_map_takes_precedence() {
        let map = AliasMap::read(&b"name,email,canonical_id\n,a@x,z@y\n,b@x,z@y\n"[..]).unwrap();
        let cfg = IdentityConfig { merge_by_email: false, merge_by_name: false };
        let s = vec![by("A", "a@x", "1"), by("B", "b@x", "2"), by("C", "c@x", "3")];
        let (s, ids) = resolve_identities(s, Some(&map), &cfg);
        assert_eq!(ids.len(), 2);
        assert_eq!(s[0].author_id.as_deref(), Some("z@y"));
        assert_eq!(s[1].author_id.as_deref(), Some("z@y"));
        assert_eq!(s[2].author_id.as_deref(), Some("c@x"));
    }

    #[test]
    fn name_heuristic_optional() {
        let s = vec![by("Grace Hopper", "g@a", "1"), by("grace  hopper!", "gh@b", "2")];
        let (_, ids) = resolve_identities(s.clone(), None, &IdentityConfig::default());
        assert_eq!(ids.len(), 2);
        let cfg = IdentityConfig { merge_by_email: true, merge_by_name: true };
        let (_, ids) = resolve_identities(s, None, &cfg);
        assert_eq!(ids.len(), 1);
        assert_eq!(ids[0].canonical_id, "g@a");
    }

    #[test]
    fn malformed_alias_map() {
        assert!(AliasMap::read(&b"who,what\nx,y\n"[..]).is_err());
        assert!(AliasMap::read(&b"name,email,canonical_id\n,,z\n"[..]).is_err());
    }
}
