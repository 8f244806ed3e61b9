//! Project catalog: selection filters, log-spaced team-size strata and
//! seeded stratified sampling.
//!
//! The catalog is a local CSV file (one row per repository). Rows are
//! filtered for collaboration, activity and purpose, bucketed into strata
//! whose bounds roughly double, and sampled per stratum with a fixed quota.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Tolerance on the sum of language fractions.
pub const FRACTION_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("invalid strata range: min {min} max {max}")]
    InvalidRange { min: u64, max: u64 },
    #[error("invalid stratum count k = {0}")]
    InvalidK(usize),
    #[error("project {0} has no team_size_latest")]
    MissingTeamSize(String),
    #[error("catalog row {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("remote catalog sources are not supported: {0}")]
    RemoteUnsupported(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One catalog row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectMeta {
    pub project_id: String,
    pub commit_count: u64,
    pub developer_count: u64,
    pub first_commit_ts: DateTime<Utc>,
    pub last_commit_ts: DateTime<Utc>,
    pub is_fork: bool,
    pub language_fractions: BTreeMap<String, f64>,
    pub root_commit_hash: Option<String>,
    /// Developers active in the trailing moving window at the last commit.
    pub team_size_latest: Option<u64>,
}

impl ProjectMeta {
    pub fn span(&self) -> Duration {
        self.last_commit_ts - self.first_commit_ts
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.last_commit_ts < self.first_commit_ts {
            return Err(format!("{}: last commit precedes first commit", self.project_id));
        }
        let mut sum = 0.0;
        for (lang, f) in &self.language_fractions {
            if !(0.0..=1.0).contains(f) {
                return Err(format!("{}: fraction for {lang} out of range", self.project_id));
            }
            sum += f;
        }
        if sum > 1.0 + FRACTION_EPS {
            return Err(format!("{}: language fractions sum to {sum}", self.project_id));
        }
        Ok(())
    }
}

/// The default supported-language set. Configurable; it mirrors the
/// languages handled by common multi-language complexity analysers.
pub const DEFAULT_LANGUAGES: [&str; 17] = [
    "C",
    "C++",
    "C#",
    "Java",
    "JavaScript",
    "TypeScript",
    "Objective-C",
    "Swift",
    "Python",
    "Ruby",
    "PHP",
    "Scala",
    "Go",
    "Lua",
    "Rust",
    "Kotlin",
    "Erlang",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_developers: u64,
    pub min_commits: u64,
    pub min_span_days: i64,
    pub min_age_days: i64,
    pub exclude_forks: bool,
    pub activity_cutoff: DateTime<Utc>,
    pub purpose_threshold: f64,
    pub supported_languages: BTreeSet<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_developers: 2,
            min_commits: 50,
            min_span_days: 100,
            min_age_days: 294,
            exclude_forks: true,
            // "after May 2020"
            activity_cutoff: Utc.with_ymd_and_hms(2020, 5, 31, 23, 59, 59).unwrap(),
            purpose_threshold: 0.75,
            supported_languages: DEFAULT_LANGUAGES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), CatalogError> {
        if !(0.0..=1.0).contains(&self.purpose_threshold) {
            return Err(CatalogError::InvalidConfig("purpose_threshold outside [0, 1]".into()));
        }
        if self.min_span_days < 0 || self.min_age_days < 0 {
            return Err(CatalogError::InvalidConfig("negative day minimum".into()));
        }
        Ok(())
    }

    /// Reads a key-value (TOML) filter config. Missing keys take defaults.
    pub fn from_toml_str(s: &str) -> Result<Self, CatalogError> {
        let cfg: FilterConfig =
            toml::from_str(s).map_err(|e| CatalogError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn purpose_filter(
    fractions: &BTreeMap<String, f64>,
    supported: &BTreeSet<String>,
    threshold: f64,
) -> bool {
    let covered: f64 = fractions
        .iter()
        .filter(|(lang, _)| supported.contains(lang.as_str()))
        .map(|(_, f)| f)
        .sum();
    // Summation noise must not flip an exact boundary.
    covered + FRACTION_EPS >= threshold
}

fn passes(row: &ProjectMeta, cfg: &FilterConfig) -> bool {
    let span = row.span();
    row.developer_count >= cfg.min_developers
        && row.commit_count >= cfg.min_commits
        && span >= Duration::days(cfg.min_span_days)
        && span >= Duration::days(cfg.min_age_days)
        && !(cfg.exclude_forks && row.is_fork)
        && row.last_commit_ts > cfg.activity_cutoff
        && purpose_filter(&row.language_fractions, &cfg.supported_languages, cfg.purpose_threshold)
}

/// Keeps the rows passing every selection rule, in input order.
pub fn apply_filters(rows: &[ProjectMeta], cfg: &FilterConfig) -> Vec<ProjectMeta> {
    rows.iter().filter(|r| passes(r, cfg)).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratum {
    pub lower: u64,
    pub upper: u64,
    pub project_count: u64,
    pub sample_quota: u64,
}

impl Stratum {
    pub fn contains(&self, team_size: u64) -> bool {
        (self.lower..=self.upper).contains(&team_size)
    }
}

fn round_half_even(x: f64) -> f64 {
    let r = x.round();
    if (x - x.trunc()).abs() == 0.5 && r % 2.0 != 0.0 {
        r - x.signum()
    } else {
        r
    }
}

/// `k` contiguous strata over `[min_ts, max_ts]` with geometrically spaced
/// upper bounds `round_half_even(min_ts * r^j)`, `r = (max/min)^(1/k)`.
///
/// Counts and quotas are zero; see [`assign_strata`].
pub fn compute_strata(min_ts: u64, max_ts: u64, k: usize) -> Result<Vec<Stratum>, CatalogError> {
    if min_ts < 1 || min_ts > max_ts {
        return Err(CatalogError::InvalidRange { min: min_ts, max: max_ts });
    }
    if k < 1 {
        return Err(CatalogError::InvalidK(k));
    }
    let ratio = (max_ts as f64 / min_ts as f64).powf(1.0 / k as f64);
    let mut strata = Vec::with_capacity(k);
    let mut lower = min_ts;
    for j in 1..=k {
        let upper = if j == k {
            max_ts
        } else {
            (round_half_even(min_ts as f64 * ratio.powi(j as i32)) as u64).min(max_ts)
        };
        // Narrow ranges can produce bounds that collide; keep strata non-empty.
        if upper < lower {
            continue;
        }
        strata.push(Stratum { lower, upper, project_count: 0, sample_quota: 0 });
        lower = upper + 1;
        if lower > max_ts {
            break;
        }
    }
    Ok(strata)
}

/// Fills `project_count` and `sample_quota` from the rows' team sizes.
pub fn assign_strata(
    rows: &[ProjectMeta],
    strata: &mut [Stratum],
    quota: u64,
) -> Result<(), CatalogError> {
    for s in strata.iter_mut() {
        s.project_count = 0;
    }
    for row in rows {
        let ts = row
            .team_size_latest
            .ok_or_else(|| CatalogError::MissingTeamSize(row.project_id.clone()))?;
        if let Some(s) = strata.iter_mut().find(|s| s.contains(ts)) {
            s.project_count += 1;
        }
    }
    for s in strata.iter_mut() {
        s.sample_quota = quota.min(s.project_count);
    }
    Ok(())
}

/// Derives the RNG seed for one stratum from the run seed.
pub fn stratum_seed(seed: u64, stratum_index: usize) -> u64 {
    seed ^ (stratum_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Draws `min(quota, population)` rows per stratum, uniformly without
/// replacement, then drops clones sharing a root commit hash (the earliest
/// first commit survives).
///
/// Each stratum's population is ordered by `project_id` before the draw so
/// the selection does not depend on input order. Output is sorted by
/// stratum then `project_id`.
pub fn stratified_sample(
    rows: &[ProjectMeta],
    strata: &[Stratum],
    quota: u64,
    seed: u64,
) -> Result<Vec<ProjectMeta>, CatalogError> {
    let mut buckets: Vec<Vec<&ProjectMeta>> = vec![Vec::new(); strata.len()];
    for row in rows {
        let ts = row
            .team_size_latest
            .ok_or_else(|| CatalogError::MissingTeamSize(row.project_id.clone()))?;
        if let Some(i) = strata.iter().position(|s| s.contains(ts)) {
            buckets[i].push(row);
        }
    }
    let mut picked = Vec::new();
    for (i, bucket) in buckets.iter_mut().enumerate() {
        bucket.sort_by(|a, b| a.project_id.cmp(&b.project_id));
        let take = (quota as usize).min(bucket.len());
        let mut rng = ChaCha8Rng::seed_from_u64(stratum_seed(seed, i));
        let mut chosen: Vec<&ProjectMeta> = partial_shuffle(bucket, take, &mut rng).to_vec();
        chosen.sort_by(|a, b| a.project_id.cmp(&b.project_id));
        picked.extend(chosen.into_iter().cloned());
    }
    Ok(dedup_clones(picked))
}

/// Fisher-Yates over the first `take` positions.
fn partial_shuffle<'a, T, R: Rng>(items: &'a mut [T], take: usize, rng: &mut R) -> &'a [T] {
    let n = items.len();
    for i in 0..take {
        let j = rng.random_range(i..n);
        items.swap(i, j);
    }
    &items[..take]
}

fn dedup_clones(rows: Vec<ProjectMeta>) -> Vec<ProjectMeta> {
    let mut keeper: HashMap<&str, (DateTime<Utc>, &str)> = HashMap::new();
    for r in &rows {
        if let Some(h) = r.root_commit_hash.as_deref() {
            let cand = (r.first_commit_ts, r.project_id.as_str());
            keeper
                .entry(h)
                .and_modify(|cur| {
                    if cand < *cur {
                        *cur = cand;
                    }
                })
                .or_insert(cand);
        }
    }
    let keep: BTreeSet<String> = keeper.values().map(|(_, id)| id.to_string()).collect();
    rows.iter()
        .filter(|r| r.root_commit_hash.is_none() || keep.contains(&r.project_id))
        .cloned()
        .collect()
}

// ---------------------------------------------------------------------------
// File format

pub const CATALOG_HEADER: [&str; 8] = [
    "project_id",
    "commit_count",
    "developer_count",
    "first_commit_ts",
    "last_commit_ts",
    "is_fork",
    "root_commit_hash",
    "language_fractions",
];

fn encode_fractions(map: &BTreeMap<String, f64>) -> String {
    map.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(";")
}

fn decode_fractions(s: &str) -> Result<BTreeMap<String, f64>, String> {
    let mut out = BTreeMap::new();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (lang, frac) = part.rsplit_once(':').ok_or_else(|| format!("bad fraction `{part}`"))?;
        let f: f64 = frac.trim().parse().map_err(|_| format!("bad fraction `{part}`"))?;
        out.insert(lang.trim().to_string(), f);
    }
    Ok(out)
}

fn parse_ts(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|d| d.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp `{s}`: {e}"))
}

pub fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Reads a catalog CSV. An optional ninth column `team_size_latest` is
/// accepted when present.
pub fn read_catalog<R: Read>(reader: R) -> Result<Vec<ProjectMeta>, CatalogError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    for (i, name) in CATALOG_HEADER.iter().enumerate() {
        if headers.get(i) != Some(*name) {
            return Err(CatalogError::Malformed {
                line: 1,
                msg: format!("expected column {i} to be `{name}`"),
            });
        }
    }
    let ts_col = headers.iter().position(|h| h == "team_size_latest");
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        let bad = |msg: String| CatalogError::Malformed { line, msg };
        let get = |i: usize| rec.get(i).unwrap_or("").trim();
        let num = |i: usize| -> Result<u64, CatalogError> {
            get(i).parse::<u64>().map_err(|_| bad(format!("bad integer `{}`", get(i))))
        };
        let is_fork = match get(5).to_ascii_lowercase().as_str() {
            "true" | "1" => true,
            "false" | "0" | "" => false,
            other => return Err(bad(format!("bad boolean `{other}`"))),
        };
        let team_size_latest = match ts_col.map(get) {
            Some(v) if !v.is_empty() => {
                Some(v.parse::<u64>().map_err(|_| bad(format!("bad team size `{v}`")))?)
            }
            _ => None,
        };
        let row = ProjectMeta {
            project_id: get(0).to_string(),
            commit_count: num(1)?,
            developer_count: num(2)?,
            first_commit_ts: parse_ts(get(3)).map_err(bad)?,
            last_commit_ts: parse_ts(get(4)).map_err(bad)?,
            is_fork,
            root_commit_hash: Some(get(6)).filter(|s| !s.is_empty()).map(str::to_string),
            language_fractions: decode_fractions(get(7)).map_err(bad)?,
            team_size_latest,
        };
        row.validate().map_err(bad)?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_catalog_file(path: &Path) -> Result<Vec<ProjectMeta>, CatalogError> {
    read_catalog(std::fs::File::open(path)?)
}

/// Writes a catalog CSV; the `team_size_latest` column is emitted only
/// when some row carries it.
pub fn write_catalog<W: Write>(writer: W, rows: &[ProjectMeta]) -> Result<(), CatalogError> {
    let with_ts = rows.iter().any(|r| r.team_size_latest.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = CATALOG_HEADER.to_vec();
    if with_ts {
        header.push("team_size_latest");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.project_id.clone(),
            r.commit_count.to_string(),
            r.developer_count.to_string(),
            format_ts(&r.first_commit_ts),
            format_ts(&r.last_commit_ts),
            r.is_fork.to_string(),
            r.root_commit_hash.clone().unwrap_or_default(),
            encode_fractions(&r.language_fractions),
        ];
        if with_ts {
            rec.push(r.team_size_latest.map(|t| t.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_strata<W: Write>(writer: W, strata: &[Stratum]) -> Result<(), CatalogError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in strata {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// Where catalog rows come from.
pub trait CatalogSource {
    fn load(&self) -> Result<Vec<ProjectMeta>, CatalogError>;
}

pub struct LocalCatalog<'a>(pub &'a Path);

impl CatalogSource for LocalCatalog<'_> {
    fn load(&self) -> Result<Vec<ProjectMeta>, CatalogError> {
        read_catalog_file(self.0)
    }
}

/// Placeholder for querying a hosted metadata mirror. Always fails.
pub struct RemoteCatalog {
    pub endpoint: String,
}

impl CatalogSource for RemoteCatalog {
    fn load(&self) -> Result<Vec<ProjectMeta>, CatalogError> {
        Err(CatalogError::RemoteUnsupported(self.endpoint.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(n: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap() + Duration::days(n)
    }

    fn row(id: &str, devs: u64, commits: u64, span_days: i64) -> ProjectMeta {
        ProjectMeta {
            project_id: id.into(),
            commit_count: commits,
            developer_count: devs,
            first_commit_ts: day(600 - span_days),
            last_commit_ts: day(600),
            is_fork: false,
            language_fractions: [("Python".to_string(), 0.8), ("Markdown".to_string(), 0.2)]
                .into_iter()
                .collect(),
            root_commit_hash: None,
            team_size_latest: None,
        }
    }

    #[test]
    fn single_developer_excluded() {
        let cfg = FilterConfig::default();
        assert!(apply_filters(&[row("a", 1, 500, 900)], &cfg).is_empty());
    }

    #[test]
    fn boundaries_inclusive() {
        let cfg = FilterConfig::default();
        assert_eq!(apply_filters(&[row("a", 2, 50, 294)], &cfg).len(), 1);
        assert!(apply_filters(&[row("a", 2, 49, 294)], &cfg).is_empty());
        assert!(apply_filters(&[row("a", 2, 50, 293)], &cfg).is_empty());
    }

    #[test]
    fn forks_and_stale_excluded() {
        let cfg = FilterConfig::default();
        let mut fork = row("f", 5, 500, 900);
        fork.is_fork = true;
        assert!(apply_filters(&[fork.clone()], &cfg).is_empty());
        let keep = FilterConfig { exclude_forks: false, ..cfg.clone() };
        assert_eq!(apply_filters(&[fork], &keep).len(), 1);

        let mut stale = row("s", 5, 500, 900);
        stale.last_commit_ts = Utc.with_ymd_and_hms(2020, 5, 1, 0, 0, 0).unwrap();
        stale.first_commit_ts = stale.last_commit_ts - Duration::days(900);
        assert!(apply_filters(&[stale], &cfg).is_empty());
    }

    #[test]
    fn purpose_threshold_inclusive() {
        let sup: BTreeSet<String> = ["Python".to_string()].into();
        let f = |x: f64| -> BTreeMap<String, f64> { [("Python".to_string(), x)].into() };
        assert!(purpose_filter(&f(0.80), &sup, 0.75));
        assert!(purpose_filter(&f(0.75), &sup, 0.75));
        assert!(!purpose_filter(&f(0.74), &sup, 0.75));
        // Sums of several languages land on the boundary inexactly.
        let multi: BTreeMap<String, f64> =
            [("A".to_string(), 0.45), ("B".to_string(), 0.3)].into();
        let sup2: BTreeSet<String> = ["A".to_string(), "B".to_string()].into();
        assert!(purpose_filter(&multi, &sup2, 0.75));
    }

    #[test]
    fn strata_small_cases() {
        let s = compute_strata(2, 8, 2).unwrap();
        assert_eq!(
            s.iter().map(|s| (s.lower, s.upper)).collect::<Vec<_>>(),
            vec![(2, 4), (5, 8)]
        );
        let s = compute_strata(5, 5, 1).unwrap();
        assert_eq!((s[0].lower, s[0].upper), (5, 5));
        assert!(matches!(compute_strata(9, 5, 1), Err(CatalogError::InvalidRange { .. })));
        assert!(matches!(compute_strata(0, 5, 1), Err(CatalogError::InvalidRange { .. })));
        assert!(matches!(compute_strata(2, 5, 0), Err(CatalogError::InvalidK(0))));
    }

    #[test]
    fn half_even() {
        assert_eq!(round_half_even(58.5), 58.0);
        assert_eq!(round_half_even(59.5), 60.0);
        assert_eq!(round_half_even(3.2), 3.0);
    }

    #[test]
    fn sampling_takes_all_when_quota_exceeds_population() {
        let mut rows: Vec<_> = (0..3).map(|i| row(&format!("p{i}"), 3, 60, 400)).collect();
        for r in &mut rows {
            r.team_size_latest = Some(3);
        }
        let strata = compute_strata(2, 4, 1).unwrap();
        let s = stratified_sample(&rows, &strata, 28, 7).unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn sampling_requires_team_size() {
        let strata = compute_strata(2, 4, 1).unwrap();
        let err = stratified_sample(&[row("p", 3, 60, 400)], &strata, 2, 1).unwrap_err();
        assert!(matches!(err, CatalogError::MissingTeamSize(_)));
    }

    #[test]
    fn clones_resolved_to_earliest() {
        let mut a = row("a", 3, 60, 400);
        let mut b = row("b", 3, 60, 500);
        a.root_commit_hash = Some("r".into());
        b.root_commit_hash = Some("r".into());
        a.team_size_latest = Some(3);
        b.team_size_latest = Some(3);
        let strata = compute_strata(2, 4, 1).unwrap();
        let s = stratified_sample(&[a, b], &strata, 5, 0).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].project_id, "b");
    }

    #[test]
    fn catalog_csv_roundtrip() {
        let mut r = row("org/x", 3, 60, 400);
        r.root_commit_hash = Some("abc".into());
        let mut buf = Vec::new();
        write_catalog(&mut buf, &[r.clone()]).unwrap();
        let back = read_catalog(&buf[..]).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn filter_config_from_toml() {
        let cfg = FilterConfig::from_toml_str("min_commits = 10\npurpose_threshold = 0.5\n").unwrap();
        assert_eq!(cfg.min_commits, 10);
        assert_eq!(cfg.min_developers, 2);
        assert!(FilterConfig::from_toml_str("purpose_threshold = 1.5").is_err());
    }

    #[test]
    fn remote_source_is_stubbed() {
        let r = RemoteCatalog { endpoint: "https://example.invalid".into() };
        assert!(matches!(r.load(), Err(CatalogError::RemoteUnsupported(_))));
    }
}
