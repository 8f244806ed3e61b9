//! Stage orchestration: filter, sample, mine, window, network, stats and
//! report, each reading the previous stage's files and writing its own
//! directory under the output root together with a `manifest.json`.
//!
//! A stage is skipped when its manifest still matches its inputs, its
//! configuration and its outputs, and no earlier stage ran in the same
//! invocation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{
    apply_filters, assign_strata, compute_strata, format_ts, read_catalog, stratified_sample, write_catalog,
    write_strata, FilterConfig, ProjectMeta,
};
use crate::ingest::{extract_commit_stream, resolve_identities, write_identities, AliasMap, IdentityConfig};
use crate::metrics::{commit_deltas, read_metric_rows, sum_by_commit, write_metric_rows, LanguageProfile, ProfileSet};
use crate::networks::{build_coedit_graph, feature_cluster_select, network_metrics, SpectralGap};
use crate::ownership::{
    commit_lev_totals, filter_outlier_commits, read_events, replay_ownership, write_events, EditEvent, EventRow,
    OutlierConfig, ReplayOptions,
};
use crate::stats::{
    elasticity_per_doubling, fit_battery, marginal_effects, pearson_matrix, quadratic_vertex, render_table,
    write_correlation_csv, CorrelationPlotData, Family, MarginalLine, RegressionResult, Term,
};
use crate::windows::{
    aggregate_productivity, apply_transforms, drop_inactive, moving_team_size, observation_columns,
    read_observations, segment_windows, team_size, write_observations, TransformSpec, WindowConfig,
    WindowObservation, NETWORK_MEASURES, PRODUCTIVITY_MEASURES,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("stage {stage} needs {path}; run the upstream stage first")]
    MissingUpstream { stage: Stage, path: String },
    #[error("configuration of stage {0} changed since its last run; pass --force to recompute")]
    ConfigChanged(Stage),
    #[error("no dump or repository found for project {0}")]
    MissingSource(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Internal(String),
}

impl PipelineError {
    /// Process exit code: 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::MissingUpstream { .. } | PipelineError::ConfigChanged(_) => 1,
            PipelineError::MissingSource(_) | PipelineError::Data(_) => 2,
            PipelineError::Io(_) | PipelineError::Internal(_) => 3,
        }
    }
}

fn data<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> PipelineError + '_ {
    move |e| PipelineError::Data(format!("{context}: {e}"))
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub strata: usize,
    /// Projects drawn per stratum.
    pub quota: u64,
    /// Team-size range of the strata; defaults to the observed range.
    pub min_team_size: Option<u64>,
    pub max_team_size: Option<u64>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { strata: 10, quota: 20, min_team_size: None, max_team_size: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineConfig {
    /// Count events of merge commits.
    pub emit_merges: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub spectral_gap: SpectralGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsOptions {
    pub families: Vec<Family>,
    pub targets: Vec<String>,
    /// Number of tests for the Bonferroni correction; defaults to the count
    /// of non-intercept coefficients in the battery.
    pub bonferroni_m: Option<usize>,
    pub cluster_threshold: f64,
    pub preferred_features: Vec<String>,
    /// Log-InD levels for the interaction-model lines.
    pub ind_levels: Vec<f64>,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            targets: PRODUCTIVITY_MEASURES.iter().map(|s| s.to_string()).collect(),
            bonferroni_m: None,
            cluster_threshold: 0.8,
            preferred_features: ["team_size", "ind", "fmodr"].iter().map(|s| s.to_string()).collect(),
            ind_levels: vec![0.0, 0.5, 1.0, 1.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub catalog: PathBuf,
    /// Directory holding `<project>.commits.jsonl` dumps or `<project>/`
    /// git working copies. A `/` in a project id maps to `__`.
    pub repos: PathBuf,
    pub aliases: Option<PathBuf>,
    /// Extra language profiles, taking precedence over the built-in ones.
    pub profiles: Vec<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub filter: FilterConfig,
    pub sample: SampleConfig,
    pub identity: IdentityConfig,
    pub mine: MineConfig,
    pub outliers: OutlierConfig,
    pub window: WindowConfig,
    pub network: NetworkConfig,
    pub transforms: TransformSpec,
    pub stats: StatsOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            catalog: "catalog.csv".into(),
            repos: "repos".into(),
            aliases: None,
            profiles: Vec::new(),
            output: "out".into(),
            seed: 0,
            jobs: 0,
            filter: FilterConfig::default(),
            sample: SampleConfig::default(),
            identity: IdentityConfig::default(),
            mine: MineConfig::default(),
            outliers: OutlierConfig::default(),
            window: WindowConfig::default(),
            network: NetworkConfig::default(),
            transforms: TransformSpec::default(),
            stats: StatsOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, PipelineError> {
        toml::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.catalog);
        fix(&mut self.repos);
        fix(&mut self.output);
        if let Some(a) = self.aliases.as_mut() {
            fix(a);
        }
        self.profiles.iter_mut().for_each(fix);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.output.join(stage.name())
    }

    fn validate(&self) -> Result<(), PipelineError> {
        self.filter.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.window.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.sample.strata == 0 {
            return Err(PipelineError::Config("sample.strata must be at least 1".into()));
        }
        Ok(())
    }

    fn profile_set(&self) -> Result<ProfileSet, PipelineError> {
        let mut set = ProfileSet::default();
        for p in &self.profiles {
            set.push(LanguageProfile::from_file(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?);
        }
        Ok(set)
    }

    fn alias_map(&self) -> Result<Option<AliasMap>, PipelineError> {
        match &self.aliases {
            None => Ok(None),
            Some(p) => {
                let f = fs::File::open(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                Ok(Some(AliasMap::read(f).map_err(data("alias map"))?))
            }
        }
    }

    /// Hash of the settings a stage depends on.
    fn stage_config_hash(&self, stage: Stage) -> String {
        let v = match stage {
            Stage::Filter => serde_json::json!({ "filter": self.filter }),
            Stage::Sample => serde_json::json!({
                "sample": self.sample, "seed": self.seed, "identity": self.identity,
                "moving_window_days": self.window.moving_window_days,
            }),
            Stage::Mine => serde_json::json!({
                "identity": self.identity, "mine": self.mine, "outliers": self.outliers,
                "profiles": self.profiles, "aliases": self.aliases,
            }),
            Stage::Window => serde_json::json!({ "window": self.window }),
            Stage::Network => serde_json::json!({ "network": self.network }),
            Stage::Stats => serde_json::json!({ "transforms": self.transforms, "stats": self.stats }),
            Stage::Report => serde_json::json!({}),
        };
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

// ---------------------------------------------------------------------------
// Stages and manifests

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Filter,
    Sample,
    Mine,
    Window,
    Network,
    Stats,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Filter, Stage::Sample, Stage::Mine, Stage::Window, Stage::Network, Stage::Stats, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Filter => "filter",
            Stage::Sample => "sample",
            Stage::Mine => "mine",
            Stage::Window => "window",
            Stage::Network => "network",
            Stage::Stats => "stats",
            Stage::Report => "report",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, PipelineError> {
        Stage::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| PipelineError::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    /// Paths relative to the output root.
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    pub created_at: DateTime<Utc>,
}

pub const MANIFEST: &str = "manifest.json";

/// Written files, commit count, event count.
type MinedProject = (Vec<PathBuf>, u64, u64);

pub fn sha256_file(path: &Path) -> Result<String, std::io::Error> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Writes through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), std::io::Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn csv_bytes<F>(f: F) -> Result<Vec<u8>, PipelineError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| PipelineError::Internal(e.to_string()))?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s.into_bytes()
}

pub fn file_key(id: &str) -> String {
    id.replace('/', "__")
}

/// Dump file or git working copy for a project.
pub fn source_for(repos: &Path, project_id: &str) -> Option<PathBuf> {
    let key = file_key(project_id);
    [format!("{key}.commits.jsonl"), format!("{key}.jsonl"), key.clone()]
        .into_iter()
        .map(|n| repos.join(n))
        .find(|p| p.exists())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

struct StageOutput {
    outputs: Vec<PathBuf>,
    counts: BTreeMap<String, u64>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    force: bool,
    ran: BTreeSet<Stage>,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, force: bool) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| PipelineError::Internal(e.to_string()))?;
        Ok(Self { cfg, force, ran: BTreeSet::new(), pool })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn run_all(&mut self) -> Result<Vec<(Stage, Outcome)>, PipelineError> {
        Stage::ALL.into_iter().map(|s| self.run(s).map(|o| (s, o))).collect()
    }

    pub fn run(&mut self, stage: Stage) -> Result<Outcome, PipelineError> {
        let inputs = self.inputs(stage)?;
        let mut hashed = BTreeMap::new();
        for p in &inputs {
            if !p.exists() {
                return Err(PipelineError::MissingUpstream { stage, path: p.display().to_string() });
            }
            hashed.insert(self.display_path(p), sha256_file(p)?);
        }
        let config_hash = self.cfg.stage_config_hash(stage);
        let dir = self.cfg.stage_dir(stage);
        let manifest_path = dir.join(MANIFEST);
        if let Ok(text) = fs::read_to_string(&manifest_path) {
            if let Ok(old) = serde_json::from_str::<Manifest>(&text) {
                if old.config_hash != config_hash && !self.force {
                    return Err(PipelineError::ConfigChanged(stage));
                }
                let upstream_ran = self.ran.iter().any(|s| *s < stage);
                if old.config_hash == config_hash && old.inputs == hashed && !upstream_ran && self.outputs_intact(&old)
                {
                    return Ok(Outcome::UpToDate);
                }
            }
        }
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        let out = self.pool.install(|| self.execute(stage))?;
        let mut outputs = BTreeMap::new();
        for p in &out.outputs {
            outputs.insert(self.display_path(p), sha256_file(p)?);
        }
        let manifest =
            Manifest { stage, config_hash, inputs: hashed, outputs, counts: out.counts, created_at: Utc::now() };
        write_atomic(&manifest_path, &json_bytes(&manifest))?;
        self.ran.insert(stage);
        Ok(Outcome::Ran)
    }

    fn display_path(&self, p: &Path) -> String {
        p.strip_prefix(&self.cfg.output).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    fn outputs_intact(&self, m: &Manifest) -> bool {
        m.outputs.iter().all(|(rel, h)| {
            let p = if Path::new(rel).is_absolute() { PathBuf::from(rel) } else { self.cfg.output.join(rel) };
            sha256_file(&p).map(|x| &x == h).unwrap_or(false)
        })
    }

    fn path(&self, stage: Stage, file: &str) -> PathBuf {
        self.cfg.stage_dir(stage).join(file)
    }

    fn sampled(&self) -> Result<Vec<ProjectMeta>, PipelineError> {
        let f = fs::File::open(self.path(Stage::Sample, "sample.csv"))?;
        read_catalog(f).map_err(data("sample.csv"))
    }

    fn inputs(&self, stage: Stage) -> Result<Vec<PathBuf>, PipelineError> {
        let mine_files = |this: &Self| -> Result<Vec<PathBuf>, PipelineError> {
            let sample = this.path(Stage::Sample, "sample.csv");
            if !sample.exists() {
                return Ok(vec![this.path(Stage::Mine, MANIFEST)]);
            }
            let mut v = Vec::new();
            for p in this.sampled()? {
                let d = this.path(Stage::Mine, &file_key(&p.project_id));
                for f in ["commits.csv", "events.csv", "metrics.csv"] {
                    v.push(d.join(f));
                }
            }
            Ok(v)
        };
        Ok(match stage {
            Stage::Filter => vec![self.cfg.catalog.clone()],
            Stage::Sample => vec![self.path(Stage::Filter, "filtered.csv")],
            Stage::Mine => {
                let sample = self.path(Stage::Sample, "sample.csv");
                let mut v = vec![sample.clone()];
                if sample.exists() {
                    for p in self.sampled()? {
                        let src = source_for(&self.cfg.repos, &p.project_id)
                            .ok_or_else(|| PipelineError::MissingSource(p.project_id.clone()))?;
                        if src.is_file() {
                            v.push(src);
                        }
                    }
                }
                if let Some(a) = &self.cfg.aliases {
                    v.push(a.clone());
                }
                v.extend(self.cfg.profiles.iter().cloned());
                v
            }
            Stage::Window => mine_files(self)?,
            Stage::Network => {
                let mut v = vec![self.path(Stage::Window, "observations.csv")];
                v.extend(mine_files(self)?);
                v
            }
            Stage::Stats => vec![self.path(Stage::Network, "observations.csv")],
            Stage::Report => ["regressions.json", "derived.json", "feature_clusters.json", "summary.json"]
                .iter()
                .map(|f| self.path(Stage::Stats, f))
                .collect(),
        })
    }

    fn execute(&self, stage: Stage) -> Result<StageOutput, PipelineError> {
        match stage {
            Stage::Filter => self.filter(),
            Stage::Sample => self.sample(),
            Stage::Mine => self.mine(),
            Stage::Window => self.window(),
            Stage::Network => self.network(),
            Stage::Stats => self.stats(),
            Stage::Report => self.report(),
        }
    }

    fn filter(&self) -> Result<StageOutput, PipelineError> {
        let rows = read_catalog(fs::File::open(&self.cfg.catalog)?).map_err(data("catalog"))?;
        let kept = apply_filters(&rows, &self.cfg.filter);
        let out = self.path(Stage::Filter, "filtered.csv");
        write_atomic(&out, &csv_bytes(|b| write_catalog(b, &kept).map_err(to_csv))?)?;
        Ok(StageOutput {
            outputs: vec![out],
            counts: BTreeMap::from([
                ("retained".into(), kept.len() as u64),
                ("dropped".into(), (rows.len() - kept.len()) as u64),
            ]),
        })
    }

    fn sample(&self) -> Result<StageOutput, PipelineError> {
        let mut rows =
            read_catalog(fs::File::open(self.path(Stage::Filter, "filtered.csv"))?).map_err(data("filtered.csv"))?;
        let aliases = self.cfg.alias_map()?;
        let mut filled = 0u64;
        for row in rows.iter_mut().filter(|r| r.team_size_latest.is_none()) {
            let src = source_for(&self.cfg.repos, &row.project_id)
                .ok_or_else(|| PipelineError::MissingSource(row.project_id.clone()))?;
            let (stream, _) = extract_commit_stream(&src).map_err(data(&row.project_id))?;
            let (stream, _) = resolve_identities(stream, aliases.as_ref(), &self.cfg.identity);
            let commits: Vec<_> = stream.iter().map(|c| (c.timestamp, c.author())).collect();
            let last = commits.iter().map(|c| c.0).max().unwrap_or(row.last_commit_ts);
            row.team_size_latest = Some(moving_team_size(&commits, last, &self.cfg.window) as u64);
            filled += 1;
        }
        rows.retain(|r| r.team_size_latest.unwrap_or(0) >= 1);
        let sizes: Vec<u64> = rows.iter().filter_map(|r| r.team_size_latest).collect();
        let lo = self.cfg.sample.min_team_size.or(sizes.iter().min().copied()).unwrap_or(1);
        let hi = self.cfg.sample.max_team_size.or(sizes.iter().max().copied()).unwrap_or(lo);
        let mut strata = compute_strata(lo, hi, self.cfg.sample.strata).map_err(data("strata"))?;
        assign_strata(&rows, &mut strata, self.cfg.sample.quota).map_err(data("strata"))?;
        let picked =
            stratified_sample(&rows, &strata, self.cfg.sample.quota, self.cfg.seed).map_err(data("sample"))?;
        let sample = self.path(Stage::Sample, "sample.csv");
        let strata_path = self.path(Stage::Sample, "strata.csv");
        write_atomic(&sample, &csv_bytes(|b| write_catalog(b, &picked).map_err(to_csv))?)?;
        write_atomic(&strata_path, &csv_bytes(|b| write_strata(b, &strata).map_err(to_csv))?)?;
        Ok(StageOutput {
            outputs: vec![sample, strata_path],
            counts: BTreeMap::from([
                ("population".into(), rows.len() as u64),
                ("sampled".into(), picked.len() as u64),
                ("strata".into(), strata.len() as u64),
                ("team_size_filled".into(), filled),
            ]),
        })
    }

    fn mine(&self) -> Result<StageOutput, PipelineError> {
        let projects = self.sampled()?;
        let aliases = self.cfg.alias_map()?;
        let profiles = self.cfg.profile_set()?;
        let results: Vec<Result<MinedProject, PipelineError>> = projects
            .par_iter()
            .map(|p| self.mine_project(&p.project_id, aliases.as_ref(), &profiles))
            .collect();
        let mut outputs = Vec::new();
        let (mut commits, mut events) = (0, 0);
        for r in results {
            let (o, c, e) = r?;
            outputs.extend(o);
            commits += c;
            events += e;
        }
        Ok(StageOutput {
            outputs,
            counts: BTreeMap::from([
                ("projects".into(), projects.len() as u64),
                ("commits".into(), commits),
                ("events".into(), events),
            ]),
        })
    }

    fn mine_project(
        &self,
        pid: &str,
        aliases: Option<&AliasMap>,
        profiles: &ProfileSet,
    ) -> Result<MinedProject, PipelineError> {
        let src = source_for(&self.cfg.repos, pid).ok_or_else(|| PipelineError::MissingSource(pid.to_string()))?;
        let (stream, _) = extract_commit_stream(&src).map_err(data(pid))?;
        let (stream, identities) = resolve_identities(stream, aliases, &self.cfg.identity);
        let opts = ReplayOptions { emit_merges: self.cfg.mine.emit_merges, keep_states: false };
        let replay = replay_ownership(&stream, &opts).map_err(data(pid))?;
        let events: Vec<EditEvent> = replay.aggregated(&opts).cloned().collect();
        let totals = commit_lev_totals(&stream, &events);
        let retained =
            if totals.is_empty() { BTreeSet::new() } else { filter_outlier_commits(&totals, &self.cfg.outliers).map_err(data(pid))? };
        let mut metric_rows = Vec::new();
        for c in stream.iter().filter(|c| !c.is_merge) {
            metric_rows.extend(commit_deltas(c, profiles));
        }
        let rows: Vec<CommitRow> = stream
            .iter()
            .map(|c| CommitRow {
                hash: c.hash.clone(),
                author: c.author().to_string(),
                timestamp: format_ts(&c.timestamp),
                is_merge: c.is_merge,
                lev_total: totals.get(&c.hash).copied().unwrap_or(0),
                retained: retained.contains(&c.hash),
            })
            .collect();
        let dir = self.path(Stage::Mine, &file_key(pid));
        let files = [
            (dir.join("commits.csv"), csv_bytes(|b| write_commit_rows(b, &rows))?),
            (dir.join("events.csv"), csv_bytes(|b| write_events(b, &events))?),
            (dir.join("metrics.csv"), csv_bytes(|b| write_metric_rows(b, &metric_rows))?),
            (dir.join("identities.csv"), csv_bytes(|b| write_identities(b, &identities))?),
        ];
        let mut outputs = Vec::new();
        for (p, bytes) in files {
            write_atomic(&p, &bytes)?;
            outputs.push(p);
        }
        Ok((outputs, rows.len() as u64, events.len() as u64))
    }

    fn load_mined(&self, pid: &str) -> Result<Mined, PipelineError> {
        let dir = self.path(Stage::Mine, &file_key(pid));
        let commits = read_commit_rows(fs::File::open(dir.join("commits.csv"))?).map_err(data(pid))?;
        let events = read_events(fs::File::open(dir.join("events.csv"))?).map_err(data(pid))?;
        let metrics = read_metric_rows(fs::File::open(dir.join("metrics.csv"))?).map_err(data(pid))?;
        Ok(Mined { commits, events, deltas: sum_by_commit(&metrics) })
    }

    fn window(&self) -> Result<StageOutput, PipelineError> {
        let projects = self.sampled()?;
        let results: Vec<Result<Vec<WindowObservation>, PipelineError>> =
            projects.par_iter().map(|p| self.window_project(&p.project_id)).collect();
        let mut obs = Vec::new();
        for r in results {
            obs.extend(r?);
        }
        let total = obs.len();
        let obs = drop_inactive(obs);
        let out = self.path(Stage::Window, "observations.csv");
        write_atomic(&out, &csv_bytes(|b| write_observations(b, &obs))?)?;
        Ok(StageOutput {
            outputs: vec![out],
            counts: BTreeMap::from([
                ("observations".into(), obs.len() as u64),
                ("inactive_dropped".into(), (total - obs.len()) as u64),
            ]),
        })
    }

    fn window_project(&self, pid: &str) -> Result<Vec<WindowObservation>, PipelineError> {
        let mut m = self.load_mined(pid)?;
        let (Some(anchor), Some(end)) =
            (m.commits.iter().map(|c| c.ts()).min(), m.commits.iter().map(|c| c.ts()).max())
        else {
            return Ok(Vec::new());
        };
        let retained: Vec<&CommitRow> = m.commits.iter().filter(|c| c.retained).collect();
        if retained.is_empty() {
            return Ok(Vec::new());
        }
        for c in &retained {
            m.deltas.entry(c.hash.clone()).or_default();
        }
        let stamps: Vec<DateTime<Utc>> = retained.iter().map(|c| c.ts()).collect();
        let windows = segment_windows(&stamps, anchor, end, &self.cfg.window).map_err(data(pid))?;
        let mut obs = Vec::new();
        for w in windows {
            let members: Vec<&CommitRow> = w.members.iter().map(|&i| retained[i]).collect();
            let ts = team_size(members.iter().map(|c| c.author.as_str()));
            let hashes: Vec<&str> = members.iter().map(|c| c.hash.as_str()).collect();
            let set: BTreeSet<&str> = hashes.iter().copied().collect();
            let events: Vec<EventRow> =
                m.events.iter().filter(|e| set.contains(e.commit_hash.as_str())).cloned().collect();
            let productivity = aggregate_productivity(&hashes, &m.deltas, &events, ts, self.cfg.window.time_scale())
                .map_err(data(pid))?;
            obs.push(WindowObservation {
                project_id: pid.to_string(),
                window_index: w.index,
                start_ts: w.start,
                end_ts: w.end,
                team_size: ts,
                productivity,
                network: None,
            });
        }
        Ok(obs)
    }

    fn network(&self) -> Result<StageOutput, PipelineError> {
        let obs = read_observations(fs::File::open(self.path(Stage::Window, "observations.csv"))?)
            .map_err(data("window observations"))?;
        let mut by_project: BTreeMap<String, Vec<WindowObservation>> = BTreeMap::new();
        for o in obs {
            by_project.entry(o.project_id.clone()).or_default().push(o);
        }
        let results: Vec<Result<(Vec<WindowObservation>, Vec<PathBuf>), _>> =
            by_project.par_iter().map(|(pid, obs)| self.network_project(pid, obs)).collect();
        let mut all = Vec::new();
        let mut outputs = Vec::new();
        for r in results {
            let (o, files) = r?;
            all.extend(o);
            outputs.extend(files);
        }
        let out = self.path(Stage::Network, "observations.csv");
        write_atomic(&out, &csv_bytes(|b| write_observations(b, &all))?)?;
        outputs.push(out);
        Ok(StageOutput { outputs, counts: BTreeMap::from([("observations".into(), all.len() as u64)]) })
    }

    fn network_project(
        &self,
        pid: &str,
        obs: &[WindowObservation],
    ) -> Result<(Vec<WindowObservation>, Vec<PathBuf>), PipelineError> {
        let m = self.load_mined(pid)?;
        let mut out = Vec::new();
        let mut files = Vec::new();
        for o in obs {
            let commits: Vec<&CommitRow> =
                m.commits.iter().filter(|c| c.retained && c.ts() >= o.start_ts && c.ts() < o.end_ts).collect();
            let hashes: BTreeSet<&str> = commits.iter().map(|c| c.hash.as_str()).collect();
            let mut g = build_coedit_graph(m.events.iter().filter(|e| hashes.contains(e.commit_hash.as_str())));
            g.add_members(commits.iter().map(|c| c.author.as_str()));
            let mut o = o.clone();
            o.network = Some(network_metrics(&g, o.team_size, self.cfg.network.spectral_gap));
            let edge_path = self.path(Stage::Network, &format!("edges/{}/{}.csv", file_key(pid), o.window_index));
            write_atomic(&edge_path, &csv_bytes(|b| g.write_edges(b))?)?;
            files.push(edge_path);
            out.push(o);
        }
        Ok((out, files))
    }

    fn stats(&self) -> Result<StageOutput, PipelineError> {
        let obs = read_observations(fs::File::open(self.path(Stage::Network, "observations.csv"))?)
            .map_err(data("network observations"))?;
        let spec = &self.cfg.transforms;
        let total = obs.len();
        let usable: Vec<WindowObservation> = obs
            .into_iter()
            .filter(|o| observation_columns().iter().all(|c| o.value(c).is_none_or(|v| spec.get(c).apply(v).is_some())))
            .collect();
        let table = apply_transforms(&usable, spec).map_err(data("transforms"))?;
        let opts = &self.cfg.stats;

        let mut features: Vec<String> = PRODUCTIVITY_MEASURES.iter().map(|s| s.to_string()).collect();
        features.push("team_size".into());
        features.extend(NETWORK_MEASURES.iter().map(|s| s.to_string()));
        features.retain(|f| table.columns.contains_key(f));
        let corr = pearson_matrix(&table.columns, &features).map_err(data("correlation"))?;

        let net_features: Vec<String> = features.iter().filter(|f| !PRODUCTIVITY_MEASURES.contains(&f.as_str())).cloned().collect();
        let idx: Vec<usize> = net_features.iter().map(|f| features.iter().position(|x| x == f).unwrap()).collect();
        let sub: Vec<Vec<Option<f64>>> = idx.iter().map(|&i| idx.iter().map(|&j| corr[i][j]).collect()).collect();
        let clusters = feature_cluster_select(&sub, &net_features, opts.cluster_threshold, &opts.preferred_features)
            .map_err(data("feature clusters"))?;

        let fits = fit_battery(&table.columns, &opts.targets, &opts.families, opts.bonferroni_m).map_err(data("regression"))?;
        let derived = derive(&fits, &opts.ind_levels)?;

        let summary = serde_json::json!({
            "observations": total,
            "used": usable.len(),
            "dropped_nonpositive": total - usable.len(),
            "projects": usable.iter().map(|o| o.project_id.as_str()).collect::<BTreeSet<_>>().len(),
        });
        let dir = self.cfg.stage_dir(Stage::Stats);
        let files: Vec<(PathBuf, Vec<u8>)> = vec![
            (dir.join("transformed.csv"), csv_bytes(|b| table.write_csv(b))?),
            (dir.join("transforms.toml"), spec.to_toml().into_bytes()),
            (dir.join("correlation.csv"), csv_bytes(|b| write_correlation_csv(b, &features, &corr))?),
            (dir.join("correlation_plot.json"), json_bytes(&CorrelationPlotData { features: features.clone(), values: corr.clone() })),
            (dir.join("feature_clusters.json"), json_bytes(&clusters)),
            (dir.join("regressions.json"), json_bytes(&fits)),
            (dir.join("derived.json"), json_bytes(&derived)),
            (dir.join("summary.json"), json_bytes(&summary)),
        ];
        let mut outputs = Vec::new();
        for (p, bytes) in files {
            write_atomic(&p, &bytes)?;
            outputs.push(p);
        }
        Ok(StageOutput {
            outputs,
            counts: BTreeMap::from([
                ("observations".into(), usable.len() as u64),
                ("dropped_nonpositive".into(), (total - usable.len()) as u64),
                ("fits".into(), fits.len() as u64),
            ]),
        })
    }

    fn report(&self) -> Result<StageOutput, PipelineError> {
        let read = |f: &str| -> Result<String, PipelineError> { Ok(fs::read_to_string(self.path(Stage::Stats, f))?) };
        let fits: Vec<RegressionResult> = serde_json::from_str(&read("regressions.json")?).map_err(data("regressions.json"))?;
        let derived: Derived = serde_json::from_str(&read("derived.json")?).map_err(data("derived.json"))?;
        let clusters: Vec<crate::networks::FeatureCluster> =
            serde_json::from_str(&read("feature_clusters.json")?).map_err(data("feature_clusters.json"))?;
        let summary: serde_json::Value = serde_json::from_str(&read("summary.json")?).map_err(data("summary.json"))?;
        let text = render_report(&fits, &derived, &clusters, &summary);
        let out = self.path(Stage::Report, "report.txt");
        write_atomic(&out, text.as_bytes())?;
        Ok(StageOutput { outputs: vec![out], counts: BTreeMap::from([("fits".into(), fits.len() as u64)]) })
    }
}

fn to_csv(e: crate::catalog::CatalogError) -> csv::Error {
    match e {
        crate::catalog::CatalogError::Csv(c) => c,
        other => csv::Error::from(std::io::Error::other(other.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Per-project intermediate files

/// One row of `mine/<project>/commits.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRow {
    pub hash: String,
    pub author: String,
    pub timestamp: String,
    pub is_merge: bool,
    pub lev_total: u64,
    /// Inside the Levenshtein percentile band (merges never are).
    pub retained: bool,
}

impl CommitRow {
    pub fn ts(&self) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(&self.timestamp).map(|d| d.with_timezone(&Utc)).unwrap_or_default()
    }
}

pub fn write_commit_rows<W: std::io::Write>(w: W, rows: &[CommitRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["hash", "author", "timestamp", "is_merge", "lev_total", "retained"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_commit_rows<R: std::io::Read>(r: R) -> Result<Vec<CommitRow>, csv::Error> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: CommitRow = row?;
        DateTime::parse_from_rfc3339(&row.timestamp).map_err(|e| csv::Error::from(std::io::Error::other(e)))?;
        out.push(row);
    }
    Ok(out)
}

struct Mined {
    commits: Vec<CommitRow>,
    events: Vec<EventRow>,
    deltas: BTreeMap<String, crate::metrics::FileMetricVector>,
}

// ---------------------------------------------------------------------------
// Derived quantities and report

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    /// Productivity loss per doubling of team size, from the family c fits.
    pub elasticity: BTreeMap<String, f64>,
    /// Team size at the maximum of the family b parabola, if concave.
    pub optimal_team_size: BTreeMap<String, Option<f64>>,
    pub marginal_effects: BTreeMap<String, Vec<MarginalLine>>,
}

fn derive(fits: &[RegressionResult], levels: &[f64]) -> Result<Derived, PipelineError> {
    let mut d = Derived::default();
    for f in fits {
        match f.family {
            Family::C => {
                if let Some(b) = f.beta(Term::Ts) {
                    d.elasticity.insert(f.target.clone(), elasticity_per_doubling(b));
                }
            }
            Family::B => {
                if let (Some(b1), Some(b2)) = (f.beta(Term::Ts), f.beta(Term::Ts2)) {
                    d.optimal_team_size.insert(f.target.clone(), quadratic_vertex(b1, b2));
                }
            }
            Family::E => {
                d.marginal_effects.insert(f.target.clone(), marginal_effects(f, levels).map_err(data("marginal effects"))?);
            }
            _ => {}
        }
    }
    Ok(d)
}

pub fn render_report(
    fits: &[RegressionResult],
    derived: &Derived,
    clusters: &[crate::networks::FeatureCluster],
    summary: &serde_json::Value,
) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Observations: {} used of {} ({} dropped for non-positive log values), {} projects",
        summary["used"], summary["observations"], summary["dropped_nonpositive"], summary["projects"]
    );
    if let Some(m) = fits.first().map(|f| f.bonferroni_m) {
        let _ = writeln!(s, "Bonferroni tests: {m}; stars mark adjusted p < 0.05 / 0.01 / 0.001");
    }
    s.push('\n');
    s.push_str(&render_table(fits));
    if !clusters.is_empty() {
        s.push_str("Feature clusters (representative: members)\n");
        for c in clusters {
            let _ = writeln!(s, "  {}: {}", c.representative, c.members.join(", "));
        }
        s.push('\n');
    }
    if !derived.elasticity.is_empty() {
        s.push_str("Productivity change when team size doubles (family c)\n");
        for (t, e) in &derived.elasticity {
            let _ = writeln!(s, "  {t:<8} {:+.1}%", -100.0 * e);
        }
        s.push('\n');
    }
    if !derived.optimal_team_size.is_empty() {
        s.push_str("Team size at the quadratic maximum (family b)\n");
        for (t, v) in &derived.optimal_team_size {
            match v {
                Some(v) => {
                    let _ = writeln!(s, "  {t:<8} {v:.1}");
                }
                None => {
                    let _ = writeln!(s, "  {t:<8} none");
                }
            }
        }
        s.push('\n');
    }
    if !derived.marginal_effects.is_empty() {
        s.push_str("Interaction model lines (log InD level: intercept, slope)\n");
        for (t, lines) in &derived.marginal_effects {
            let cells: Vec<String> =
                lines.iter().map(|l| format!("{:.2}: {:.2}, {:.2}", l.level, l.intercept, l.slope)).collect();
            let _ = writeln!(s, "  {t:<8} {}", cells.join(" | "));
        }
    }
    s
}
