use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use teamprod::pipeline::{Manifest, Outcome, Pipeline, PipelineConfig, PipelineError, Stage, MANIFEST};
use teamprod::synthkit::gen_mini_corpus;

fn demo_catalog() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo_catalog.csv")
}

fn corpus_config(root: &Path, count: usize, out: &str) -> PipelineConfig {
    let repos = root.join("repos");
    if !repos.join("catalog.csv").exists() {
        gen_mini_corpus(&repos, count, 3).unwrap();
    }
    let mut cfg = PipelineConfig::from_toml_str("seed = 9\n[sample]\nstrata = 2\nquota = 10\n").unwrap();
    cfg.catalog = repos.join("catalog.csv");
    cfg.repos = repos;
    cfg.output = root.join(out);
    cfg
}

/// Relative path to contents, manifests excluded.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else if p.file_name().unwrap() != MANIFEST {
                out.insert(p.strip_prefix(base).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn manifest(cfg: &PipelineConfig, stage: Stage) -> Manifest {
    serde_json::from_str(&fs::read_to_string(cfg.output.join(stage.name()).join(MANIFEST)).unwrap()).unwrap()
}

#[test]
fn filter_demo_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig { catalog: demo_catalog(), output: dir.path().join("out"), ..Default::default() };
    let mut p = Pipeline::new(cfg.clone(), false).unwrap();
    assert_eq!(p.run(Stage::Filter).unwrap(), Outcome::Ran);
    let m = manifest(&cfg, Stage::Filter);
    assert_eq!(m.counts["retained"], 5);
    assert_eq!(m.counts["dropped"], 7);
    let kept = fs::read_to_string(cfg.output.join("filter/filtered.csv")).unwrap();
    let ids: Vec<&str> = kept.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["alpha/core", "theta/web", "iota/kernel", "kappa/lib", "lambda/app"]);
    assert_eq!(m.outputs.len(), 1);
    assert!(m.inputs.values().all(|h| h.len() == 64));

    let mut again = Pipeline::new(cfg, false).unwrap();
    assert_eq!(again.run(Stage::Filter).unwrap(), Outcome::UpToDate);
}

#[test]
fn stats_without_upstream_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig { catalog: demo_catalog(), output: dir.path().join("out"), ..Default::default() };
    let err = Pipeline::new(cfg, false).unwrap().run(Stage::Stats).unwrap_err();
    assert!(matches!(err, PipelineError::MissingUpstream { stage: Stage::Stats, .. }), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn three_project_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = corpus_config(dir.path(), 3, "a");
    let b = corpus_config(dir.path(), 3, "b");
    Pipeline::new(a.clone(), false).unwrap().run_all().unwrap();
    let mut jobs = b.clone();
    jobs.jobs = 1;
    Pipeline::new(jobs, false).unwrap().run_all().unwrap();
    let (ta, tb) = (tree(&a.output), tree(&b.output));
    assert!(ta.contains_key("report/report.txt"));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{k} differs");
    }
    for s in Stage::ALL {
        let (ma, mb) = (manifest(&a, s), manifest(&b, s));
        assert_eq!((ma.outputs, ma.counts, ma.config_hash), (mb.outputs, mb.counts, mb.config_hash), "{s}");
    }
}

#[test]
fn deleting_stats_reruns_stats_and_report_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = corpus_config(dir.path(), 3, "out");
    Pipeline::new(cfg.clone(), false).unwrap().run_all().unwrap();
    let report = fs::read(cfg.output.join("report/report.txt")).unwrap();
    fs::remove_dir_all(cfg.output.join("stats")).unwrap();
    let outcomes = Pipeline::new(cfg.clone(), false).unwrap().run_all().unwrap();
    let ran: Vec<Stage> = outcomes.iter().filter(|(_, o)| *o == Outcome::Ran).map(|(s, _)| *s).collect();
    assert_eq!(ran, [Stage::Stats, Stage::Report]);
    assert_eq!(fs::read(cfg.output.join("report/report.txt")).unwrap(), report);

    // A tampered output invalidates its stage and everything after it.
    fs::write(cfg.output.join("window/observations.csv"), "garbage").unwrap();
    let outcomes = Pipeline::new(cfg.clone(), false).unwrap().run_all().unwrap();
    let ran: Vec<Stage> = outcomes.iter().filter(|(_, o)| *o == Outcome::Ran).map(|(s, _)| *s).collect();
    assert_eq!(ran, [Stage::Window, Stage::Network, Stage::Stats, Stage::Report]);
}

#[test]
fn changed_config_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = corpus_config(dir.path(), 3, "out");
    Pipeline::new(cfg.clone(), false).unwrap().run_all().unwrap();
    let mut changed = cfg.clone();
    changed.stats.cluster_threshold = 0.6;
    let err = Pipeline::new(changed.clone(), false).unwrap().run_all().unwrap_err();
    assert!(matches!(err, PipelineError::ConfigChanged(Stage::Stats)), "{err}");
    let outcomes = Pipeline::new(changed, true).unwrap().run_all().unwrap();
    assert_eq!(outcomes.iter().filter(|(_, o)| *o == Outcome::Ran).count(), 2);
}

#[test]
fn missing_source_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = corpus_config(dir.path(), 3, "out");
    fs::remove_file(cfg.repos.join("proj01.commits.jsonl")).unwrap();
    let err = Pipeline::new(cfg, false).unwrap().run_all().unwrap_err();
    assert!(matches!(err, PipelineError::MissingSource(ref p) if p == "proj01"), "{err}");
    assert_eq!(err.exit_code(), 2);
}
