use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn teamprod(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teamprod")).args(args).current_dir(cwd).output().unwrap()
}

fn demo_config(dir: &Path) {
    let catalog = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo_catalog.csv");
    fs::write(dir.join("teamprod.toml"), format!("catalog = {:?}\noutput = \"out\"\n", catalog.to_str().unwrap())).unwrap();
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(teamprod(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(teamprod(&["filter", "--jobs", "many"], dir.path()).status.code(), Some(1));
    let out = teamprod(&["filter"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("teamprod.toml"));
    assert_eq!(teamprod(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn filter_then_missing_upstream() {
    let dir = tempfile::tempdir().unwrap();
    demo_config(dir.path());
    let out = teamprod(&["filter"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/filter/filtered.csv").exists());
    assert!(dir.path().join("out/filter/manifest.json").exists());
    let again = teamprod(&["filter"], dir.path());
    assert!(String::from_utf8_lossy(&again.stderr).contains("up to date"));

    let out = teamprod(&["stats"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("network/observations.csv"));
}

#[test]
fn seed_override_requires_force_for_sample() {
    let dir = tempfile::tempdir().unwrap();
    let repos = dir.path().join("repos");
    assert!(teamprod(&["synth", "corpus", "--out", repos.to_str().unwrap(), "--count", "2"], dir.path()).status.success());
    fs::write(dir.path().join("teamprod.toml"), "catalog = \"repos/catalog.csv\"\n[sample]\nstrata = 1\n").unwrap();
    assert!(teamprod(&["sample"], dir.path()).status.code() == Some(1), "sample before filter must fail");
    assert!(teamprod(&["filter"], dir.path()).status.success());
    assert!(teamprod(&["sample", "--seed", "1"], dir.path()).status.success());
    assert_eq!(teamprod(&["sample", "--seed", "2"], dir.path()).status.code(), Some(1));
    assert!(teamprod(&["sample", "--seed", "2", "--force"], dir.path()).status.success());
}

#[test]
fn synth_repo_and_simpson_write_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("plan.toml"), "project_id = \"demo\"\nseed = 3\nteam_trajectory = [2, 4]\n").unwrap();
    let out = teamprod(&["synth", "repo", "--plan", "plan.toml", "--out", "repos"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("repos/demo.commits.jsonl").exists());
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("repos/demo.truth.json")).unwrap()).unwrap();
    assert_eq!(truth["windows"][1]["team_size"], 4);

    let out = teamprod(&["synth", "simpson", "--out", "s/simpson.csv"], dir.path());
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("s/simpson.csv")).unwrap();
    assert_eq!(csv.lines().count(), 601);
    assert!(dir.path().join("s/simpson.csv.truth.json").exists());

    fs::write(dir.path().join("bad.toml"), "team_trajectory = [1]\nforeign_edit_prob = 0.5\n").unwrap();
    let out = teamprod(&["synth", "repo", "--plan", "bad.toml", "--out", "repos"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
