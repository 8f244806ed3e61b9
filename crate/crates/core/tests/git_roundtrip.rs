//! A synthetic dump replayed into a real git repository must extract back
//! to the same stream, modulo commit hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use teamprod::ingest::{extract_commit_stream, read_dump, write_dump, ChangeAction, CommitRecord};
use teamprod::ownership::{replay_ownership, ReplayOptions};
use teamprod::synthkit::{gen_synthetic_repo, SyntheticPlan};

fn git_available() -> bool {
    Command::new("git").arg("--version").output().map(|o| o.status.success()).unwrap_or(false)
}

fn git(repo: &Path, args: &[&str], env: &[(&str, String)]) {
    let out = Command::new("git").arg("-C").arg(repo).args(args).envs(env.iter().map(|(k, v)| (*k, v))).output().unwrap();
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn materialise(commits: &[CommitRecord], repo: &Path) {
    git(repo, &["init", "-q"], &[]);
    git(repo, &["config", "commit.gpgsign", "false"], &[]);
    for c in commits {
        for ch in &c.changes {
            let p = repo.join(&ch.path);
            match ch.action {
                ChangeAction::Delete => fs::remove_file(&p).unwrap(),
                _ => {
                    if let Some(old) = &ch.old_path {
                        let _ = fs::remove_file(repo.join(old));
                    }
                    fs::create_dir_all(p.parent().unwrap()).unwrap();
                    fs::write(&p, ch.post_text.as_deref().unwrap_or("")).unwrap();
                }
            }
        }
        git(repo, &["add", "-A"], &[]);
        let date = format!("{} +0000", c.timestamp.timestamp());
        let env = [
            ("GIT_AUTHOR_NAME", c.author_name.clone()),
            ("GIT_AUTHOR_EMAIL", c.author_email.clone()),
            ("GIT_AUTHOR_DATE", date.clone()),
            ("GIT_COMMITTER_NAME", c.author_name.clone()),
            ("GIT_COMMITTER_EMAIL", c.author_email.clone()),
            ("GIT_COMMITTER_DATE", date),
        ];
        git(repo, &["commit", "-q", "--allow-empty", "-m", &c.hash], &env);
    }
}

fn plan() -> SyntheticPlan {
    SyntheticPlan {
        seed: 11,
        project_id: "gitrt".into(),
        team_trajectory: vec![3, 4],
        commits_per_developer: 3,
        foreign_edit_prob: 0.5,
        ..SyntheticPlan::default()
    }
}

#[test]
fn git_extraction_matches_dump() {
    if !git_available() {
        eprintln!("git not installed; skipping");
        return;
    }
    let (commits, _) = gen_synthetic_repo(&plan()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    materialise(&commits, dir.path());

    let (extracted, stats) = extract_commit_stream(dir.path()).unwrap();
    assert_eq!(stats.binary_files, 0);
    assert_eq!(extracted.len(), commits.len());
    let mut rename = BTreeMap::new();
    for (a, b) in commits.iter().zip(&extracted) {
        assert_eq!(a.author_email, b.author_email);
        assert_eq!(a.author_name, b.author_name);
        assert_eq!(a.timestamp, b.timestamp);
        assert_eq!(a.is_merge, b.is_merge);
        let key = |c: &CommitRecord| {
            let mut v: Vec<_> = c.changes.iter().map(|ch| (ch.path.clone(), ch.action, ch.pre_text.clone(), ch.post_text.clone())).collect();
            v.sort_by(|x, y| x.0.cmp(&y.0));
            v
        };
        assert_eq!(key(a), key(b), "changes of {}", a.hash);
        rename.insert(b.hash.clone(), a.hash.clone());
    }

    let opts = ReplayOptions::default();
    let from_dump = replay_ownership(&commits, &opts).unwrap().events;
    let mut from_git = replay_ownership(&extracted, &opts).unwrap().events;
    for e in &mut from_git {
        e.commit_hash = rename[&e.commit_hash].clone();
    }
    assert_eq!(from_dump, from_git);
}

#[test]
fn git_extraction_is_a_dump_fixed_point() {
    if !git_available() {
        return;
    }
    let (commits, _) = gen_synthetic_repo(&plan()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    materialise(&commits, dir.path());
    let (first, _) = extract_commit_stream(dir.path()).unwrap();
    let (second, _) = extract_commit_stream(dir.path()).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_dump(&mut a, &first).unwrap();
    write_dump(&mut b, &second).unwrap();
    assert_eq!(a, b);
    let (back, _) = read_dump(&a[..]).unwrap();
    assert_eq!(back, first);
}
