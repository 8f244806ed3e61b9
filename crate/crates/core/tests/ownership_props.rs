use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use teamprod::ingest::{read_dump, resolve_identities, write_dump, CommitRecord, IdentityConfig};
use teamprod::ownership::{levenshtein, replay_ownership, split_lines, EditEvent, EditKind, ReplayOptions};
use teamprod::synthkit::{dp_levenshtein, gen_synthetic_repo, naive_ownership_replay, SyntheticPlan};

fn small_plan() -> impl Strategy<Value = SyntheticPlan> {
    (any::<u64>(), prop::collection::vec(1usize..5, 1..3), 1usize..4, 0.0f64..0.8, 1usize..4, 0.0f64..0.5)
        .prop_map(|(seed, mut traj, cpd, foreign, files, add)| {
            if traj.contains(&1) {
                traj.iter_mut().for_each(|t| *t = (*t).max(2));
            }
            SyntheticPlan {
                seed,
                team_trajectory: traj,
                commits_per_developer: cpd,
                foreign_edit_prob: foreign,
                file_count: files,
                addition_prob: add,
                ..SyntheticPlan::default()
            }
        })
}

fn sorted(mut v: Vec<EditEvent>) -> Vec<EditEvent> {
    v.sort_by(|a, b| format!("{a:?}").cmp(&format!("{b:?}")));
    v
}

fn per_commit(events: &[EditEvent]) -> BTreeMap<&str, (i64, i64)> {
    let mut m: BTreeMap<&str, (i64, i64)> = BTreeMap::new();
    for e in events {
        let c = m.entry(e.commit_hash.as_str()).or_default();
        match e.kind {
            EditKind::Addition => c.0 += 1,
            EditKind::Deletion => c.1 += 1,
            EditKind::Modification => {}
        }
    }
    m
}

fn lines(t: &Option<String>) -> i64 {
    t.as_deref().map_or(0, |t| split_lines(t).len() as i64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn incremental_replay_matches_naive(plan in small_plan()) {
        let (commits, _) = gen_synthetic_repo(&plan).unwrap();
        prop_assume!(commits.len() <= 100);
        let fast = replay_ownership(&commits, &ReplayOptions::default()).unwrap().events;
        let slow = naive_ownership_replay(&commits).unwrap();
        prop_assert_eq!(sorted(fast), sorted(slow));
    }

    #[test]
    fn additions_minus_deletions_conserve_lines(plan in small_plan()) {
        let (commits, _) = gen_synthetic_repo(&plan).unwrap();
        let events = replay_ownership(&commits, &ReplayOptions::default()).unwrap().events;
        let counts = per_commit(&events);
        for c in &commits {
            let delta: i64 = c.changes.iter().filter(|ch| !ch.is_binary).map(|ch| lines(&ch.post_text) - lines(&ch.pre_text)).sum();
            let (adds, dels) = counts.get(c.hash.as_str()).copied().unwrap_or_default();
            prop_assert_eq!(adds - dels, delta, "commit {}", c.hash);
        }
    }

    #[test]
    fn every_line_has_one_owner(plan in small_plan()) {
        let (commits, _) = gen_synthetic_repo(&plan).unwrap();
        let replay = replay_ownership(&commits, &ReplayOptions { keep_states: true, ..Default::default() }).unwrap();
        let mut files: BTreeMap<String, String> = BTreeMap::new();
        let authors: BTreeSet<&str> = commits.iter().map(|c| c.author_email.as_str()).collect();
        for c in &commits {
            for ch in &c.changes {
                if let Some(old) = &ch.old_path {
                    files.remove(old);
                }
                match &ch.post_text {
                    Some(t) => files.insert(ch.path.clone(), t.clone()),
                    None => files.remove(&ch.path),
                };
            }
            let snap = replay.states[&c.hash].snapshot();
            prop_assert_eq!(snap.keys().collect::<Vec<_>>(), files.keys().collect::<Vec<_>>());
            for (path, owned) in &snap {
                let texts: Vec<&str> = owned.iter().map(|(_, t)| t.as_str()).collect();
                prop_assert_eq!(texts, split_lines(&files[path]));
                prop_assert!(owned.iter().all(|(o, _)| authors.contains(o.as_str())));
            }
        }
    }

    #[test]
    fn dump_roundtrip_is_a_fixed_point(plan in small_plan()) {
        let (commits, _) = gen_synthetic_repo(&plan).unwrap();
        let mut a = Vec::new();
        write_dump(&mut a, &commits).unwrap();
        let (back, _) = read_dump(&a[..]).unwrap();
        let mut b = Vec::new();
        write_dump(&mut b, &back).unwrap();
        prop_assert_eq!(&back, &commits);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn levenshtein_metric_axioms(a in "[abc ]{0,12}", b in "[abc ]{0,12}", c in "[abc ]{0,12}") {
        let d = levenshtein;
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b) == 0, a == b);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert_eq!(d(&a, &b), dp_levenshtein(&a, &b).unwrap());
    }

    #[test]
    fn levenshtein_counts_chars_not_bytes(a in "[aé語 ]{0,10}", b in "[aé語 ]{0,10}") {
        prop_assert_eq!(levenshtein(&a, &b), dp_levenshtein(&a, &b).unwrap());
    }

    #[test]
    fn identities_partition_aliases(pairs in prop::collection::vec((0usize..4, 0usize..4, any::<bool>()), 1..30), by_name: bool) {
        let t0 = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        let stream: Vec<CommitRecord> = pairs
            .iter()
            .enumerate()
            .map(|(i, (n, e, upper))| {
                let email = format!("dev{e}@x.org");
                CommitRecord {
                    hash: format!("{i:040}"),
                    parents: if i == 0 { vec![] } else { vec![format!("{:040}", i - 1)] },
                    author_name: format!("Dev {n}"),
                    author_email: if *upper { email.to_uppercase() } else { email },
                    author_id: None,
                    timestamp: t0 + Duration::hours(i as i64),
                    is_merge: false,
                    changes: vec![],
                }
            })
            .collect();
        let cfg = IdentityConfig { merge_by_email: true, merge_by_name: by_name };
        let (resolved, ids) = resolve_identities(stream.clone(), None, &cfg);
        let mut seen = BTreeSet::new();
        for id in &ids {
            for a in &id.aliases {
                prop_assert!(seen.insert(a.clone()), "alias {:?} in two identities", a);
            }
        }
        let inputs: BTreeSet<(String, String)> = stream.iter().map(|c| (c.author_name.clone(), c.author_email.clone())).collect();
        prop_assert_eq!(&seen, &inputs);
        let id_of: BTreeMap<&str, &str> = resolved.iter().map(|c| (c.hash.as_str(), c.author())).collect();
        for x in &stream {
            for y in &stream {
                let linked = x.author_email.eq_ignore_ascii_case(&y.author_email) || (by_name && x.author_name == y.author_name);
                if linked {
                    prop_assert_eq!(id_of[x.hash.as_str()], id_of[y.hash.as_str()]);
                }
            }
        }
    }
}
