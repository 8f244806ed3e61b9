use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use teamprod::catalog::{apply_filters, assign_strata, compute_strata, stratified_sample, FilterConfig, ProjectMeta};

fn meta() -> impl Strategy<Value = ProjectMeta> {
    (
        0u32..1000,
        0u64..200,
        0u64..30,
        0i64..2000,
        0i64..1500,
        any::<bool>(),
        prop::sample::select(vec!["Python", "C", "Haskell", "Go"]),
        0.5f64..=1.0,
        0u64..6,
        1u64..80,
    )
        .prop_map(|(id, commits, devs, start, span, fork, lang, frac, root, ts)| {
            let first = Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap() + Duration::days(start);
            let mut fractions = BTreeMap::from([(lang.to_string(), frac)]);
            if frac < 1.0 {
                fractions.insert("Other".into(), 1.0 - frac);
            }
            ProjectMeta {
                project_id: format!("p{id}"),
                commit_count: commits,
                developer_count: devs,
                first_commit_ts: first,
                last_commit_ts: first + Duration::days(span),
                is_fork: fork,
                language_fractions: fractions,
                root_commit_hash: Some(format!("root{root}")),
                team_size_latest: Some(ts),
            }
        })
}

proptest! {
    #[test]
    fn filtering_is_idempotent(rows in prop::collection::vec(meta(), 0..40)) {
        let cfg = FilterConfig::default();
        let once = apply_filters(&rows, &cfg);
        prop_assert_eq!(apply_filters(&once, &cfg), once);
    }

    #[test]
    fn strata_partition_the_range(min in 1u64..50, width in 0u64..3000, k in 1usize..12) {
        let max = min + width;
        let Ok(strata) = compute_strata(min, max, k) else { return Ok(()) };
        prop_assert_eq!(strata.first().unwrap().lower, min);
        prop_assert_eq!(strata.last().unwrap().upper, max);
        for w in strata.windows(2) {
            prop_assert!(w[0].upper < w[1].upper);
        }
        let step = (width / 500).max(1);
        let mut ts = min;
        while ts <= max {
            prop_assert_eq!(strata.iter().filter(|s| s.contains(ts)).count(), 1, "team size {}", ts);
            ts += step;
        }
        prop_assert_eq!(strata.iter().filter(|s| s.contains(max)).count(), 1);
    }

    #[test]
    fn sample_respects_filters_and_roots(rows in prop::collection::vec(meta(), 0..60), seed: u64, quota in 1u64..6) {
        let cfg = FilterConfig::default();
        let filtered = apply_filters(&rows, &cfg);
        prop_assume!(!filtered.is_empty());
        let lo = filtered.iter().filter_map(|r| r.team_size_latest).min().unwrap();
        let hi = filtered.iter().filter_map(|r| r.team_size_latest).max().unwrap();
        let Ok(mut strata) = compute_strata(lo, hi, 4) else { return Ok(()) };
        assign_strata(&filtered, &mut strata, quota).unwrap();
        let picked = stratified_sample(&filtered, &strata, quota, seed).unwrap();
        prop_assert_eq!(apply_filters(&picked, &cfg).len(), picked.len());
        let roots: BTreeSet<_> = picked.iter().map(|r| r.root_commit_hash.clone()).collect();
        prop_assert_eq!(roots.len(), picked.len());
        prop_assert_eq!(stratified_sample(&filtered, &strata, quota, seed).unwrap(), picked);
    }
}

#[test]
fn strata_roughly_double() {
    let strata = compute_strata(2, 1711, 10).unwrap();
    for w in strata.windows(2) {
        let r = w[1].upper as f64 / w[0].upper as f64;
        assert!((1.8..=2.2).contains(&r), "{} -> {}", w[0].upper, w[1].upper);
    }
}
