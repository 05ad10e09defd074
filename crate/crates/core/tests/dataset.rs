mod common;

use common::rng;
use proptest::prelude::*;
use reskill::controllers::ControllerKind;
use reskill::dataset::{
    build_dataset, cut, export_jsonl, filter, slice, CollectPlan, DatasetError, SkillDataset, Trajectory, STD_FLOOR,
};
use reskill::env::EnvConfig;

fn toy(len: usize) -> Trajectory {
    let mut t = Trajectory::new(ControllerKind::ReactivePush, 0);
    for i in 0..len {
        let mut s = [0.0; 16];
        s[0] = i as f64;
        t.push(s, [i as f64 * 0.01, 0.0, 0.0, 0.0], 0.0);
    }
    t
}

fn small_plan(seed: u64) -> CollectPlan {
    CollectPlan {
        push_trajectories: 20,
        pick_trajectories: 20,
        seed,
        ..CollectPlan::default()
    }
}

#[test]
fn filter_is_strict() {
    assert!(!filter(&toy(10), 10));
    assert!(filter(&toy(11), 10));
    assert!(!filter(&toy(0), 10));
}

#[test]
fn slice_start_is_uniform() {
    let t = toy(11);
    let mut r = rng(1);
    let n = 10_000;
    let mut counts = [0usize; 2];
    for _ in 0..n {
        let s = slice(&t, 0, 10, &mut r).unwrap();
        counts[s.start] += 1;
    }
    let e = n as f64 / 2.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 99th percentile of chi-square with one degree of freedom.
    assert!(chi2 < 6.635, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn slice_copies_rows_and_rejects_short_input() {
    let t = toy(25);
    let mut r = rng(2);
    let s = slice(&t, 7, 10, &mut r).unwrap();
    assert_eq!(s.trajectory, 7);
    assert_eq!(s.horizon(), 10);
    assert_eq!(&s.actions[..], &t.actions[s.start..s.start + 10]);
    assert_eq!(&s.states[..], &t.states[s.start..s.start + 10]);
    assert!(matches!(
        slice(&toy(10), 0, 10, &mut r),
        Err(DatasetError::TooShort { len: 10, horizon: 10 })
    ));
}

#[test]
fn empty_plan_is_an_error() {
    let plan = CollectPlan {
        push_trajectories: 0,
        pick_trajectories: 0,
        ..CollectPlan::default()
    };
    assert!(matches!(build_dataset(&plan, &EnvConfig::default()), Err(DatasetError::Plan(_))));
}

#[test]
fn horizon_longer_than_every_episode_yields_nothing() {
    let plan = CollectPlan {
        horizon: 500,
        ..small_plan(0)
    };
    assert!(matches!(
        build_dataset(&plan, &EnvConfig::default()),
        Err(DatasetError::Empty { horizon: 500 })
    ));
}

#[test]
fn build_is_deterministic_and_bounded() {
    let env = EnvConfig::default();
    let a = build_dataset(&small_plan(3), &env).unwrap();
    let b = build_dataset(&small_plan(3), &env).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_eq!(a, b);
    let c = build_dataset(&small_plan(4), &env).unwrap();
    assert_ne!(a.content_hash(), c.content_hash());

    let plan = CollectPlan {
        push_trajectories: 100,
        pick_trajectories: 100,
        ..CollectPlan::default()
    };
    let big = build_dataset(&plan, &env).unwrap();
    assert!(big.len() <= 800);
    assert_eq!(big.len(), (200 - big.summary.rejected) * 4);
    assert_eq!(big.summary.trajectories, 200);
}

#[test]
fn normalised_states_have_unit_spread() {
    let ds = build_dataset(&small_plan(5), &EnvConfig::default()).unwrap();
    let rows: Vec<_> = ds.segments.iter().flat_map(|s| s.states.iter()).collect();
    let n = rows.len() as f64;
    let mut constant = 0;
    for d in 0..16 {
        let xs: Vec<f64> = rows.iter().map(|s| ds.stats.normalize(s)[d]).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let raw_min = rows.iter().map(|s| s[d]).fold(f64::INFINITY, f64::min);
        let raw_max = rows.iter().map(|s| s[d]).fold(f64::NEG_INFINITY, f64::max);
        if raw_max > raw_min {
            assert!((std - 1.0).abs() < 1e-9, "dim {d}: std {std}");
            assert!(mean.abs() < 1e-9, "dim {d}: mean {mean}");
        } else {
            constant += 1;
            assert_eq!(ds.stats.std[d], STD_FLOOR);
            assert!(xs.iter().all(|x| x.is_finite()));
        }
    }
    // Goal height is the same in every data-collection episode.
    assert!(constant >= 1);
}

#[test]
fn segments_are_recoverable_from_provenance() {
    let env = EnvConfig::default();
    let plan = small_plan(6);
    let ds = build_dataset(&plan, &env).unwrap();
    for seg in ds.segments.iter().step_by(7) {
        let traj = plan.trajectory(&env, seg.trajectory as usize).unwrap();
        assert_eq!(&cut(&traj, seg.trajectory, seg.start, ds.horizon), seg);
    }
}

#[test]
fn hash_tracks_segment_bytes() {
    let ds = build_dataset(&small_plan(7), &EnvConfig::default()).unwrap();
    let mut segments = ds.segments.clone();
    let same = SkillDataset::new(ds.horizon, segments.clone(), ds.plan.clone(), ds.summary.clone());
    assert_eq!(same.content_hash(), ds.content_hash());
    segments[3].actions[2][1] = f64::from_bits(segments[3].actions[2][1].to_bits() ^ 1);
    let changed = SkillDataset::new(ds.horizon, segments, ds.plan.clone(), ds.summary.clone());
    assert_ne!(changed.content_hash(), ds.content_hash());
}

#[test]
fn save_load_round_trip_and_errors() {
    let ds = build_dataset(&small_plan(8), &EnvConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("skills.rskd");
    ds.save(&path).unwrap();
    let back = SkillDataset::load(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.to_bytes(), ds.to_bytes());

    let bytes = ds.to_bytes();
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    assert!(matches!(SkillDataset::from_bytes(&bad), Err(DatasetError::HashMismatch)));

    let mut old = bytes.clone();
    old[4..8].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(
        SkillDataset::from_bytes(&old),
        Err(DatasetError::Version { found: 0, expected: 1 })
    ));

    assert!(matches!(
        SkillDataset::from_bytes(&bytes[..bytes.len() / 3]),
        Err(DatasetError::Truncated)
    ));
    assert!(matches!(SkillDataset::from_bytes(b"nope"), Err(DatasetError::BadMagic)));
}

#[test]
fn jsonl_export_has_one_line_per_segment() {
    let ds = build_dataset(&small_plan(9), &EnvConfig::default()).unwrap();
    let mut out = Vec::new();
    export_jsonl(&ds, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), ds.len() + 1);
    let header: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(header["content_hash"], ds.content_hash());
    let first: reskill::dataset::SkillSegment = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(first, ds.segments[0]);
}

proptest! {
    #[test]
    fn slices_stay_inside_their_trajectory(len in 11usize..200, seed in any::<u64>()) {
        let t = toy(len);
        let mut r = rng(seed);
        let s = slice(&t, 0, 10, &mut r).unwrap();
        prop_assert!(s.start + 10 <= len);
        prop_assert_eq!(s.states[0][0], s.start as f64);
        for w in s.states.windows(2) {
            prop_assert_eq!(w[1][0] - w[0][0], 1.0);
        }
    }
}
