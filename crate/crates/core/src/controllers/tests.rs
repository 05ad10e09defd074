use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::env::{observe, EnvConfig, WorldState, OBS_DIM};

fn world(gripper: [f64; 3], block: [f64; 3], goal: [f64; 3]) -> WorldState {
    WorldState {
        gripper,
        aperture: 1.0,
        block,
        block_vel: [0.0, 0.0],
        block_half: 0.025,
        attached: false,
        goal,
        obstacles: Vec::new(),
        friction: 0.3,
    }
}

fn cos(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let n = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    dot / (n(a) * n(b))
}

#[test]
fn push_at_goal_is_zero() {
    let c = ControllerConfig::default();
    let obs = observe(&world([0.2, 0.2, 0.1], [0.5, 0.5, 0.025], [0.52, 0.5, 0.025]));
    assert_eq!(push_branch(&obs, &c), PushBranch::AtGoal);
    assert_eq!(reactive_push(&obs, &c), [0.0; 4]);
}

#[test]
fn push_from_push_location_moves_toward_goal() {
    let c = ControllerConfig::default();
    let block = [0.4, 0.5, 0.025];
    let offset = c.push_offset * c.block_half;
    let obs = observe(&world([0.4 - offset, 0.5, 0.025], block, [0.7, 0.5, 0.025]));
    assert_eq!(push_branch(&obs, &c), PushBranch::Push);
    let a = reactive_push(&obs, &c);
    assert!(a[0] > 0.0);
    assert!(a[1].abs() < 1e-12);
}

#[test]
fn far_gripper_heads_for_push_location() {
    let c = ControllerConfig::default();
    let block = [0.5, 0.5, 0.025];
    let goal = [0.5, 0.75, 0.025];
    let gripper = [0.3, 0.2, 0.1];
    let obs = observe(&world(gripper, block, goal));
    assert_eq!(push_branch(&obs, &c), PushBranch::Approach);
    let a = reactive_push(&obs, &c);
    let loc = [0.5, 0.5 - c.push_offset * c.block_half, 0.025];
    let dir = [loc[0] - gripper[0], loc[1] - gripper[1], loc[2] - gripper[2]];
    assert!(cos([a[0], a[1], a[2]], dir) > 0.99);
}

#[test]
fn gripper_in_front_of_block_goes_around() {
    let c = ControllerConfig::default();
    // Gripper between block and goal at table height: a straight move would
    // shove the block the wrong way.
    let obs = observe(&world([0.5, 0.55, 0.025], [0.5, 0.5, 0.025], [0.5, 0.75, 0.025]));
    assert_eq!(push_branch(&obs, &c), PushBranch::Lift);
    let a = reactive_push(&obs, &c);
    assert!(a[2] > 0.0 && a[0] == 0.0 && a[1] == 0.0);
}

#[test]
fn pick_at_goal_is_zero() {
    let c = ControllerConfig::default();
    let obs = observe(&world([0.2, 0.2, 0.1], [0.5, 0.5, 0.025], [0.5, 0.5, 0.025]));
    assert_eq!(pick_and_place(&obs, &c), [0.0; 4]);
}

#[test]
fn pick_descends_when_above_open() {
    let c = ControllerConfig::default();
    let obs = observe(&world([0.5, 0.505, 0.09], [0.5, 0.5, 0.025], [0.2, 0.2, 0.025]));
    assert_eq!(pick_branch(&obs, &c), PickBranch::Descend);
    let a = pick_and_place(&obs, &c);
    assert!(a[2] < 0.0 && a[3] >= 0.0);
}

#[test]
fn pick_closes_around_block_then_carries_low() {
    let c = ControllerConfig::default();
    let mut w = world([0.5, 0.5, 0.035], [0.5, 0.5, 0.025], [0.2, 0.2, 0.025]);
    let obs = observe(&w);
    assert_eq!(pick_and_place(&obs, &c), [0.0, 0.0, 0.0, -1.0]);
    w.attached = true;
    w.gripper = w.block;
    let obs = observe(&w);
    assert_eq!(pick_branch(&obs, &c), PickBranch::Carry);
    assert!(pick_and_place(&obs, &c)[3] < 0.0);
}

#[test]
fn pick_never_lifts_block_above_cap() {
    let cfg = EnvConfig::default();
    let c = ControllerConfig::default();
    for id in [TaskId::DataCollectEmpty, TaskId::TableCleanup, TaskId::PyramidStack] {
        let task = cfg.task(id);
        for seed in 0..40 {
            let (mut env, mut obs) = Env::reset(task.clone(), cfg.physics.clone(), seed);
            let mut carried = false;
            loop {
                let r = env.step(&pick_and_place(&obs, &c)).unwrap();
                let w = env.world();
                if w.attached {
                    carried = true;
                    assert!(w.block[2] - w.block_half <= c.lift_cap + 1e-12, "{id} seed {seed}");
                }
                obs = r.obs;
                if r.done {
                    break;
                }
            }
            assert!(carried, "{id} seed {seed} never grasped");
        }
    }
}

#[test]
fn unknown_controller_is_rejected() {
    assert!(matches!("hook".parse::<ControllerKind>(), Err(ControllerError::UnknownKind(_))));
    assert_eq!("pick-and-place".parse::<ControllerKind>(), Ok(ControllerKind::PickAndPlace));
}

#[test]
fn perlin_vanishes_on_knots_and_respects_bound() {
    let cfg = PerlinConfig {
        seed: 3,
        ..PerlinConfig::default()
    };
    let mut track = PerlinTrack::new(&cfg, 17);
    let slope = 2.0 * cfg.alpha[0] * SLOPE_BOUND / cfg.lambda as f64;
    let mut prev = track.sample(0);
    assert_eq!(prev, [0.0; 4]);
    for t in 1..5000 {
        let n = perlin_sample(&mut track, t);
        for d in 0..4 {
            assert!(n[d].abs() <= cfg.alpha[d]);
            assert!((n[d] - prev[d]).abs() <= slope, "t={t} jump {}", (n[d] - prev[d]).abs());
        }
        if t % cfg.lambda == 0 {
            assert_eq!(n, [0.0; 4]);
        }
        prev = n;
    }
}

#[test]
fn gradient_noise_bound_is_tight_enough() {
    // Dense scan over the worst-case gradients.
    let mut max_val = 0.0f64;
    let mut max_slope = 0.0f64;
    let h = 1e-6;
    for &(g0, g1) in &[(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        for i in 0..1000 {
            let f = i as f64 / 1000.0;
            max_val = max_val.max(gradient_noise(g0, g1, f).abs());
            let d = (gradient_noise(g0, g1, f + h) - gradient_noise(g0, g1, f)) / h;
            max_slope = max_slope.max(d.abs());
        }
    }
    assert!(max_val <= 0.5 + 1e-12);
    assert!(max_slope <= SLOPE_BOUND);
}

fn lag1(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    let cov: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    cov / var
}

#[test]
fn perlin_is_correlated_white_noise_is_not() {
    let cfg = PerlinConfig::default();
    let mut track = PerlinTrack::new(&cfg, 5);
    let xs: Vec<f64> = (0..1000).map(|t| track.sample(t)[0]).collect();
    let r_perlin = lag1(&xs);
    let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
    let normal = Normal::new(0.0, var.sqrt()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let white: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
    let r_white = lag1(&white);
    assert!(r_perlin > 0.9, "perlin lag-1 {r_perlin}");
    assert!(r_white.abs() < 0.1, "white lag-1 {r_white}");
}

#[test]
fn invalid_noise_is_rejected() {
    let cfg = EnvConfig::default();
    let bad = PerlinConfig {
        lambda: 1,
        ..PerlinConfig::default()
    };
    let err = rollout(
        &cfg.task(TaskId::DataCollectEmpty),
        &cfg.physics,
        ControllerKind::ReactivePush,
        &ControllerConfig::default(),
        &bad,
        0,
    )
    .unwrap_err();
    assert!(matches!(err, ControllerError::Noise(_)));
}

#[test]
fn rollout_requires_data_collection_task() {
    let cfg = EnvConfig::default();
    let err = rollout(
        &cfg.task(TaskId::SlipperyPush),
        &cfg.physics,
        ControllerKind::ReactivePush,
        &ControllerConfig::default(),
        &PerlinConfig::default(),
        0,
    )
    .unwrap_err();
    assert_eq!(err, ControllerError::TaskMismatch(TaskId::SlipperyPush));
}

#[test]
fn silent_noise_reproduces_the_pure_controller() {
    let cfg = EnvConfig::default();
    let c = ControllerConfig::default();
    let task = cfg.task(TaskId::DataCollectEmpty);
    for kind in ControllerKind::ALL {
        for seed in 0..5 {
            let traj = rollout(&task, &cfg.physics, kind, &c, &PerlinConfig::silent(), seed).unwrap();
            let (mut env, mut obs) = Env::reset(task.clone(), cfg.physics.clone(), seed);
            for t in 0..traj.len() {
                assert_eq!(traj.states[t], obs);
                let a = kind.act(&obs, &c);
                assert_eq!(traj.actions[t], a);
                let r = env.step(&a).unwrap();
                assert_eq!(traj.rewards[t], r.reward);
                obs = r.obs;
            }
            assert!(env.is_done());
        }
    }
}

#[test]
fn rollouts_are_deterministic() {
    let cfg = EnvConfig::default();
    let task = cfg.task(TaskId::DataCollectEmpty);
    let c = ControllerConfig::default();
    let noise = PerlinConfig::default();
    let a = rollout(&task, &cfg.physics, ControllerKind::PickAndPlace, &c, &noise, 9).unwrap();
    let b = rollout(&task, &cfg.physics, ControllerKind::PickAndPlace, &c, &noise, 9).unwrap();
    assert_eq!(a, b);
    let other = rollout(&task, &cfg.physics, ControllerKind::PickAndPlace, &c, &noise, 10).unwrap();
    assert_ne!(a, other);
}

#[test]
fn noisy_pushing_still_mostly_succeeds() {
    let cfg = EnvConfig::default();
    let task = cfg.task(TaskId::DataCollectEmpty);
    let c = ControllerConfig::default();
    let noise = PerlinConfig::default();
    let ok = (0..200)
        .filter(|&s| {
            rollout(&task, &cfg.physics, ControllerKind::ReactivePush, &c, &noise, s)
                .unwrap()
                .success
        })
        .count();
    assert!(ok >= 120, "{ok}/200");
}

fn arb_obs() -> impl Strategy<Value = ObsVector> {
    (
        prop::array::uniform3(0.0f64..1.0),
        prop::array::uniform2(0.05f64..0.95),
        prop::array::uniform2(0.05f64..0.95),
        0.0f64..0.2,
        any::<bool>(),
    )
        .prop_map(|(g, b, goal, gz, attached)| {
            let mut w = world([g[0], g[1], g[2] * 0.3], [b[0], b[1], 0.025], [goal[0], goal[1], 0.025]);
            if attached {
                w.attached = true;
                w.block = [b[0], b[1], 0.025 + gz];
                w.gripper = w.block;
            }
            let o = observe(&w);
            assert_eq!(o.len(), OBS_DIM);
            o
        })
}

proptest! {
    #[test]
    fn actions_are_bounded_and_follow_their_branch(obs in arb_obs()) {
        let c = ControllerConfig::default();
        for a in [reactive_push(&obs, &c), pick_and_place(&obs, &c)] {
            for x in a {
                prop_assert!(x.is_finite() && (-1.0..=1.0).contains(&x));
            }
        }
        let a = reactive_push(&obs, &c);
        prop_assert_eq!(push_branch(&obs, &c) == PushBranch::AtGoal, a == [0.0; 4]);
        let a = pick_and_place(&obs, &c);
        match pick_branch(&obs, &c) {
            PickBranch::AtGoal => prop_assert_eq!(a, [0.0; 4]),
            PickBranch::Close => prop_assert_eq!(a, [0.0, 0.0, 0.0, -1.0]),
            PickBranch::Carry => prop_assert_eq!(a[3], -1.0),
            PickBranch::Descend | PickBranch::MoveAbove => prop_assert_eq!(a[3], 1.0),
        }
    }

    #[test]
    fn noisy_actions_stay_in_range(seed in 0u64..500, kind in 0usize..2) {
        let cfg = EnvConfig::default();
        let noise = PerlinConfig { alpha: [1.5; 4], ..PerlinConfig::default() };
        let traj = rollout(
            &cfg.task(TaskId::DataCollectEmpty),
            &cfg.physics,
            ControllerKind::ALL[kind],
            &ControllerConfig::default(),
            &noise,
            seed,
        ).unwrap();
        for a in &traj.actions {
            for x in a {
                prop_assert!((-1.0..=1.0).contains(x));
            }
        }
        prop_assert_eq!(traj.states.len(), traj.rewards.len());
        prop_assert!(traj.rewards.iter().sum::<f64>() <= 1.0);
    }
}
