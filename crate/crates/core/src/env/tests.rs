use proptest::prelude::*;

use super::*;

fn spec(id: TaskId) -> TaskSpec {
    EnvConfig::default().task(id)
}

fn env(id: TaskId, seed: u64) -> (Env, ObsVector) {
    Env::reset(spec(id), PhysicsConfig::default(), seed)
}

#[test]
fn reset_is_deterministic() {
    for id in TaskId::ALL {
        let (_, a) = env(id, 42);
        let (_, b) = env(id, 42);
        assert_eq!(a, b);
        let (_, c) = env(id, 43);
        assert_ne!(a, c);
    }
}

#[test]
fn unknown_task_is_rejected() {
    assert_eq!(
        "hook".parse::<TaskId>(),
        Err(EnvError::UnknownTask("hook".into()))
    );
    assert_eq!("table-cleanup".parse::<TaskId>(), Ok(TaskId::TableCleanup));
}

#[test]
fn data_collect_has_no_obstacles() {
    let (e, _) = env(TaskId::DataCollectEmpty, 1);
    assert!(e.world().obstacles.is_empty());
}

#[test]
fn pyramid_has_base_and_separate_block() {
    let cfg = EnvConfig::default();
    let base = cfg.pyramid_stack.base.clone().unwrap();
    for seed in 0..50 {
        let (e, _) = env(TaskId::PyramidStack, seed);
        let w = e.world();
        assert_eq!(w.obstacles.len(), 1);
        let o = w.obstacles[0];
        assert_eq!(o.height, 2.0 * base.half);
        assert_eq!(o.min, [base.center[0] - base.half, base.center[1] - base.half]);
        assert!(!o.overlaps_disc([w.block[0], w.block[1]], w.block_half));
        assert_eq!(w.block[2], w.block_half);
        assert!((w.goal[2] - (2.0 * base.half + w.block_half)).abs() < 1e-15);
    }
}

#[test]
fn zero_action_on_static_scene_changes_nothing() {
    let (mut e, obs) = env(TaskId::DataCollectEmpty, 3);
    let before = e.world().clone();
    let r = e.step(&[0.0; 4]).unwrap();
    assert_eq!(e.world(), &before);
    assert_eq!(r.obs, obs);
    assert_eq!(r.reward, 0.0);
    assert_eq!(r.info.block_displacement, 0.0);
}

#[test]
fn block_at_goal_rewards_once_and_ends() {
    let (e, _) = env(TaskId::SlipperyPush, 5);
    let mut w = e.world().clone();
    w.block = w.goal;
    let mut e = Env::from_world(spec(TaskId::SlipperyPush), PhysicsConfig::default(), w);
    let r = e.step(&[0.0; 4]).unwrap();
    assert_eq!(r.reward, 1.0);
    assert!(r.done && r.info.success);
    assert_eq!(e.step(&[0.0; 4]), Err(EnvError::EpisodeDone));
}

#[test]
fn episode_ends_at_horizon() {
    let (mut e, _) = env(TaskId::TableCleanup, 9);
    let mut steps = 0;
    loop {
        let r = e.step(&[0.0, 0.0, 1.0, 0.0]).unwrap();
        steps += 1;
        if r.done {
            break;
        }
    }
    assert_eq!(steps, 50);
}

/// Gripper placed just behind the block, moving through it once, then held
/// still; returns the total distance the block travels.
fn slide_distance(id: TaskId) -> f64 {
    let (e, _) = env(id, 11);
    let mut w = e.world().clone();
    w.goal = [0.95, 0.95, w.block_half];
    w.block = [0.3, 0.5, w.block_half];
    w.gripper = [0.24, 0.5, w.block_half];
    let mut e = Env::from_world(spec(id), PhysicsConfig::default(), w);
    let start = e.world().block;
    e.step(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    for _ in 0..60 {
        if e.step(&[0.0; 4]).unwrap().done {
            break;
        }
    }
    dist3(start, e.world().block)
}

#[test]
fn slippery_block_slides_further() {
    let normal = slide_distance(TaskId::DataCollectEmpty);
    let slippery = slide_distance(TaskId::SlipperyPush);
    assert!(normal > 0.0);
    assert!(slippery > normal, "slippery {slippery} normal {normal}");
}

#[test]
fn observe_layout() {
    let (e, obs) = env(TaskId::DataCollectEmpty, 0);
    let home = PhysicsConfig::default().home;
    assert_eq!(&obs[0..3], &home);
    assert_eq!(obs[3], 1.0);
    assert_eq!(observe(e.world()), observe(e.world()));

    let mut w = e.world().clone();
    w.attached = true;
    w.block = w.gripper;
    let o = observe(&w);
    assert_eq!(&o[4..7], &o[0..3]);
    assert_eq!(o[9], 1.0);
    assert_eq!(&o[10..13], &[0.0, 0.0, 0.0]);
}

#[test]
fn success_predicates() {
    let (e, _) = env(TaskId::SlipperyPush, 1);
    let mut w = e.world().clone();
    w.block = w.goal;
    assert!(success(&w, &spec(TaskId::SlipperyPush)));
    w.block_vel = [0.05, 0.0];
    assert!(!success(&w, &spec(TaskId::SlipperyPush)));

    let cleanup = spec(TaskId::TableCleanup);
    let (e, _) = env(TaskId::TableCleanup, 1);
    let mut w = e.world().clone();
    let c = cleanup.geometry.tray.as_ref().unwrap().center;
    w.block = [c[0], c[1], 0.1];
    w.gripper = w.block;
    w.attached = true;
    assert!(!success(&w, &cleanup));
    w.attached = false;
    w.block[2] = w.block_half;
    assert!(success(&w, &cleanup));

    let stack = spec(TaskId::PyramidStack);
    let (e, _) = env(TaskId::PyramidStack, 1);
    let mut w = e.world().clone();
    w.block = w.goal;
    assert!(success(&w, &stack));
    let tol = stack.geometry.success_tolerance;
    w.block[0] += 2.0 * tol;
    assert!(!success(&w, &stack));
}

#[test]
fn grasp_carry_and_release() {
    let (e, _) = env(TaskId::DataCollectEmpty, 2);
    let mut w = e.world().clone();
    w.gripper = [w.block[0] + 0.01, w.block[1], w.block[2] + 0.01];
    w.aperture = 0.4;
    let mut e = Env::from_world(spec(TaskId::DataCollectEmpty), PhysicsConfig::default(), w);
    e.step(&[0.0, 0.0, 0.0, -1.0]).unwrap();
    assert!(e.world().attached);
    assert_eq!(e.world().block, e.world().gripper);
    e.step(&[0.0, 0.0, 1.0, -1.0]).unwrap();
    assert!(e.world().block[2] > e.world().block_half + 0.04);
    e.step(&[0.0, 0.0, 0.0, 1.0]).unwrap();
    e.step(&[0.0, 0.0, 0.0, 1.0]).unwrap();
    assert!(!e.world().attached);
    assert_eq!(e.world().block[2], e.world().block_half);
}

#[test]
fn tray_wall_stops_low_carry_but_not_high_carry() {
    let cleanup = spec(TaskId::TableCleanup);
    let tray = cleanup.geometry.tray.clone().unwrap();
    let run = |lift: f64| {
        let (e, _) = env(TaskId::TableCleanup, 4);
        let mut w = e.world().clone();
        w.block = [tray.center[0] - 0.2, tray.center[1], w.block_half + lift];
        w.gripper = w.block;
        w.attached = true;
        w.aperture = 0.0;
        let mut e = Env::from_world(cleanup.clone(), PhysicsConfig::default(), w);
        for _ in 0..8 {
            e.step(&[1.0, 0.0, 0.0, -1.0]).unwrap();
        }
        e.world().block[0]
    };
    let wall_outer = tray.center[0] - tray.inner_half - tray.wall_thickness;
    assert!(run(0.03) < wall_outer);
    assert!(run(0.05) > wall_outer);
}

proptest! {
    #[test]
    fn invariants_hold_under_random_actions(
        seed in 0u64..1000,
        task in 0usize..4,
        actions in prop::collection::vec(prop::array::uniform4(-3.0f64..3.0), 1..60),
    ) {
        let id = TaskId::ALL[task];
        let (mut e, _) = env(id, seed);
        for a in &actions {
            let before = e.world().clone();
            let r = e.step(a).unwrap();
            let w = e.world();
            for i in 0..3 {
                prop_assert!(w.gripper[i] >= 0.0 && w.gripper[i] <= WORKSPACE_MAX[i]);
            }
            prop_assert!(w.block[2] >= w.block_half - 1e-12 || w.attached);
            if w.attached {
                prop_assert_eq!(w.block, w.gripper);
            }
            prop_assert!(r.reward == 0.0 || r.reward == 1.0);
            prop_assert_eq!(r.reward == 1.0, r.info.success);
            // Markov: replaying the same step from the same world agrees.
            let mut again = before.clone();
            advance(&mut again, e.physics(), e.task().geometry.gripper_locked, a);
            prop_assert_eq!(&again, w);
            if r.done {
                break;
            }
        }
    }

    #[test]
    fn block_never_speeds_up_without_contact(
        vx in -0.05f64..0.05, vy in -0.05f64..0.05,
        actions in prop::collection::vec(prop::array::uniform4(-1.0f64..1.0), 1..30),
    ) {
        let (e, _) = env(TaskId::SlipperyPush, 0);
        let mut w = e.world().clone();
        w.block_vel = [vx, vy];
        w.gripper[2] = 0.3;
        let p = PhysicsConfig::default();
        for a in &actions {
            let mut a = *a;
            a[2] = a[2].abs();
            let speed = w.block_speed();
            advance(&mut w, &p, true, &a);
            prop_assert!(w.block_speed() <= speed + 1e-15);
        }
    }
}
