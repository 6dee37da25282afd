use navworld_geometry::Pose;
use navworld_model::{ModelConfig, NavModel};
use navworld_numerics::ParamStore;
use navworld_runtime::dump::{read_dump, trajectory_rows, write_dump};
use navworld_runtime::plot::plot_dump;
use navworld_runtime::rollout::DecisionRecord;
use navworld_runtime::*;
use navworld_sim::{generate_episode, Action, Episode, Frame, RenderConfig, WorldMap};
use navworld_train::{episode_config, Stage, TrainConfig, Trainer, Variant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro() -> (NavModel, ParamStore<f32>) {
    let (model, mut store) = NavModel::build::<f32>(&ModelConfig::micro(), 0).unwrap();
    store.randomize(0.3, &mut ChaCha8Rng::seed_from_u64(1));
    (model, store)
}

fn episodes(n: usize) -> Vec<Episode> {
    let cfg = episode_config(&ModelConfig::micro());
    navworld_train::generate_episodes(500, n, &cfg).unwrap()
}

fn config(variant: Variant, k: usize) -> RolloutConfig {
    let mut c = RolloutConfig::new(variant, SfsSchedule::new(k, ModelConfig::micro().horizon).unwrap());
    c.step_cap = 30;
    c
}

#[test]
fn schedule_definition() {
    let s = SfsSchedule::new(10, 5).unwrap();
    assert_eq!(s.active_steps(25), vec![0, 10, 20]);
    assert_eq!(s.calls(25), 3);
    assert_eq!(s.calls(0), 0);
    assert_eq!(s.calls(10), 1);
    assert_eq!(s.calls(11), 2);
    let every = SfsSchedule::new(1, 5).unwrap();
    assert_eq!(every.active_steps(4), vec![0, 1, 2, 3]);
    assert!(SfsSchedule::new(0, 5).is_err());
    assert!(SfsSchedule::new(1, 0).is_err());
}

fn wp(x: f64, y: f64, deg: f64, p: f64) -> Waypoint {
    Waypoint {
        x,
        y,
        theta: deg.to_radians(),
        arrive_prob: p,
    }
}

#[test]
fn waypoint_quantization() {
    assert_eq!(quantize(&wp(0.0, 0.0, 15.0, 0.0)), Some(Action::TurnLeft));
    assert_eq!(quantize(&wp(0.25, 0.0, -15.0, 0.9)), Some(Action::TurnRight));
    assert_eq!(quantize(&wp(0.25, 0.0, 7.0, 0.9)), Some(Action::Forward));
    assert_eq!(quantize(&wp(0.1, 0.1, 0.0, 0.0)), Some(Action::Forward));
    assert_eq!(quantize(&wp(0.05, 0.0, 0.0, 0.6)), Some(Action::Stop));
    assert_eq!(quantize(&wp(0.05, 0.0, 0.0, 0.4)), None);
    // A no-op first waypoint defers to the next decisive one.
    assert_eq!(
        choose_action(&[wp(0.0, 0.0, 0.0, 0.1), wp(0.0, 0.0, 30.0, 0.1)]),
        Action::TurnLeft
    );
    assert_eq!(choose_action(&[wp(0.0, 0.0, 0.0, 0.1)]), Action::Stop);
    assert_eq!(choose_action(&[]), Action::Stop);
}

#[test]
fn waypoint_decoding_per_variant() {
    let f = Waypoint::from_row(&[0.25, 0.0, 0.0, 2.0, 0.0], Variant::Former);
    assert!((f.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    assert!((f.arrive_prob - 0.5).abs() < 1e-12);
    let d = Waypoint::from_row(&[0.0, 0.0, 1.0, 0.0, 1.0], Variant::Diffusion);
    assert_eq!(d.arrive_prob, 1.0);
    assert_eq!(
        Waypoint::from_row(&[0.0, 0.0, 1.0, 0.0, -3.0], Variant::Diffusion).arrive_prob,
        0.0
    );
    assert_eq!(Waypoint::from_row(&[0.0, 0.0, 0.0, 0.0, 0.0], Variant::Diffusion).theta, 0.0);
}

fn corridor_episode() -> Episode {
    let map = WorldMap::from_ascii(&["##########", "#........#", "##########"], 1.0).unwrap();
    let start = Pose::planar(1.5, 1.5, 0.0);
    Episode {
        seed: 0,
        instruction: "go to the end".into(),
        tokens: vec![],
        map,
        target: 0,
        goal_cell: (8, 1),
        goal: [8.5, 1.5],
        start,
        poses: vec![start],
        actions: vec![],
        steps: vec![],
        path_length: 0.0,
        geodesic: 7.0,
        arrival_threshold: 1.0,
        render: RenderConfig::default(),
    }
}

fn scripted(xs: &[f64], stop: StopReason) -> RolloutResult {
    RolloutResult {
        episode_seed: 0,
        poses: xs.iter().map(|&x| Pose::planar(x, 1.5, 0.0)).collect(),
        steps: vec![],
        decisions: vec![],
        stop,
        collisions: 0,
        generator_calls: 0,
        wall_s: 0.0,
        observed: vec![],
        predicted: vec![],
    }
}

#[test]
fn nav_metrics_on_constructed_episodes() {
    let ep = corridor_episode();
    let cases = [
        // Shortest path, stop at the goal.
        (scripted(&[1.5, 8.5], StopReason::AgentStop), true, true, 0.0, 1.0),
        // Stops far from the goal.
        (scripted(&[1.5, 3.5], StopReason::AgentStop), false, false, 5.0, 0.0),
        // Detour of twice the shortest length, then success.
        (scripted(&[1.5, 5.0, 1.5, 8.5], StopReason::AgentStop), true, true, 0.0, 0.5),
        // Passes the goal, ends outside the radius on the step cap.
        (scripted(&[1.5, 8.5, 6.5], StopReason::StepCap), false, true, 2.0, 0.0),
        // Stops inside the radius before the goal cell centre.
        (scripted(&[1.5, 8.25], StopReason::AgentStop), true, true, 0.25, 1.0),
    ];
    let mut outcomes = Vec::new();
    for (i, (r, success, oracle, ne, spl)) in cases.iter().enumerate() {
        let o = EpisodeOutcome::from_rollout(r, &ep);
        assert_eq!(o.success, *success, "case {i}");
        assert_eq!(o.oracle_success, *oracle, "case {i}");
        assert!((o.final_distance - ne).abs() < 1e-12, "case {i}: {}", o.final_distance);
        assert!((o.spl() - spl).abs() < 1e-12, "case {i}: {}", o.spl());
        outcomes.push(o);
    }
    let m = nav_metrics(&outcomes).unwrap();
    assert!((m.sr - 0.6).abs() < 1e-12);
    assert!((m.os - 0.8).abs() < 1e-12);
    assert!((m.spl - 0.5).abs() < 1e-12);
    assert!((m.ne - 1.45).abs() < 1e-12);
    assert_eq!(m.episodes, 5);
    assert!(m.sr <= m.os);
    assert!(nav_metrics(&[]).is_err());
}

fn frame(res: usize, data: Vec<f32>) -> Frame {
    Frame { res, data }
}

#[test]
fn psnr_reference_values() {
    let n = Frame::len_for(4);
    let zeros = frame(4, vec![0.0; n]);
    let ones = frame(4, vec![1.0; n]);
    assert_eq!(psnr(&zeros, &zeros).unwrap(), PSNR_CAP);
    assert_eq!(psnr(&zeros, &ones).unwrap(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let a: Vec<f32> = (0..n).map(|_| rng.gen()).collect();
        let b: Vec<f32> = (0..n).map(|_| rng.gen()).collect();
        let mse: f64 = a.iter().zip(&b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / n as f64;
        let direct = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&frame(4, a), &frame(4, b)).unwrap() - direct).abs() <= 1e-9);
    }
    assert!(psnr(&zeros, &frame(2, vec![0.0; Frame::len_for(2)])).is_err());
    assert!(psnr(&zeros, &frame(4, vec![2.0; n])).is_err());
}

proptest! {
    #[test]
    fn aggregate_metrics_are_consistent(
        raw in prop::collection::vec((any::<bool>(), any::<bool>(), 0.0..10.0f64, 0.0..20.0f64, 0.5..10.0f64), 1..20)
    ) {
        let outcomes: Vec<EpisodeOutcome> = raw
            .iter()
            .map(|&(s, o, d, p, l)| {
                // Success implies having been inside the radius.
                let success = s && o;
                EpisodeOutcome {
                    success,
                    oracle_success: o,
                    final_distance: if success { d.min(1.0) } else { d },
                    path_length: p,
                    shortest: l,
                }
            })
            .collect();
        let m = nav_metrics(&outcomes).unwrap();
        prop_assert!(m.sr <= m.os);
        prop_assert!(m.spl <= m.os);
        prop_assert!(m.ne >= 0.0);
        for o in &outcomes {
            let spl = o.spl();
            prop_assert!((0.0..=1.0).contains(&spl));
            if !o.success {
                prop_assert_eq!(spl, 0.0);
            }
        }
    }

    #[test]
    fn psnr_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Frame::len_for(3);
        let a = frame(3, (0..n).map(|_| rng.gen()).collect());
        let b = frame(3, (0..n).map(|_| rng.gen()).collect());
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }
}

fn flags(d: &[DecisionRecord]) -> Vec<bool> {
    d.iter().map(|d| d.generator).collect()
}

#[test]
fn generator_calls_follow_schedule() {
    let (model, store) = micro();
    for ep in episodes(4) {
        for k in [1, 3, 10] {
            let cfg = config(Variant::Diffusion, k);
            let r = rollout(&model, &store, &ep, &cfg).unwrap();
            let t = r.decisions.len();
            assert_eq!(r.generator_calls, cfg.schedule.calls(t));
            let expected: Vec<bool> = (0..t).map(|i| i % k == 0).collect();
            assert_eq!(flags(&r.decisions), expected);
            assert!(r.steps.len() <= cfg.step_cap);
            assert!(r
                .decisions
                .iter()
                .all(|d| d.wall_s >= 0.0 && d.generator_s >= 0.0 && d.policy_s >= 0.0));
            let mut off = cfg.clone();
            off.generator = false;
            assert_eq!(rollout(&model, &store, &ep, &off).unwrap().generator_calls, 0);
        }
        let r = rollout(&model, &store, &ep, &config(Variant::Former, 1)).unwrap();
        assert_eq!(r.generator_calls, 0);
        assert!(r.decisions.iter().all(|d| !d.generator));
    }
}

#[test]
fn rollouts_are_deterministic() {
    let (model, store) = micro();
    for ep in episodes(3) {
        for variant in [Variant::Former, Variant::Diffusion] {
            let cfg = config(variant, 2);
            let a = rollout(&model, &store, &ep, &cfg).unwrap().without_timing();
            let b = rollout(&model, &store, &ep, &cfg).unwrap().without_timing();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        }
    }
}

#[test]
fn rollout_bookkeeping() {
    let (model, store) = micro();
    let eps = episodes(5);
    let mut cfg = config(Variant::Former, 1);
    cfg.step_cap = 7;
    for ep in &eps {
        let r = rollout(&model, &store, ep, &cfg).unwrap();
        assert!(r.steps.len() <= 7);
        assert_eq!(r.poses[0], ep.start);
        let moved = r.steps.iter().filter(|s| s.action != Action::Stop).count();
        assert_eq!(r.poses.len(), moved + 1);
        match r.stop {
            StopReason::AgentStop => assert_eq!(r.steps.last().unwrap().action, Action::Stop),
            StopReason::StepCap => assert_eq!(r.steps.len(), 7),
            StopReason::CollisionCap => assert_eq!(r.collisions, cfg.collision_cap),
        }
    }
    let ev = evaluate(&model, &store, &eps, &cfg, 1).unwrap();
    let par = evaluate(&model, &store, &eps, &cfg, 3).unwrap();
    assert_eq!(ev.metrics, par.metrics);
    assert!(ev.metrics.sr <= ev.metrics.os);
    let bl = random_baseline(&eps, &cfg).unwrap();
    assert_eq!(bl.metrics.episodes, 5);
    assert_eq!(bl.generator_calls(), 0);
}

#[test]
fn multi_step_execution_runs_several_actions_per_plan() {
    let (model, store) = micro();
    let mut cfg = config(Variant::Former, 1);
    cfg.execute_steps = 2;
    for ep in episodes(3) {
        let r = rollout(&model, &store, &ep, &cfg).unwrap();
        assert!(r.decisions.len() <= r.steps.len());
        for d in 0..r.decisions.len() {
            let n = r.steps.iter().filter(|s| s.decision == d).count();
            assert!((1..=2).contains(&n));
        }
    }
    let bad = RolloutConfig { execute_steps: 0, ..cfg };
    assert!(rollout(&model, &store, &episodes(1)[0], &bad).is_err());
}

#[test]
fn speed_report_counts_generator_calls() {
    let (model, store) = micro();
    let eps = episodes(3);
    let r = speed_report(&model, &store, &eps, &[1, 2, 5], &config(Variant::Diffusion, 1), 2).unwrap();
    assert_eq!(r.rows.len(), 3);
    for row in &r.rows {
        assert_eq!(row.generator_calls, row.expected_calls);
        assert!(row.mean_wall_s > 0.0);
    }
    assert!(r.speedup(1, 5).is_some());
    assert!(r.table().lines().count() == 4);
    // Interleaving and repeats leave the outcomes of each interval unchanged.
    for row in &r.rows {
        let ev = evaluate(&model, &store, &eps, &config(Variant::Diffusion, row.k), 1).unwrap();
        assert_eq!(row.sr, ev.metrics.sr);
        assert_eq!(row.generator_calls, ev.generator_calls());
        assert_eq!(row.decisions, ev.results.iter().map(|r| r.decisions.len()).sum::<usize>());
    }
    assert!(speed_report(&model, &store, &eps, &[1], &config(Variant::Diffusion, 1), 0).is_err());
    let f = speed_report(&model, &store, &eps, &[1, 5], &config(Variant::Former, 1), 1).unwrap();
    assert!(f.rows.iter().all(|r| r.generator_calls == 0 && r.expected_calls == 0));
}

#[test]
fn mismatched_episode_resolution_is_rejected() {
    let (model, store) = micro();
    let mut ep = episodes(1).remove(0);
    ep.render.resolution = 32;
    assert!(matches!(
        rollout(&model, &store, &ep, &config(Variant::Former, 1)),
        Err(RuntimeError::Mismatch(_))
    ));
}

#[test]
fn bundles_round_trip_through_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (model, store) = micro();
    let trainer = Trainer::new(TrainConfig {
        stage: Stage::Joint,
        variant: Variant::Diffusion,
        ..TrainConfig::default()
    })
    .unwrap();
    trainer.save(&model, &store, &dir.path().join("last.ckpt")).unwrap();
    let b = load_bundle(dir.path()).unwrap();
    assert_eq!(b.variant, Some(Variant::Diffusion));
    assert_eq!(b.model.cfg, model.cfg);
    let ep = &episodes(1)[0];
    let cfg = config(Variant::Diffusion, 2);
    let a = rollout(&model, &store, ep, &cfg).unwrap().without_timing();
    let c = rollout(&b.model, &b.store, ep, &cfg).unwrap().without_timing();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    assert!(load_bundle(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn dumps_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let (model, store) = micro();
    let ep = generate_episode(42, &episode_config(&model.cfg)).unwrap();
    let mut cfg = config(Variant::Diffusion, 3);
    cfg.record_frames = true;
    cfg.step_cap = 12;
    let r = rollout(&model, &store, &ep, &cfg).unwrap();
    assert_eq!(r.observed.len(), r.poses.len());
    assert_eq!(r.predicted.len(), r.generator_calls);
    write_dump(dir.path(), &ep, &r).unwrap();
    let d = read_dump(dir.path()).unwrap();
    assert_eq!(d.trajectory, trajectory_rows(&r));
    assert_eq!(d.trajectory.len(), r.steps.len() + 1);
    assert_eq!(d.trajectory.last().unwrap().action, "end");
    assert_eq!(d.observed, r.observed);
    assert_eq!(d.predicted, r.predicted);
    assert_eq!(d.episode, ep);

    let out = dir.path().join("plots");
    let files = plot_dump(dir.path(), &out).unwrap();
    assert_eq!(files.len(), 1 + r.predicted.len());
    let decoder = png::Decoder::new(std::fs::File::open(out.join("trajectory.png")).unwrap());
    let reader = decoder.read_info().unwrap();
    assert_eq!(reader.info().width as usize, ep.map.width * 24);
}
