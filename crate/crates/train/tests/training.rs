use navworld_model::{ModelConfig, NavModel};
use navworld_numerics::{checkpoint, ParamStore};
use navworld_train::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn data(n: usize) -> Dataset {
    let cfg = ModelConfig::micro();
    Dataset::new(generate_episodes(100, n, &episode_config(&cfg)).unwrap())
}

fn run(cfg: TrainConfig, store_seed: u64, data: &Dataset) -> (NavModel, ParamStore<f32>, Vec<StepLog>) {
    let (model, mut store) = NavModel::build::<f32>(&ModelConfig::micro(), store_seed).unwrap();
    let mut tr = Trainer::new(cfg).unwrap();
    let logs = tr.run(&model, &mut store, data, None, None).unwrap();
    (model, store, logs)
}

fn cfg(stage: Stage, variant: Variant, steps: u64) -> TrainConfig {
    TrainConfig {
        stage,
        variant,
        steps,
        batch_size: 2,
        warmup: 0,
        ..TrainConfig::default()
    }
}

fn starts<'a>(prefixes: &'a [&'a str]) -> impl Fn(&str) -> bool + 'a {
    move |n| prefixes.iter().any(|p| n.starts_with(p))
}

#[test]
fn identical_seeds_reproduce_loss_curves() {
    let d = data(6);
    for (stage, variant) in [
        (Stage::Video, Variant::Former),
        (Stage::Joint, Variant::Diffusion),
        (Stage::Joint, Variant::Former),
    ] {
        let (_, s1, a) = run(cfg(stage, variant, 4), 3, &d);
        let (_, s2, b) = run(cfg(stage, variant, 4), 3, &d);
        let strip = |v: &[StepLog]| v.iter().map(StepLog::without_time).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(s1.checksum(|_| true), s2.checksum(|_| true));
        let mut other = cfg(stage, variant, 4);
        other.seed = 1;
        let (_, _, c) = run(other, 3, &d);
        assert_ne!(strip(&a), strip(&c));
    }
}

#[test]
fn stage_one_leaves_frozen_groups_untouched() {
    let d = data(4);
    let (_, before) = NavModel::build::<f32>(&ModelConfig::micro(), 5).unwrap();
    let cases: [(Stage, Variant, &'static [&'static str], &'static [&'static str]); 3] = [
        (
            Stage::Video,
            Variant::Former,
            &["planner.", "former.", "policy.", "fusion."],
            &["dit.", "codec."],
        ),
        (
            Stage::Policy,
            Variant::Former,
            &["planner.", "dit.", "codec.", "policy.", "fusion."],
            &["former."],
        ),
        (
            Stage::Policy,
            Variant::Diffusion,
            &["planner.", "dit.", "codec.", "former.", "fusion."],
            &["policy."],
        ),
    ];
    for (stage, variant, frozen, trained) in cases {
        let (_, after, _) = run(cfg(stage, variant, 3), 5, &d);
        for p in frozen {
            let f = starts(std::slice::from_ref(p));
            assert_eq!(before.checksum(&f), after.checksum(&f), "{stage} moved {p}");
        }
        let t = starts(trained);
        assert_ne!(before.checksum(&t), after.checksum(&t), "{stage} did not train {trained:?}");
    }
}

#[test]
fn joint_stage_trains_every_used_group() {
    let d = data(4);
    let (_, before) = NavModel::build::<f32>(&ModelConfig::micro(), 5).unwrap();
    let mut c = cfg(Stage::Joint, Variant::Diffusion, 3);
    c.mmfca_prob = 1.0;
    let (_, after, _) = run(c, 5, &d);
    for p in ["planner.", "dit.", "codec.", "policy.", "fusion."] {
        let f = starts(std::slice::from_ref(&p));
        assert_ne!(before.checksum(&f), after.checksum(&f), "{p} frozen in stage 2");
    }
    let f = starts(&["former."]);
    assert_eq!(before.checksum(&f), after.checksum(&f));
}

#[test]
fn gamma_draws_match_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let hits = (0..n).filter(|_| draw_gamma(&mut rng, 0.5)).count();
    let rate = hits as f64 / n as f64;
    assert!((0.48..=0.52).contains(&rate), "rate {rate}");
}

#[test]
fn batches_switch_fusion_per_sample_only_in_joint_diffusion() {
    let d = data(4);
    let (model, _) = NavModel::build::<f32>(&ModelConfig::micro(), 0).unwrap();
    let mut c = cfg(Stage::Joint, Variant::Diffusion, 1);
    c.batch_size = 50;
    let mut tr = Trainer::new(c.clone()).unwrap();
    let mut on = 0;
    let mut mixed = false;
    for _ in 0..20 {
        let b = tr.draw_batch(&model, &d).unwrap();
        let k = b.iter().filter(|i| i.gamma).count();
        mixed |= k > 0 && k < b.len();
        on += k;
    }
    let rate = on as f64 / 1000.0;
    assert!(mixed);
    assert!((0.44..=0.56).contains(&rate), "rate {rate}");
    for (stage, variant) in [(Stage::Joint, Variant::Former), (Stage::Policy, Variant::Diffusion)] {
        let mut tr = Trainer::new(TrainConfig {
            stage,
            variant,
            ..c.clone()
        })
        .unwrap();
        assert!(tr.draw_batch(&model, &d).unwrap().iter().all(|i| !i.gamma));
    }
}

#[test]
fn logged_total_is_weighted_sum() {
    let d = data(3);
    for variant in [Variant::Former, Variant::Diffusion] {
        for lambda in [0.5, 1.0, 2.0] {
            let (model, mut store) = NavModel::build::<f64>(&ModelConfig::micro(), 2).unwrap();
            store.randomize(0.05, &mut ChaCha8Rng::seed_from_u64(4));
            let mut tr = Trainer::new(TrainConfig {
                lambda,
                ..cfg(Stage::Joint, variant, 1)
            })
            .unwrap();
            let items = tr.draw_batch(&model, &d).unwrap();
            let log = tr.step_on(&model, &mut store, &items).unwrap();
            let (vg, ph) = (log.l_vg.unwrap(), log.l_ph.unwrap());
            assert!((log.total - (vg + lambda * ph)).abs() <= 1e-9, "{variant} λ={lambda}");
            let r = log.l_recon.unwrap();
            assert!((log.objective - (log.total + r)).abs() <= 1e-9);
        }
    }
}

#[test]
fn stage_losses_are_isolated() {
    let d = data(3);
    let (_, _, v) = run(cfg(Stage::Video, Variant::Former, 1), 0, &d);
    assert!(v[0].l_vg.is_some() && v[0].l_ph.is_none() && v[0].l_recon.is_some());
    assert_eq!(v[0].total, v[0].l_vg.unwrap());
    let (_, _, p) = run(cfg(Stage::Policy, Variant::Former, 1), 0, &d);
    assert!(p[0].l_vg.is_none() && p[0].l_ph.is_some() && p[0].l_recon.is_none());
    assert!(p[0].l_pos.is_some() && p[0].l_angle.is_some() && p[0].l_arrive.is_some());
    assert_eq!(p[0].objective, p[0].total);
}

#[test]
fn nan_loss_aborts_with_attribution() {
    let d = data(3);
    let (model, mut store) = NavModel::build::<f32>(&ModelConfig::micro(), 0).unwrap();
    let id = store.id_of("dit.in_proj.weight").expect("generator input projection");
    store.get_mut(id).value.data_mut()[0] = f32::NAN;
    let mut tr = Trainer::new(cfg(Stage::Video, Variant::Former, 3)).unwrap();
    match tr.run(&model, &mut store, &d, None, None) {
        Err(TrainError::NonFinite { step, component }) => {
            assert_eq!(step, 0);
            assert_eq!(component, "l_vg");
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_reproduces_outputs() {
    let d = data(3);
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(Stage::Joint, Variant::Former, 4);
    c.checkpoint_every = 2;
    let (model, mut store) = NavModel::build::<f32>(&ModelConfig::micro(), 0).unwrap();
    let mut log = Vec::new();
    let mut tr = Trainer::new(c).unwrap();
    let logs = tr.run(&model, &mut store, &d, Some(&mut log), Some(dir.path())).unwrap();
    assert!(dir.path().join("step_2.ckpt").exists());
    let lines: Vec<StepLog> = std::str::from_utf8(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines, logs);

    let (fresh_model, mut fresh) = NavModel::build::<f32>(&ModelConfig::micro(), 99).unwrap();
    let header = checkpoint::load(&dir.path().join("last.ckpt"), &mut fresh).unwrap();
    assert_eq!(header.global_step, 4);
    assert_eq!(header.config_hash, model.cfg.hash());
    assert_eq!(header.meta["stage"], "2");
    let s = d.sample((0, 1), &model.cfg).unwrap();
    let a = s.with_input(|i| model.context_value(&store, i)).unwrap();
    let b = s.with_input(|i| fresh_model.context_value(&fresh, i)).unwrap();
    assert_eq!(
        model.former_actions(&store, &a).unwrap(),
        fresh_model.former_actions(&fresh, &b).unwrap()
    );
}

#[test]
fn config_validation_and_parsing() {
    assert!(TrainConfig {
        lambda: 0.0,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        mmfca_prob: 1.5,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
    assert!(Trainer::new(TrainConfig {
        lambda: -1.0,
        ..TrainConfig::default()
    })
    .is_err());
    for s in ["1a", "1b", "2"] {
        assert_eq!(s.parse::<Stage>().unwrap().to_string(), s);
    }
    assert!("3".parse::<Stage>().is_err());
    assert_eq!("diffusion".parse::<Variant>().unwrap(), Variant::Diffusion);
    assert!("mlp".parse::<Variant>().is_err());
    let c: TrainConfig = serde_json::from_str(r#"{"stage":"2","lambda":2.0}"#).unwrap();
    assert_eq!(c.stage, Stage::Joint);
    assert_eq!(c.lambda, 2.0);
    assert_eq!(c.mmfca_prob, 0.5);
}

#[test]
fn episode_generation_is_pure_in_seed() {
    let cfg = episode_config(&ModelConfig::micro());
    let a = generate_episodes(7, 3, &cfg).unwrap();
    let b = generate_episodes(7, 3, &cfg).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
}
