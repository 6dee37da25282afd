mod common;

use std::collections::HashSet;

use common::{nx, randomized, sample};
use navworld_model::dit::slot_roles;
use navworld_model::flow::{interpolate, velocity_target};
use navworld_model::model::FlowDraw;
use navworld_model::planner::segment_layout;
use navworld_model::rope::{axis_pairs, rope_table};
use navworld_model::*;
use navworld_numerics::{grad_check, Graph, Tensor};
use navworld_sim::Frame;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro() -> ModelConfig {
    ModelConfig::micro()
}

fn context_values(m: &NavModel, store: &navworld_numerics::ParamStore<f64>, s: &Sample) -> Vec<f64> {
    s.with_input(|inp| m.context_value(store, inp).unwrap().tokens.to_f64_vec())
}

// ---------------------------------------------------------------- planner

#[test]
fn context_layout_and_determinism() {
    let cfg = ModelConfig::small();
    let (m, store) = NavModel::build::<f64>(&cfg, 1).unwrap();
    let s = sample(&cfg, 3, 2);
    let a = s.with_input(|inp| m.context_value(&store, inp).unwrap());
    let b = s.with_input(|inp| m.context_value(&store, inp).unwrap());
    assert_eq!(a.tokens.shape(), &[cfg.context_len(), cfg.dim]);
    assert_eq!(a.tokens.data(), b.tokens.data());
    assert!(a.tokens.all_finite());
    assert_eq!(a.segments, segment_layout(&cfg));
    // Instruction padding is masked, everything else is visible.
    let n_words = s.tokens.len().min(cfg.max_instruction);
    assert_eq!(a.key_mask.iter().filter(|&&k| !k).count(), cfg.max_instruction - n_words);
    let tpf = cfg.tokens_per_frame();
    assert_eq!(a.segments[cfg.max_instruction], Segment::History(0));
    assert_eq!(
        a.segments[cfg.max_instruction + cfg.history * tpf],
        Segment::Current(View::Front)
    );
    assert_eq!(*a.segments.last().unwrap(), Segment::Current(View::Right));
}

#[test]
fn history_order_matters() {
    let cfg = ModelConfig::small();
    let (m, store) = NavModel::build::<f64>(&cfg, 1).unwrap();
    let mut s = sample(&cfg, 11, 8);
    assert_ne!(
        s.history[0].data, s.history[1].data,
        "pick a step with distinct history frames"
    );
    let before = context_values(&m, &store, &s);
    s.history.swap(0, 1);
    let after = context_values(&m, &store, &s);
    assert_ne!(before, after);
}

#[test]
fn instruction_swap_changes_instruction_tokens() {
    let cfg = ModelConfig::small();
    let (m, store) = NavModel::build::<f64>(&cfg, 2).unwrap();
    let mut s = sample(&cfg, 5, 0);
    let before = context_values(&m, &store, &s);
    let other = common::episode(&cfg, 6);
    assert_ne!(other.tokens, s.tokens);
    s.tokens = other.tokens.clone();
    let after = context_values(&m, &store, &s);
    let d = cfg.dim;
    let instr_changed = (0..cfg.max_instruction).any(|r| before[r * d..(r + 1) * d] != after[r * d..(r + 1) * d]);
    assert!(instr_changed);
}

#[test]
fn wrong_resolution_is_a_shape_error() {
    let cfg = micro();
    let (m, store) = NavModel::build::<f64>(&cfg, 0).unwrap();
    let mut s = sample(&cfg, 1, 0);
    s.current[1] = Frame {
        res: 16,
        data: vec![0.0; 16 * 16 * 3],
    };
    let err = s.with_input(|inp| m.context_value(&store, inp)).unwrap_err();
    assert!(matches!(err, ModelError::Shape(_)), "{err}");
}

#[test]
fn planner_gradients_match_finite_differences() {
    let cfg = micro();
    for seed in 0..3 {
        let (m, mut store) = randomized(&cfg, seed, 0.3);
        let s = sample(&cfg, seed, 1);
        let probe = Tensor::<f64>::randn(&[cfg.context_len(), cfg.dim], 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rep = grad_check(&mut store, 1e-5, Some(3), &mut rng, |g| {
            let c = nx(s.with_input(|inp| m.encode_context(g, inp)))?;
            let p = g.constant(probe.clone());
            let y = g.mul(c.tokens, p)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-4, "{rep:?}");
    }
}

// ---------------------------------------------------------------- codec

#[test]
fn codec_zero_frame_and_determinism() {
    let cfg = micro();
    let (m, store) = NavModel::build::<f64>(&cfg, 0).unwrap();
    let zero = Frame {
        res: cfg.resolution,
        data: vec![0.0; cfg.resolution * cfg.resolution * 3],
    };
    let z = m.codec.encode_frame(&store, &zero).unwrap();
    assert_eq!(z.len(), cfg.tokens_per_frame() * cfg.latent_channels);
    assert!(z.iter().all(|v| v.is_finite()));
    let f = m.codec.decode_frame(&store, &z).unwrap();
    assert!(f.data.iter().all(|v| v.is_finite()));
    let s = sample(&cfg, 2, 0);
    let a = m.codec.encode_frame(&store, &s.current[1]).unwrap();
    let b = m.codec.encode_frame(&store, &s.current[1]).unwrap();
    assert_eq!(a, b);
}

// ---------------------------------------------------------------- rope

/// Independent table builder: enumerates slot kinds in a fixed order and
/// writes coordinates by explicit per-kind formulas.
fn coordinate_oracle(history: usize, sides: bool, futures: usize, h: usize, w: usize) -> Vec<(String, [usize; 3])> {
    let mut rows = Vec::new();
    let i = history;
    for j in 0..history {
        for r in 0..h {
            for c in 0..w {
                rows.push((format!("history:{j}"), [j, r, c]));
            }
        }
    }
    let views: &[(&str, usize)] = if sides {
        &[("front", 0), ("right", 1), ("left", 2)]
    } else {
        &[("front", 0)]
    };
    for &(name, k) in views {
        for r in 0..h {
            for c in 0..w {
                rows.push((name.to_string(), [i, r, c + k * w]));
            }
        }
    }
    for mm in 1..=futures {
        for r in 0..h {
            for c in 0..w {
                rows.push((format!("future:{mm}"), [i + mm, r, c]));
            }
        }
    }
    rows
}

#[test]
fn rope_coords_match_oracle_exhaustively() {
    for history in 0..=3 {
        for width in [2, 4] {
            for futures in 0..=3 {
                for sides in [false, true] {
                    let oracle = coordinate_oracle(history, sides, futures, width, width);
                    let mut names: Vec<String> = Vec::new();
                    for (n, _) in &oracle {
                        if names.last() != Some(n) {
                            names.push(n.clone());
                        }
                    }
                    let roles: Vec<SlotRole> = names.iter().map(|n| n.parse().unwrap()).collect();
                    let got = assign_rope_coords(&roles, width, width).unwrap();
                    let want: Vec<RopeCoord> = oracle
                        .iter()
                        .map(|(_, [t, h, w])| RopeCoord { t: *t, h: *h, w: *w })
                        .collect();
                    assert_eq!(got, want, "history {history} W {width} futures {futures}");
                    let unique: HashSet<_> = got.iter().collect();
                    assert_eq!(unique.len(), got.len(), "coordinates are a bijection");
                }
            }
        }
    }
}

#[test]
fn rope_view_offsets() {
    let roles = [
        SlotRole::History(0),
        SlotRole::History(1),
        SlotRole::Front,
        SlotRole::Right,
        SlotRole::Left,
    ];
    let c = assign_rope_coords(&roles, 4, 4).unwrap();
    let at = |slot: usize, h: usize, w: usize| c[slot * 16 + h * 4 + w];
    assert_eq!(at(4, 1, 3), RopeCoord { t: 2, h: 1, w: 11 });
    assert_eq!(at(2, 0, 0), RopeCoord { t: 2, h: 0, w: 0 });
    assert_eq!(at(3, 2, 1), RopeCoord { t: 2, h: 2, w: 5 });
}

#[test]
fn rope_layout_errors() {
    assert!(matches!("side".parse::<SlotRole>(), Err(ModelError::UnknownRole(_))));
    assert!(matches!("future:0".parse::<SlotRole>(), Err(ModelError::UnknownRole(_))));
    assert!(matches!("history:x".parse::<SlotRole>(), Err(ModelError::UnknownRole(_))));
    assert!(assign_rope_coords(&[SlotRole::Left], 2, 2).is_err());
    assert!(assign_rope_coords(&[SlotRole::Front, SlotRole::Front], 2, 2).is_err());
    assert!(assign_rope_coords(&[SlotRole::Front, SlotRole::History(1)], 2, 2).is_err());
    assert!(axis_pairs(5).is_err());
    assert_eq!(axis_pairs(10).unwrap(), (3, 1, 1));
    assert!(axis_pairs(4).is_err());
    assert_eq!(axis_pairs(16).unwrap(), (4, 2, 2));
}

fn rotate(x: &[f64], coords: &[RopeCoord], head_dim: usize) -> Vec<f64> {
    let mut g = Graph::<f64>::detached();
    let v = g.constant(Tensor::new(&[coords.len(), head_dim], x.to_vec()).unwrap());
    let r = g.rope(v, 1, rope_table(coords, head_dim, 100.0).unwrap()).unwrap();
    g.data(r).to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rope_is_relative_and_isometric(seed in any::<u64>(), shift in (0usize..5, 0usize..5, 0usize..9)) {
        let hd = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<f64> = (0..hd).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..hd).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = RopeCoord { t: rng.gen_range(0..4), h: rng.gen_range(0..4), w: rng.gen_range(0..8) };
        let b = RopeCoord { t: rng.gen_range(0..4), h: rng.gen_range(0..4), w: rng.gen_range(0..8) };
        let dot = |a: RopeCoord, b: RopeCoord| -> f64 {
            let qa = rotate(&q, &[a], hd);
            let kb = rotate(&k, &[b], hd);
            qa.iter().zip(&kb).map(|(x, y)| x * y).sum()
        };
        let sh = |c: RopeCoord| RopeCoord { t: c.t + shift.0, h: c.h + shift.1, w: c.w + shift.2 };
        prop_assert!((dot(a, b) - dot(sh(a), sh(b))).abs() < 1e-9);
        let n0: f64 = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n1: f64 = rotate(&q, &[a], hd).iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n0 - n1).abs() < 1e-6);
    }
}

#[test]
fn rope_zero_coords_is_identity() {
    let x: Vec<f64> = (0..24).map(|i| i as f64 * 0.1 - 1.0).collect();
    let c = [RopeCoord { t: 0, h: 0, w: 0 }; 2];
    assert_eq!(rotate(&x, &c, 12), x);
}

// ---------------------------------------------------------------- generator

#[test]
fn generator_output_shape_and_context_sensitivity() {
    let cfg = micro();
    let (m, store) = randomized(&cfg, 4, 0.3);
    let s = sample(&cfg, 4, 1);
    let draw = FlowDraw::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
    let mut g = Graph::new(&store);
    let ctx = s.with_input(|inp| m.encode_context(&mut g, inp)).unwrap();
    let (input, target) = m.video_problem(&mut g, &s, &draw).unwrap();
    let v = m.dit.forward(&mut g, input, draw.t, &ctx).unwrap();
    assert_eq!(g.shape(v), target.shape());
    assert_eq!(g.shape(v), &[cfg.future_frames * cfg.tokens_per_frame(), cfg.latent_channels]);
    let zeros = g.constant(Tensor::zeros(&[ctx.len, ctx.dim]));
    let blank = ContextEmbedding {
        tokens: zeros,
        ..ctx.clone()
    };
    let v0 = m.dit.forward(&mut g, input, draw.t, &blank).unwrap();
    assert_ne!(g.data(v), g.data(v0));
}

#[test]
fn generator_gradients_match_finite_differences() {
    let cfg = micro();
    for seed in 0..3 {
        let (m, mut store) = randomized(&cfg, seed, 0.3);
        let s = sample(&cfg, seed + 10, 2);
        let draw = FlowDraw::new(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        store.set_trainable_where(|n| n.starts_with("dit."));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rep = grad_check(&mut store, 1e-5, Some(4), &mut rng, |g| {
            let ctx = nx(s.with_input(|inp| m.encode_context(g, inp)))?;
            nx(m.vg_loss(g, &ctx, &s, &draw))
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-4, "{rep:?}");
    }
}

#[test]
fn flow_interpolation_endpoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z: Vec<f64> = (0..50).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let e: Vec<f64> = (0..50).map(|_| rng.gen_range(-3.0..3.0)).collect();
    assert_eq!(interpolate(&z, &e, 0.0), z);
    assert_eq!(interpolate(&z, &e, 1.0), e);
    let v = velocity_target(&z, &e);
    assert!(v.iter().zip(z.iter().zip(&e)).all(|(v, (z, e))| *v == e - z));
}

#[test]
fn video_loss_is_deterministic_and_zero_for_a_perfect_predictor() {
    let cfg = micro();
    let (m, store) = randomized(&cfg, 5, 0.3);
    let s = sample(&cfg, 5, 0);
    let loss = |seed: u64| {
        let draw = FlowDraw::new(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut g = Graph::new(&store);
        let ctx = s.with_input(|inp| m.encode_context(&mut g, inp)).unwrap();
        let l = m.vg_loss(&mut g, &ctx, &s, &draw).unwrap();
        g.data(l)[0]
    };
    assert_eq!(loss(3).to_bits(), loss(3).to_bits());
    assert_ne!(loss(3), loss(4));

    let draw = FlowDraw::new(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
    let mut g = Graph::new(&store);
    let (_, target) = m.video_problem(&mut g, &s, &draw).unwrap();
    let perfect = g.constant(target.clone());
    let l = g.mse(perfect, &target).unwrap();
    assert_eq!(g.data(l)[0], 0.0);
}

#[test]
fn video_loss_ignores_conditioning_targets() {
    // The loss only sees future rows: padding the target with arbitrary
    // conditioning rows and scoring the future part reproduces it exactly.
    let cfg = micro();
    let (m, store) = randomized(&cfg, 6, 0.3);
    let s = sample(&cfg, 6, 0);
    let draw = FlowDraw::new(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
    let mut g = Graph::new(&store);
    let ctx = s.with_input(|inp| m.encode_context(&mut g, inp)).unwrap();
    let loss = m.vg_loss(&mut g, &ctx, &s, &draw).unwrap();
    let (input, target) = m.video_problem(&mut g, &s, &draw).unwrap();
    let v = m.dit.forward(&mut g, input, draw.t, &ctx).unwrap();
    let fut = m.dit.future_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..3 {
        let mut full: Vec<f64> = (0..fut.start * cfg.latent_channels)
            .map(|_| rng.gen_range(-5.0..5.0))
            .collect();
        full.extend(target.to_f64_vec());
        let tail = &full[fut.start * cfg.latent_channels..];
        let pred = g.data(v);
        let mse = pred.iter().zip(tail).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / tail.len() as f64;
        assert!((mse - g.data(loss)[0]).abs() < 1e-12);
    }
}

#[test]
fn fresh_generator_is_a_zero_predictor_and_matches_monte_carlo() {
    let cfg = micro();
    let (m, store) = NavModel::build::<f64>(&cfg, 7).unwrap();
    let s = sample(&cfg, 7, 0);
    let mut g = Graph::new(&store);
    let fut = m.latents(&mut g, &s.future_frames()).unwrap();
    let expected = 1.0 + fut.iter().map(|z| z * z).sum::<f64>() / fut.len() as f64;
    let ctx = s.with_input(|inp| m.context_value(&store, inp)).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 10_000;
    let mut losses = Vec::with_capacity(n);
    for i in 0..n {
        let draw = FlowDraw::new(&cfg, &mut rng);
        let mut g = Graph::new(&store);
        let c = ctx.bind(&mut g);
        let (input, target) = m.video_problem(&mut g, &s, &draw).unwrap();
        let v = m.dit.forward(&mut g, input, draw.t, &c).unwrap();
        if i == 0 {
            assert!(g.data(v).iter().all(|&x| x == 0.0));
        }
        let l = g.mse(v, &target).unwrap();
        losses.push(g.data(l)[0]);
    }
    let mean = losses.iter().sum::<f64>() / n as f64;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - expected).abs() <= 3.0 * se, "mean {mean} expected {expected} se {se}");
}

#[test]
fn one_step_sampler_closed_form() {
    let cfg = micro();
    let (m, store) = randomized(&cfg, 8, 0.3);
    let s = sample(&cfg, 8, 0);
    let ctx = s.with_input(|inp| m.context_value(&store, inp)).unwrap();
    let mut g = Graph::new(&store);
    let cond = m.latents(&mut g, &s.cond_frames()).unwrap();

    let z0 = m
        .sample_future(&store, &ctx, &cond, 1, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    let again = m
        .sample_future(&store, &ctx, &cond, 1, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    assert_eq!(z0, again);

    // Replay the sampler's draws: conditioning noise first, then ε.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps_cond = navworld_model::flow::gaussian(cond.len(), &mut rng);
    let eps = navworld_model::flow::gaussian(m.future_len(), &mut rng);
    let mut all = interpolate(&cond, &eps_cond, cfg.t_cond);
    all.extend_from_slice(&eps);
    let mut g = Graph::new(&store);
    let c = ctx.bind(&mut g);
    let x = g.constant(Tensor::new(&[all.len() / cfg.latent_channels, cfg.latent_channels], all).unwrap());
    let v = m.dit.forward(&mut g, x, 1.0, &c).unwrap();
    let want: Vec<f64> = eps.iter().zip(g.data(v)).map(|(e, v)| e - v).collect();
    assert_eq!(z0, want);

    let frames = m.decode_future(&store, &z0).unwrap();
    assert_eq!(frames.len(), cfg.future_frames);
}

#[test]
fn slot_roles_follow_generator_order() {
    let cfg = ModelConfig::small();
    let r = slot_roles(&cfg);
    assert_eq!(r.len(), cfg.history + 3 + cfg.future_frames);
    assert_eq!(r[cfg.history], SlotRole::Front);
    assert_eq!(r[cfg.history + 1], SlotRole::Right);
    assert_eq!(r[cfg.history + 2], SlotRole::Left);
    assert_eq!(*r.last().unwrap(), SlotRole::Future(cfg.future_frames));
}
