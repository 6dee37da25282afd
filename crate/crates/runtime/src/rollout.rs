//! Receding-horizon rollouts: plan `N` waypoints, execute the first one as a
//! discrete simulator action, observe, replan.

use std::time::Instant;

use navworld_geometry::{to_local_frame, wrap_angle, ActionStep, Pose};
use navworld_model::{NavModel, Sample};
use navworld_numerics::{Graph, ParamStore, Scalar};
use navworld_sim::{render, step as sim_step, Action, Episode, Frame, Motion, Observation};
use navworld_train::Variant;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::check_episode;
use crate::sfs::SfsSchedule;
use crate::{Result, RuntimeError};

/// Heading change above which the first waypoint becomes a turn.
pub const TURN_THRESHOLD: f64 = 7.5 * std::f64::consts::PI / 180.0;
/// Displacement above which the first waypoint becomes a forward move.
pub const FORWARD_THRESHOLD: f64 = 0.125;
pub const ARRIVE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The agent chose to stop.
    AgentStop,
    StepCap,
    CollisionCap,
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub variant: Variant,
    pub schedule: SfsSchedule,
    /// Whether the diffusion variant may call the video generator at all.
    pub generator: bool,
    pub step_cap: usize,
    pub collision_cap: usize,
    /// Euler steps per sampling call; defaults to the model's setting.
    pub sample_steps: Option<usize>,
    /// Actions executed per planning call (1 = receding horizon).
    pub execute_steps: usize,
    pub seed: u64,
    /// Keep observed and predicted frames for dumping.
    pub record_frames: bool,
}

impl RolloutConfig {
    pub fn new(variant: Variant, schedule: SfsSchedule) -> Self {
        Self {
            variant,
            schedule,
            generator: true,
            step_cap: 100,
            collision_cap: 20,
            sample_steps: None,
            execute_steps: 1,
            seed: 0,
            record_frames: false,
        }
    }
}

/// A decoded waypoint in the frame of the planning pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub arrive_prob: f64,
}

impl Waypoint {
    /// Decodes one `(x, y, cos θ, sin θ, arrive)` row. The arrive channel is a
    /// logit for the former and a ±1 value for the diffusion policy.
    pub fn from_row(row: &[f64], variant: Variant) -> Self {
        let theta = if row[2] == 0.0 && row[3] == 0.0 {
            0.0
        } else {
            wrap_angle(row[3].atan2(row[2]))
        };
        let arrive_prob = match variant {
            Variant::Former => 1.0 / (1.0 + (-row[4]).exp()),
            Variant::Diffusion => (0.5 * (row[4] + 1.0)).clamp(0.0, 1.0),
        };
        Self {
            x: row[0],
            y: row[1],
            theta,
            arrive_prob,
        }
    }

    pub fn step(&self) -> ActionStep {
        ActionStep {
            x: self.x,
            y: self.y,
            theta: self.theta,
            arrive: self.arrive_prob > ARRIVE_THRESHOLD,
        }
    }
}

/// Discrete action for one waypoint: turn if `|θ| > 7.5°`, else forward if
/// the displacement exceeds 0.125, else stop if arrival is predicted.
pub fn quantize(w: &Waypoint) -> Option<Action> {
    if w.theta > TURN_THRESHOLD {
        Some(Action::TurnLeft)
    } else if w.theta < -TURN_THRESHOLD {
        Some(Action::TurnRight)
    } else if w.x.hypot(w.y) > FORWARD_THRESHOLD {
        Some(Action::Forward)
    } else if w.arrive_prob > ARRIVE_THRESHOLD {
        Some(Action::Stop)
    } else {
        None
    }
}

/// The first waypoint's action; when it is a no-op, the first later waypoint
/// that quantizes decides. A sequence with no decisive waypoint stops.
pub fn choose_action(seq: &[Waypoint]) -> Action {
    seq.iter().find_map(quantize).unwrap_or(Action::Stop)
}

/// Actions for multi-step execution: the first from [`choose_action`], then
/// each later waypoint relative to its predecessor, up to the first no-op.
fn planned_actions(seq: &[Waypoint], count: usize) -> Vec<Action> {
    let mut out = vec![choose_action(seq)];
    if out[0] == Action::Stop {
        return out;
    }
    for w in seq.windows(2).take(count.saturating_sub(1)) {
        let from = Pose::planar(w[0].x, w[0].y, w[0].theta);
        let to = Pose::planar(w[1].x, w[1].y, w[1].theta);
        let d = to_local_frame(&from, &[to], None)[0];
        let rel = Waypoint {
            x: d.x,
            y: d.y,
            theta: d.theta,
            arrive_prob: w[1].arrive_prob,
        };
        match quantize(&rel) {
            Some(a) if a != Action::Stop => out.push(a),
            _ => break,
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    /// Executed action index.
    pub step: usize,
    /// Planning call that produced this action.
    pub decision: usize,
    pub pose: Pose,
    pub action: Action,
    pub arrive_prob: f64,
    pub collided: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub decision: usize,
    /// Executed step at which the plan was made.
    pub step: usize,
    pub generator: bool,
    pub plan: Vec<Waypoint>,
    pub wall_s: f64,
    pub generator_s: f64,
    pub policy_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutResult {
    pub episode_seed: u64,
    /// Start pose followed by the pose after every executed action.
    pub poses: Vec<Pose>,
    pub steps: Vec<StepRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub stop: StopReason,
    pub collisions: usize,
    pub generator_calls: usize,
    pub wall_s: f64,
    /// Front view after each pose, when recorded.
    #[serde(skip)]
    pub observed: Vec<Frame>,
    /// Decoded future frames per generator-active executed step, when recorded.
    #[serde(skip)]
    pub predicted: Vec<(usize, Vec<Frame>)>,
}

impl RolloutResult {
    pub fn path_length(&self) -> f64 {
        self.poses.windows(2).map(|w| w[0].distance_to(w[1].xy())).sum()
    }

    pub fn final_pose(&self) -> Pose {
        *self.poses.last().expect("a rollout has a start pose")
    }

    pub fn agent_stopped(&self) -> bool {
        self.stop == StopReason::AgentStop
    }

    /// The result with timing fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_s = 0.0;
        for d in &mut r.decisions {
            d.wall_s = 0.0;
            d.generator_s = 0.0;
            d.policy_s = 0.0;
        }
        r
    }
}

/// Per-episode stream so results do not depend on evaluation order.
fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ episode.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

struct Plan {
    rows: Vec<f64>,
    future: Option<Vec<f64>>,
    generator_s: f64,
    policy_s: f64,
}

fn plan<T: Scalar>(
    model: &NavModel,
    store: &ParamStore<T>,
    sample: &Sample,
    cfg: &RolloutConfig,
    with_generator: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Plan> {
    let steps = cfg.sample_steps.unwrap_or(model.cfg.sample_steps);
    let t0 = Instant::now();
    let ctx = sample.with_input(|i| model.context_value(store, i))?;
    let planner_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    Ok(match cfg.variant {
        Variant::Former => Plan {
            rows: model.former_actions(store, &ctx)?,
            future: None,
            generator_s: 0.0,
            policy_s: planner_s + t1.elapsed().as_secs_f64(),
        },
        Variant::Diffusion if with_generator => {
            let cond = {
                let mut g = Graph::new(store);
                model.latents(&mut g, &sample.cond_frames())?
            };
            let out = model.sample_joint(store, &ctx, &cond, steps, rng)?;
            Plan {
                rows: out.actions,
                future: Some(out.future),
                generator_s: t1.elapsed().as_secs_f64(),
                policy_s: planner_s,
            }
        }
        Variant::Diffusion => Plan {
            rows: model.sample_actions(store, &ctx, steps, rng)?,
            future: None,
            generator_s: 0.0,
            policy_s: planner_s + t1.elapsed().as_secs_f64(),
        },
    })
}

fn observe(ep: &Episode, pose: &Pose) -> Result<Observation> {
    Ok(render(&ep.map, pose, &ep.render)?)
}

/// Runs one closed-loop episode from its start pose.
pub fn rollout<T: Scalar>(model: &NavModel, store: &ParamStore<T>, ep: &Episode, cfg: &RolloutConfig) -> Result<RolloutResult> {
    check_episode(model, ep)?;
    if cfg.execute_steps == 0 {
        return Err(RuntimeError::InvalidArgument("execute_steps must be at least 1".into()));
    }
    let started = Instant::now();
    let mut rng = episode_rng(cfg.seed, ep.seed);
    let motion = Motion::default();
    let k = model.cfg.history;
    let mut pose = ep.start;
    let mut obs = observe(ep, &pose)?;
    let mut fronts = vec![obs.front.clone()];
    let mut poses = vec![pose];
    let mut steps = Vec::new();
    let mut decisions = Vec::new();
    let mut predicted = Vec::new();
    let mut collisions = 0;
    let mut generator_calls = 0;
    let stop = 'episode: loop {
        let decision = decisions.len();
        let i = steps.len();
        let sample = Sample {
            tokens: ep.tokens.clone(),
            history: (0..k).map(|m| fronts[(i + m).saturating_sub(k)].clone()).collect(),
            current: [obs.left.clone(), obs.front.clone(), obs.right.clone()],
            future: Vec::new(),
            actions: Vec::new(),
        };
        let with_generator = cfg.variant == Variant::Diffusion && cfg.generator && cfg.schedule.is_active(decision);
        let t = Instant::now();
        let p = plan(model, store, &sample, cfg, with_generator, &mut rng)?;
        if with_generator {
            generator_calls += 1;
        }
        let seq: Vec<Waypoint> = p
            .rows
            .chunks(5)
            .take(cfg.schedule.horizon)
            .map(|r| Waypoint::from_row(r, cfg.variant))
            .collect();
        if let (Some(future), true) = (&p.future, cfg.record_frames) {
            predicted.push((i, model.decode_future(store, future)?));
        }
        decisions.push(DecisionRecord {
            decision,
            step: i,
            generator: with_generator,
            plan: seq.clone(),
            wall_s: t.elapsed().as_secs_f64(),
            generator_s: p.generator_s,
            policy_s: p.policy_s,
        });
        for action in planned_actions(&seq, cfg.execute_steps) {
            let (next, collided) = sim_step(&ep.map, &pose, action, &motion);
            steps.push(StepRecord {
                step: steps.len(),
                decision,
                pose,
                action,
                arrive_prob: seq.first().map_or(0.0, |w| w.arrive_prob),
                collided,
            });
            if action == Action::Stop {
                break 'episode StopReason::AgentStop;
            }
            collisions += usize::from(collided);
            pose = next;
            poses.push(pose);
            obs = observe(ep, &pose)?;
            fronts.push(obs.front.clone());
            if collisions >= cfg.collision_cap {
                break 'episode StopReason::CollisionCap;
            }
            if steps.len() >= cfg.step_cap {
                break 'episode StopReason::StepCap;
            }
        }
    };
    Ok(RolloutResult {
        episode_seed: ep.seed,
        poses,
        steps,
        decisions,
        stop,
        collisions,
        generator_calls,
        wall_s: started.elapsed().as_secs_f64(),
        observed: if cfg.record_frames { fronts } else { Vec::new() },
        predicted,
    })
}

/// Uniformly random actions under the same caps.
pub fn random_rollout(ep: &Episode, cfg: &RolloutConfig) -> Result<RolloutResult> {
    let started = Instant::now();
    let mut rng = episode_rng(cfg.seed, ep.seed);
    let motion = Motion::default();
    let mut pose = ep.start;
    let mut poses = vec![pose];
    let mut steps = Vec::new();
    let mut collisions = 0;
    let stop = loop {
        let action = Action::ALL[rng.gen_range(0..Action::ALL.len())];
        let (next, collided) = sim_step(&ep.map, &pose, action, &motion);
        steps.push(StepRecord {
            step: steps.len(),
            decision: steps.len(),
            pose,
            action,
            arrive_prob: 0.0,
            collided,
        });
        if action == Action::Stop {
            break StopReason::AgentStop;
        }
        collisions += usize::from(collided);
        pose = next;
        poses.push(pose);
        if collisions >= cfg.collision_cap {
            break StopReason::CollisionCap;
        }
        if steps.len() >= cfg.step_cap {
            break StopReason::StepCap;
        }
    };
    Ok(RolloutResult {
        episode_seed: ep.seed,
        poses,
        steps,
        decisions: Vec::new(),
        stop,
        collisions,
        generator_calls: 0,
        wall_s: started.elapsed().as_secs_f64(),
        observed: Vec::new(),
        predicted: Vec::new(),
    })
}
