use navworld_geometry::{to_local_frame, ActionStep, Arrival, Pose, DEFAULT_ARRIVAL_THRESHOLD};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::map::{MapConfig, WorldMap};
use crate::nav::{self, Action, DistanceField, Motion, PathResult};
use crate::render::{render, Observation, RenderConfig};
use crate::tokenizer::Tokenizer;
use crate::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub map: MapConfig,
    pub render: RenderConfig,
    pub motion: Motion,
    pub arrival_threshold: f64,
    /// Allowed geodesic distance between start and goal.
    pub min_geodesic: f64,
    pub max_geodesic: f64,
    /// Past front frames available to the models.
    pub history: usize,
    pub max_expert_steps: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            map: MapConfig::default(),
            render: RenderConfig::default(),
            motion: Motion::default(),
            arrival_threshold: DEFAULT_ARRIVAL_THRESHOLD,
            min_geodesic: 2.0,
            max_geodesic: 6.0,
            history: 4,
            max_expert_steps: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub seed: u64,
    pub instruction: String,
    pub tokens: Vec<u32>,
    pub map: WorldMap,
    pub target: u8,
    pub goal_cell: (usize, usize),
    pub goal: [f64; 2],
    pub start: Pose,
    /// `actions.len() + 1` poses; pose `i + 1` results from action `i`.
    pub poses: Vec<Pose>,
    pub actions: Vec<Action>,
    /// Pose `i + 1` in the frame of pose `i`, with the arrival flag.
    pub steps: Vec<ActionStep>,
    pub path_length: f64,
    /// Shortest-path length from the start to the goal.
    pub geodesic: f64,
    pub arrival_threshold: f64,
    pub render: RenderConfig,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn arrival(&self) -> Arrival {
        Arrival {
            goal: self.goal,
            threshold: self.arrival_threshold,
        }
    }

    pub fn observation(&self, i: usize) -> Result<Observation> {
        render(&self.map, &self.poses[i], &self.render)
    }

    pub fn observations(&self) -> Result<Vec<Observation>> {
        (0..self.poses.len()).map(|i| self.observation(i)).collect()
    }

    /// The next `horizon` poses after step `i` in the frame of pose `i`. Past the
    /// end of the episode the final pose repeats.
    pub fn waypoints(&self, i: usize, horizon: usize) -> Vec<ActionStep> {
        let last = self.poses.len() - 1;
        let targets: Vec<Pose> = (1..=horizon).map(|m| self.poses[(i + m).min(last)]).collect();
        to_local_frame(&self.poses[i.min(last)], &targets, Some(&self.arrival()))
    }

    pub fn distance_field(&self) -> DistanceField {
        DistanceField::new(&self.map, self.goal_cell)
    }
}

/// Pure-pursuit expert along the cell-centre shortest path: turn while the
/// bearing error exceeds half a turn increment, otherwise move forward.
fn run_expert(
    map: &WorldMap,
    start: Pose,
    cells: &[(usize, usize)],
    motion: &Motion,
    max_steps: usize,
) -> Option<(Vec<Pose>, Vec<Action>)> {
    let waypoints: Vec<[f64; 2]> = cells.iter().skip(1).map(|&c| map.cell_center(c)).collect();
    let reach = 0.5 * motion.forward + 0.06;
    let mut pose = start;
    let mut poses = vec![start];
    let mut actions = Vec::new();
    let mut w = 0;
    while actions.len() < max_steps {
        while w < waypoints.len() && pose.distance_to(waypoints[w]) <= reach {
            w += 1;
        }
        let action = if w == waypoints.len() {
            Action::Stop
        } else {
            let t = waypoints[w];
            let bearing = (t[1] - pose.position[1]).atan2(t[0] - pose.position[0]);
            let err = navworld_geometry::wrap_angle(bearing - pose.heading());
            if err > 0.5 * motion.turn + 1e-9 {
                Action::TurnLeft
            } else if err < -0.5 * motion.turn - 1e-9 {
                Action::TurnRight
            } else {
                Action::Forward
            }
        };
        let (next, collided) = nav::step(map, &pose, action, motion);
        if collided {
            return None;
        }
        actions.push(action);
        poses.push(next);
        pose = next;
        if action == Action::Stop {
            return Some((poses, actions));
        }
    }
    None
}

fn instruction<R: Rng>(rng: &mut R, target: &str, actions: &[Action]) -> String {
    let first_turn = actions.iter().find(|a| **a != Action::Forward);
    let relative = rng.gen_bool(0.5);
    let template = match first_turn {
        Some(Action::TurnLeft) if relative => "turn left then go to the",
        Some(Action::TurnRight) if relative => "turn right then go to the",
        _ => {
            if rng.gen_bool(0.5) {
                "go to the"
            } else {
                "find the"
            }
        }
    };
    format!("{template} {target}")
}

/// Builds a random connected map, samples a landmark goal and a start at an
/// admissible geodesic distance, and runs the expert. Pure in `seed`.
pub fn generate_episode(seed: u64, cfg: &EpisodeConfig) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokenizer = Tokenizer::default();
    for _ in 0..32 {
        let map = WorldMap::generate(&cfg.map, &mut rng)?;
        let mut order: Vec<usize> = (0..map.landmarks.len()).collect();
        order.shuffle(&mut rng);
        for li in order {
            let lm = map.landmarks[li].clone();
            let goals = map.free_neighbours4(lm.cell);
            let Some(&goal_cell) = goals.choose(&mut rng) else {
                continue;
            };
            let field = DistanceField::new(&map, goal_cell);
            let starts: Vec<(usize, usize)> = map
                .free_cells()
                .into_iter()
                .filter(|&c| {
                    let d = field.cell(c);
                    d >= cfg.min_geodesic && d <= cfg.max_geodesic
                })
                .collect();
            let Some(&start_cell) = starts.choose(&mut rng) else {
                continue;
            };
            let turns = (2.0 * std::f64::consts::PI / cfg.motion.turn).round() as i64;
            let yaw = rng.gen_range(0..turns.max(1)) as f64 * cfg.motion.turn;
            let c = map.cell_center(start_cell);
            let start = Pose::planar(c[0], c[1], yaw);
            let PathResult::Found { length, cells } = nav::shortest_path(&map, start_cell, goal_cell) else {
                continue;
            };
            let Some((poses, actions)) = run_expert(&map, start, &cells, &cfg.motion, cfg.max_expert_steps) else {
                continue;
            };
            let arrival = Arrival {
                goal: map.cell_center(goal_cell),
                threshold: cfg.arrival_threshold,
            };
            let steps: Vec<ActionStep> = poses
                .windows(2)
                .map(|w| to_local_frame(&w[0], &[w[1]], Some(&arrival))[0])
                .collect();
            let path_length = steps.iter().map(|s| s.x.hypot(s.y)).sum();
            let text = instruction(&mut rng, &lm.describe(), &actions);
            return Ok(Episode {
                seed,
                tokens: tokenizer.encode(&text),
                instruction: text,
                target: lm.id,
                goal_cell,
                goal: arrival.goal,
                start,
                poses,
                actions,
                steps,
                path_length,
                geodesic: length,
                arrival_threshold: cfg.arrival_threshold,
                render: cfg.render,
                map,
            });
        }
    }
    Err(SimError::NoReachableLandmark { seed })
}
