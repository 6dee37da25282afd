//! Pose algebra on the ground plane.
//!
//! Conventions: +Z is up, heading 0 points along +X, and positive angles turn
//! counter-clockwise. Headings are wrapped to `(-π, π]`, so `-π` is reported
//! as `+π`. Local frames put `x` forward and `y` to the agent's left.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("quaternion norm {norm} is not within 1e-3 of 1")]
    NonUnitQuaternion { norm: f64 },
    #[error("cannot decode a heading from (cos, sin) = ({cos}, {sin})")]
    DegenerateHeading { cos: f64, sin: f64 },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Default distance under which a pose counts as having reached the goal.
pub const DEFAULT_ARRIVAL_THRESHOLD: f64 = 1.0;

const UNIT_TOL: f64 = 1e-3;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation by `yaw` about +Z.
    pub fn from_yaw(yaw: f64) -> Self {
        let h = 0.5 * yaw;
        Self::new(h.cos(), 0.0, 0.0, h.sin())
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Hamilton product `self * rhs` (apply `rhs` first).
    pub fn mul(&self, r: &Quat) -> Quat {
        let (a, b) = (self, r);
        Quat {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    fn check_unit(&self) -> Result<()> {
        let n = self.norm();
        if (n - 1.0).abs() > UNIT_TOL || !n.is_finite() {
            return Err(GeometryError::NonUnitQuaternion { norm: n });
        }
        Ok(())
    }
}

/// Heading about +Z in `(-π, π]`. Pitch and roll are discarded.
pub fn quat_to_heading(q: &Quat) -> Result<f64> {
    q.check_unit()?;
    let Quat { w, x, y, z } = *q;
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    Ok(wrap_angle(yaw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub rotation: Quat,
}

impl Pose {
    /// Validates the quaternion (within 1e-3 of unit) and renormalizes it.
    pub fn new(position: [f64; 3], rotation: Quat) -> Result<Self> {
        rotation.check_unit()?;
        let n = rotation.norm();
        let rotation = Quat::new(rotation.w / n, rotation.x / n, rotation.y / n, rotation.z / n);
        Ok(Self { position, rotation })
    }

    /// Ground-plane pose at height 0.
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            position: [x, y, 0.0],
            rotation: Quat::from_yaw(wrap_angle(yaw)),
        }
    }

    pub fn heading(&self) -> f64 {
        quat_to_heading(&self.rotation).expect("pose quaternions are unit by construction")
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.position[0], self.position[1]]
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        (self.position[0] - p[0]).hypot(self.position[1] - p[1])
    }
}

/// One waypoint relative to a reference pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionStep {
    /// Forward displacement.
    pub x: f64,
    /// Lateral displacement, positive to the left.
    pub y: f64,
    /// Heading change in `(-π, π]`.
    pub theta: f64,
    pub arrive: bool,
}

/// Network-facing encoding `(x, y, cos θ, sin θ, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionEncoding {
    pub x: f64,
    pub y: f64,
    pub cos_theta: f64,
    pub sin_theta: f64,
    /// `0`/`1` for ground truth; a logit for predictions.
    pub arrive: f64,
}

impl ActionEncoding {
    pub const WIDTH: usize = 5;

    pub fn to_array(&self) -> [f64; 5] {
        [self.x, self.y, self.cos_theta, self.sin_theta, self.arrive]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            x: v[0],
            y: v[1],
            cos_theta: v[2],
            sin_theta: v[3],
            arrive: v[4],
        }
    }
}

/// Goal used to label waypoints with the arrival flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub goal: [f64; 2],
    pub threshold: f64,
}

impl Arrival {
    pub fn new(goal: [f64; 2]) -> Self {
        Self {
            goal,
            threshold: DEFAULT_ARRIVAL_THRESHOLD,
        }
    }

    pub fn reached(&self, p: &Pose) -> bool {
        p.distance_to(self.goal) <= self.threshold
    }
}

/// Expresses each target as a ground-plane displacement and heading change in
/// the frame of `reference`. Arrival flags come from `arrival` (all false if none).
pub fn to_local_frame(reference: &Pose, targets: &[Pose], arrival: Option<&Arrival>) -> Vec<ActionStep> {
    let psi = reference.heading();
    let (c, s) = (psi.cos(), psi.sin());
    targets
        .iter()
        .map(|t| {
            let dx = t.position[0] - reference.position[0];
            let dy = t.position[1] - reference.position[1];
            ActionStep {
                x: c * dx + s * dy,
                y: -s * dx + c * dy,
                theta: wrap_angle(t.heading() - psi),
                arrive: arrival.is_some_and(|a| a.reached(t)),
            }
        })
        .collect()
}

pub fn encode_action(a: &ActionStep) -> ActionEncoding {
    ActionEncoding {
        x: a.x,
        y: a.y,
        cos_theta: a.theta.cos(),
        sin_theta: a.theta.sin(),
        arrive: if a.arrive { 1.0 } else { 0.0 },
    }
}

/// Inverse of [`encode_action`]; the arrival channel is thresholded at 0.
pub fn decode_action(e: &ActionEncoding) -> Result<ActionStep> {
    if e.cos_theta.abs() <= 1e-9 && e.sin_theta.abs() <= 1e-9 {
        return Err(GeometryError::DegenerateHeading {
            cos: e.cos_theta,
            sin: e.sin_theta,
        });
    }
    Ok(ActionStep {
        x: e.x,
        y: e.y,
        theta: wrap_angle(e.sin_theta.atan2(e.cos_theta)),
        arrive: e.arrive > 0.0,
    })
}

/// Moves by the local displacement, then turns by `theta`. Pitch and roll are
/// dropped and the height is kept.
pub fn apply_action(current: &Pose, step: &ActionStep) -> Pose {
    let psi = current.heading();
    let (c, s) = (psi.cos(), psi.sin());
    Pose {
        position: [
            current.position[0] + c * step.x - s * step.y,
            current.position[1] + s * step.x + c * step.y,
            current.position[2],
        ],
        rotation: Quat::from_yaw(wrap_angle(psi + step.theta)),
    }
}
