use std::f64::consts::{FRAC_PI_2, PI};

use navworld_geometry::*;
use proptest::prelude::*;

/// Rotation matrix of a unit quaternion, written out element by element.
fn rot_matrix(q: &Quat) -> [[f64; 3]; 3] {
    let Quat { w, x, y, z } = *q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Heading of the rotated +X axis projected on the ground plane.
fn matrix_heading(q: &Quat) -> f64 {
    let m = rot_matrix(q);
    wrap_angle(m[1][0].atan2(m[0][0]))
}

/// Homogeneous SE(2) matrix of a planar pose.
fn se2(x: f64, y: f64, yaw: f64) -> [[f64; 3]; 3] {
    [[yaw.cos(), -yaw.sin(), x], [yaw.sin(), yaw.cos(), y], [0.0, 0.0, 1.0]]
}

fn se2_inverse(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let (c, s) = (m[0][0], m[1][0]);
    let (x, y) = (m[0][2], m[1][2]);
    [[c, s, -(c * x + s * y)], [-s, c, s * x - c * y], [0.0, 0.0, 1.0]]
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut o = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                o[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    o
}

fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

#[test]
fn ninety_degree_yaw() {
    let q = Quat::from_yaw(FRAC_PI_2);
    let h = quat_to_heading(&q).unwrap();
    assert!((h - FRAC_PI_2).abs() < 1e-12);
    assert!((matrix_heading(&q) - h).abs() < 1e-12);
}

#[test]
fn straight_ahead_and_self() {
    let r = Pose::planar(2.0, -1.0, 0.7);
    let ahead = Pose::planar(2.0 + 0.7f64.cos(), -1.0 + 0.7f64.sin(), 0.7);
    let a = to_local_frame(
        &r,
        &[r, ahead],
        Some(&Arrival::new([2.0 + 0.5 * 0.7f64.cos(), -1.0 + 0.5 * 0.7f64.sin()])),
    );
    assert!(a[0].x.abs() < 1e-12 && a[0].y.abs() < 1e-12 && a[0].theta.abs() < 1e-12);
    assert!(a[0].arrive);
    assert!((a[1].x - 1.0).abs() < 1e-12 && a[1].y.abs() < 1e-12 && a[1].theta.abs() < 1e-12);
    assert!(a[1].arrive);
    let far = to_local_frame(&r, &[ahead], Some(&Arrival::new([10.0, 10.0])));
    assert!(!far[0].arrive);
}

#[test]
fn zero_step_and_pure_turn() {
    let p = Pose::planar(1.0, 3.0, -2.0);
    let z = ActionStep {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
        arrive: false,
    };
    let q = apply_action(&p, &z);
    assert_eq!(q.position, p.position);
    assert!(angle_diff(q.heading(), p.heading()) < 1e-12);
    let t = apply_action(&p, &ActionStep { theta: FRAC_PI_2, ..z });
    assert_eq!(t.position, p.position);
    assert!(angle_diff(t.heading(), -2.0 + FRAC_PI_2) < 1e-12);
}

#[test]
fn pitch_and_roll_are_discarded() {
    let pitch = Quat::new((0.2f64).cos(), 0.0, (0.2f64).sin(), 0.0);
    let q = Quat::from_yaw(1.1).mul(&pitch);
    assert!((quat_to_heading(&q).unwrap() - 1.1).abs() < 1e-12);
}

fn yaw() -> impl Strategy<Value = f64> {
    -PI..PI
}

fn coord() -> impl Strategy<Value = f64> {
    -20.0..20.0f64
}

proptest! {
    #[test]
    fn heading_of_composition(a in yaw(), b in yaw()) {
        let q = Quat::from_yaw(a).mul(&Quat::from_yaw(b));
        let h = quat_to_heading(&q).unwrap();
        prop_assert!(angle_diff(h, wrap_angle(a + b)) < 1e-9);
        prop_assert!((h - matrix_heading(&q)).abs() < 1e-9);
        prop_assert!(h > -PI && h <= PI);
    }

    #[test]
    fn local_frame_matches_se2(rx in coord(), ry in coord(), ryaw in yaw(), tx in coord(), ty in coord(), tyaw in yaw()) {
        let r = Pose::planar(rx, ry, ryaw);
        let t = Pose::planar(tx, ty, tyaw);
        let a = to_local_frame(&r, &[t], None)[0];
        let rel = mat_mul(&se2_inverse(&se2(rx, ry, ryaw)), &se2(tx, ty, tyaw));
        prop_assert!((a.x - rel[0][2]).abs() < 1e-9);
        prop_assert!((a.y - rel[1][2]).abs() < 1e-9);
        prop_assert!(angle_diff(a.theta, rel[1][0].atan2(rel[0][0])) < 1e-9);
        prop_assert!(a.theta > -PI && a.theta <= PI);
    }

    #[test]
    fn apply_inverts_local_frame(rx in coord(), ry in coord(), rz in -2.0..2.0f64, ryaw in yaw(), tx in coord(), ty in coord(), tyaw in yaw()) {
        let r = Pose::new([rx, ry, rz], Quat::from_yaw(ryaw)).unwrap();
        let t = Pose::planar(tx, ty, tyaw);
        let step = to_local_frame(&r, &[t], None)[0];
        let back = apply_action(&r, &step);
        prop_assert!((back.position[0] - tx).abs() < 1e-9);
        prop_assert!((back.position[1] - ty).abs() < 1e-9);
        prop_assert!(angle_diff(back.heading(), tyaw) < 1e-9);
    }

    #[test]
    fn encode_decode_round_trip(x in coord(), y in coord(), theta in yaw(), arrive in any::<bool>()) {
        let a = ActionStep { x, y, theta: wrap_angle(theta), arrive };
        let e = encode_action(&a);
        prop_assert!((e.cos_theta.powi(2) + e.sin_theta.powi(2) - 1.0).abs() < 1e-6);
        let d = decode_action(&e).unwrap();
        prop_assert!((d.x - x).abs() < 1e-9 && (d.y - y).abs() < 1e-9);
        prop_assert!(angle_diff(d.theta, a.theta) < 1e-9);
        prop_assert_eq!(d.arrive, arrive);
    }
}

#[test]
fn thousand_round_trips() {
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let u = (i as f64 * 0.618_033_988_75).fract();
        let a = ActionStep {
            x: (i as f64).sin() * 5.0,
            y: (i as f64 * 1.3).cos() * 5.0,
            theta: wrap_angle(2.0 * PI * u - PI),
            arrive: i % 3 == 0,
        };
        let d = decode_action(&encode_action(&a)).unwrap();
        worst = worst
            .max((d.x - a.x).abs())
            .max((d.y - a.y).abs())
            .max(angle_diff(d.theta, a.theta));
    }
    assert!(worst < 1e-9, "{worst}");
}
