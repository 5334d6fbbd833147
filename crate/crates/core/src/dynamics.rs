//! Kinematic single-track (bicycle) model, forward-Euler discretized.
//!
//! The full model carries `(px, py, theta, v)` with inputs `(a, delta)`. The
//! reduced model fixes the speed and keeps only the pose, which is what the
//! reachability graph is built on.

use crate::geom::{normalize_angle, Point, Pose};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub px: f64,
    pub py: f64,
    pub theta: f64,
    pub v: f64,
}

impl State {
    pub fn new(px: f64, py: f64, theta: f64, v: f64) -> Self {
        Self { px, py, theta, v }
    }

    pub fn from_pose(pose: Pose, v: f64) -> Self {
        Self::new(pose.x, pose.y, pose.theta, v)
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.px, self.py, self.theta)
    }

    pub fn position(&self) -> Point {
        Point::new(self.px, self.py)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    /// Longitudinal acceleration (m/s^2).
    pub a: f64,
    /// Steering angle (rad).
    pub delta: f64,
}

impl Control {
    pub fn new(a: f64, delta: f64) -> Self {
        Self { a, delta }
    }

    pub fn steer(delta: f64) -> Self {
        Self { a: 0.0, delta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsParams {
    pub wheelbase: f64,
    pub dt: f64,
    pub a_max: f64,
    pub delta_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.33,
            dt: 0.2,
            a_max: 3.0,
            delta_max: 0.4,
            v_min: 0.0,
            v_max: 3.0,
        }
    }
}

impl DynamicsParams {
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.wheelbase > 0.0) {
            return Err(format!("wheelbase must be positive, got {}", self.wheelbase));
        }
        if !(self.dt > 0.0) {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        if self.v_min > self.v_max {
            return Err("v_min exceeds v_max".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// One forward-Euler step. Positions advance with the pre-step speed.
pub fn step(x: &State, u: &Control, p: &DynamicsParams) -> State {
    let (s, c) = x.theta.sin_cos();
    State {
        px: x.px + x.v * c * p.dt,
        py: x.py + x.v * s * p.dt,
        theta: normalize_angle(x.theta + x.v / p.wheelbase * u.delta.tan() * p.dt),
        v: (x.v + u.a * p.dt).clamp(p.v_min, p.v_max),
    }
}

/// Fixed-speed pose update: [`step`] with `v = speed`, `a = 0`, projected to the pose.
pub fn reduced_step(pose: &Pose, delta: f64, speed: f64, p: &DynamicsParams) -> Pose {
    let (s, c) = pose.theta.sin_cos();
    Pose {
        x: pose.x + speed * c * p.dt,
        y: pose.y + speed * s * p.dt,
        theta: normalize_angle(pose.theta + speed / p.wheelbase * delta.tan() * p.dt),
    }
}

pub fn rollout(x0: &State, controls: &[Control], p: &DynamicsParams) -> Trajectory {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    let mut x = *x0;
    for u in controls {
        x = step(&x, u, p);
        states.push(x);
    }
    Trajectory {
        states,
        controls: controls.to_vec(),
    }
}

pub fn clamp_control(u: &Control, p: &DynamicsParams) -> Control {
    Control {
        a: u.a.clamp(-p.a_max, p.a_max),
        delta: u.delta.clamp(-p.delta_max, p.delta_max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn straight_line_step() {
        let p = DynamicsParams::default();
        let x = step(&State::new(0.0, 0.0, 0.0, 2.5), &Control::new(0.0, 0.0), &p);
        assert_eq!(x, State::new(0.5, 0.0, 0.0, 2.5));
    }

    #[test]
    fn zero_velocity_is_stationary() {
        let p = DynamicsParams::default();
        let x0 = State::new(1.0, -2.0, 0.4, 0.0);
        assert_eq!(step(&x0, &Control::new(0.0, 0.35), &p), x0);
    }

    #[test]
    fn turning_step_matches_scalar_arithmetic() {
        let p = DynamicsParams {
            wheelbase: 0.33,
            dt: 0.2,
            ..DynamicsParams::default()
        };
        let x = step(&State::new(0.0, 0.0, 0.0, 2.5), &Control::new(0.0, 0.2), &p);
        let theta = 2.5 / 0.33 * 0.2f64.tan() * 0.2;
        assert!((x.theta - theta).abs() < 1e-15);
        assert!((x.px - 0.5).abs() < 1e-15);
        assert_eq!(x.py, 0.0);
        let x2 = step(&x, &Control::new(0.0, 0.2), &p);
        assert!((x2.px - (0.5 + 2.5 * theta.cos() * 0.2)).abs() < 1e-15);
        assert!((x2.py - 2.5 * theta.sin() * 0.2).abs() < 1e-15);
    }

    #[test]
    fn reduced_step_mirror_symmetry() {
        let p = DynamicsParams::default();
        let a = reduced_step(&Pose::new(0.0, 0.0, 0.0), 0.3, 2.5, &p);
        let b = reduced_step(&Pose::new(0.0, 0.0, 0.0), -0.3, 2.5, &p);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, -b.y);
        assert_eq!(a.theta, -b.theta);
        let c = reduced_step(&Pose::new(0.0, 0.0, 0.0), 0.0, 2.5, &p);
        assert_eq!(c, Pose::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn rollout_edge_cases() {
        let p = DynamicsParams::default();
        let x0 = State::new(0.0, 0.0, 0.3, 1.0);
        let t = rollout(&x0, &[], &p);
        assert_eq!(t.states, vec![x0]);
        let t = rollout(&x0, &[Control::default(); 5], &p);
        for w in t.states.windows(3) {
            let d1 = w[1].position().sub(w[0].position());
            let d2 = w[2].position().sub(w[1].position());
            assert!(d1.cross(d2).abs() < 1e-12);
        }
    }

    #[test]
    fn clamp_examples() {
        let p = DynamicsParams::default();
        assert_eq!(clamp_control(&Control::new(10.0, -10.0), &p), Control::new(3.0, -0.4));
        let u = Control::new(0.5, 0.1);
        assert_eq!(clamp_control(&u, &p), u);
    }

    fn arb_state() -> impl Strategy<Value = State> {
        (-10.0..10.0f64, -10.0..10.0f64, -PI..PI, 0.0..3.0f64).prop_map(|(x, y, t, v)| State::new(x, y, t, v))
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent(a in -20.0..20.0f64, d in -3.0..3.0f64) {
            let p = DynamicsParams::default();
            let once = clamp_control(&Control::new(a, d), &p);
            prop_assert_eq!(clamp_control(&once, &p), once);
        }

        #[test]
        fn step_keeps_invariants(x in arb_state(), a in -3.0..3.0f64, d in -0.4..0.4f64) {
            let p = DynamicsParams::default();
            let y = step(&x, &Control::new(a, d), &p);
            prop_assert!(y.v >= p.v_min && y.v <= p.v_max);
            prop_assert!(y.theta > -PI && y.theta <= PI);
        }

        #[test]
        fn reduced_equals_full_projection(x in arb_state(), d in -0.4..0.4f64, speed in 0.0..3.0f64) {
            let p = DynamicsParams::default();
            let full = step(&State::new(x.px, x.py, x.theta, speed), &Control::steer(d), &p);
            let red = reduced_step(&x.pose(), d, speed, &p);
            prop_assert_eq!(full.pose(), red);
        }

        #[test]
        fn rollout_is_repeated_step(x in arb_state(), us in proptest::collection::vec((-3.0..3.0f64, -0.4..0.4f64), 0..12)) {
            let p = DynamicsParams::default();
            let controls: Vec<Control> = us.iter().map(|(a, d)| Control::new(*a, *d)).collect();
            let traj = rollout(&x, &controls, &p);
            let mut cur = x;
            prop_assert_eq!(traj.states[0], x);
            for (i, u) in controls.iter().enumerate() {
                cur = step(&cur, u, &p);
                prop_assert_eq!(traj.states[i + 1], cur);
            }
        }
    }
}
