//! Torque-limited pendulum swing-up.
//!
//! Angle is measured from upright; the episode starts hanging. The torque
//! limit is too weak for a direct lift, so the task needs energy pumping.

use std::f64::consts::PI;

use super::{check_action, Env, EnvSpec};
use crate::error::Result;
use crate::rng::SeededRng;

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 1.3;
/// Viscous damping: random torque dithering dissipates instead of pumping,
/// so reaching the top needs swing-synchronized drive.
const DAMPING: f64 = 0.5;
/// Reset draws: angle within `PI +- START_ANGLE_SPREAD`, velocity within
/// `+- START_SPEED_SPREAD`.
pub const START_ANGLE_SPREAD: f64 = 0.1;
pub const START_SPEED_SPREAD: f64 = 0.1;

pub struct PendulumSwingup {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    t: usize,
}

fn wrap_angle(x: f64) -> f64 {
    let mut a = (x + PI) % (2.0 * PI);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    a - PI
}

impl PendulumSwingup {
    pub fn new(horizon: usize) -> Self {
        PendulumSwingup {
            spec: EnvSpec {
                name: "pendulum-swingup",
                state_dim: 3,
                action_dim: 1,
                horizon,
                reward_range: (0.0, 1.0),
            },
            theta: PI,
            theta_dot: 0.0,
            t: 0,
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    /// Shaped into `[0, 1]`: 1 exactly at upright rest, 0 at hanging. The
    /// strong velocity penalty keeps the reward near zero during energetic
    /// swings, so credit concentrates on balanced time at the top.
    pub fn reward(theta: f64, theta_dot: f64) -> f64 {
        0.5 * (1.0 + theta.cos()) / (1.0 + 0.5 * theta_dot * theta_dot)
    }
}

impl Env for PendulumSwingup {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut SeededRng) -> Vec<f64> {
        self.theta = wrap_angle(PI + rng.uniform_in(-START_ANGLE_SPREAD, START_ANGLE_SPREAD));
        self.theta_dot = rng.uniform_in(-START_SPEED_SPREAD, START_SPEED_SPREAD);
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_action(action, 1, self.t, self.spec.horizon)?;
        let torque = action[0].clamp(-1.0, 1.0) * MAX_TORQUE;
        // Semi-implicit Euler: velocity first, then position with the new
        // velocity.
        let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * self.theta.sin()
            + 3.0 / (MASS * LENGTH * LENGTH) * torque
            - DAMPING * self.theta_dot;
        self.theta_dot = (self.theta_dot + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta = wrap_angle(self.theta + self.theta_dot * DT);
        self.t += 1;
        Ok((self.observe(), Self::reward(self.theta, self.theta_dot)))
    }

    fn steps_taken(&self) -> usize {
        self.t
    }
}
