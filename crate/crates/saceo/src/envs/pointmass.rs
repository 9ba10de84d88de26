//! Damped point mass pushed toward a goal at the origin.

use super::{check_action, Env, EnvSpec};
use crate::error::Result;
use crate::rng::SeededRng;

const DT: f64 = 0.05;
const DAMPING: f64 = 0.5;
const MAX_FORCE: f64 = 1.0;
const ARENA: f64 = 1.0;
/// Resets draw the position uniformly from `[-START_BOX, START_BOX]^2`.
pub const START_BOX: f64 = 0.9;
const REWARD_SCALE: f64 = 3.0;

pub struct PointmassReach {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    t: usize,
}

impl PointmassReach {
    pub fn new(horizon: usize) -> Self {
        PointmassReach {
            spec: EnvSpec {
                name: "pointmass-reach",
                state_dim: 4,
                action_dim: 2,
                horizon,
                reward_range: (0.0, 1.0),
            },
            pos: [0.0, 0.0],
            vel: [0.0, 0.0],
            t: 0,
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    pub fn reward(pos: &[f64; 2]) -> f64 {
        let dist = (pos[0] * pos[0] + pos[1] * pos[1]).sqrt();
        (-REWARD_SCALE * dist).exp()
    }
}

impl Env for PointmassReach {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut SeededRng) -> Vec<f64> {
        self.pos = [
            rng.uniform_in(-START_BOX, START_BOX),
            rng.uniform_in(-START_BOX, START_BOX),
        ];
        self.vel = [0.0, 0.0];
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_action(action, 2, self.t, self.spec.horizon)?;
        for i in 0..2 {
            let force = action[i].clamp(-1.0, 1.0) * MAX_FORCE;
            self.vel[i] += (force - DAMPING * self.vel[i]) * DT;
            self.pos[i] += self.vel[i] * DT;
            // Hard walls: clamp and kill the normal velocity.
            if self.pos[i].abs() > ARENA {
                self.pos[i] = self.pos[i].clamp(-ARENA, ARENA);
                self.vel[i] = 0.0;
            }
        }
        self.t += 1;
        Ok((self.observe(), Self::reward(&self.pos)))
    }

    fn steps_taken(&self) -> usize {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn resets_land_in_the_start_box() {
        let mut env = PointmassReach::new(10);
        let mut rng = SeededRng::new(31, Stream::Env);
        for _ in 0..1000 {
            let obs = env.reset(&mut rng);
            assert!(obs[0].abs() <= START_BOX && obs[1].abs() <= START_BOX);
            assert_eq!(&obs[2..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn reward_peaks_at_the_goal() {
        assert!((PointmassReach::reward(&[0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!(PointmassReach::reward(&[0.5, 0.5]) < 0.2);
    }

    #[test]
    fn constant_push_moves_toward_the_wall_and_stops() {
        let mut env = PointmassReach::new(400);
        env.pos = [0.0, 0.0];
        env.vel = [0.0, 0.0];
        let mut last_x = 0.0;
        for _ in 0..400 {
            let (obs, _) = env.step(&[1.0, 0.0]).unwrap();
            assert!(obs[0] >= last_x);
            last_x = obs[0];
        }
        assert!((last_x - ARENA).abs() < 1e-9);
    }
}
