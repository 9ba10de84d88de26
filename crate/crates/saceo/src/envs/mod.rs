//! In-repo continuous-control tasks.
//!
//! Fixed-length episodes, per-step rewards in the unit interval, no early
//! termination. Given a seed and an action sequence the trajectory is fully
//! deterministic.

mod pendulum;
mod pointmass;

pub use pendulum::PendulumSwingup;
pub use pointmass::PointmassReach;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const DEFAULT_HORIZON: usize = 200;

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub reward_range: (f64, f64),
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Draws the initial state; resets the step counter to zero.
    fn reset(&mut self, rng: &mut SeededRng) -> Vec<f64>;

    /// One integration step. Actions are clipped into `[-1, 1]` per
    /// coordinate; stepping past the horizon is a usage error.
    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64)>;

    fn steps_taken(&self) -> usize;
}

pub(crate) fn check_action(action: &[f64], dim: usize, t: usize, horizon: usize) -> Result<()> {
    if t >= horizon {
        return Err(Error::Usage(format!(
            "episode is over: step {t} of horizon {horizon}"
        )));
    }
    if action.len() != dim {
        return Err(Error::Usage(format!(
            "action dim {} does not match env action dim {dim}",
            action.len()
        )));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Usage("non-finite action".into()));
    }
    Ok(())
}

/// Environment registry; names are the config-file values.
pub fn make_env(name: &str, horizon: usize) -> Result<Box<dyn Env>> {
    match name {
        "pendulum-swingup" => Ok(Box::new(PendulumSwingup::new(horizon))),
        "pointmass-reach" => Ok(Box::new(PointmassReach::new(horizon))),
        other => Err(Error::Config(format!(
            "unknown env '{other}' (available: pendulum-swingup, pointmass-reach)"
        ))),
    }
}
