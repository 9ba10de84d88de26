//! Actor-critic core: policy, twin critics with delayed targets, learned
//! temperature, and the mixing schedule between the reinforcement-learning
//! objective and the expert-matching loss.

mod checkpoint;
mod losses;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, SavedRun};
pub use losses::{
    augmented_policy_step, critic_step, expert_mse_loss, policy_rl_step, temperature_step,
    CriticBatch, CriticStep, PolicyStep, TemperatureStep,
};
pub use train::{
    evaluate, train, EvalResult, PolicyUpdateInfo, SessionSpec, TrainConfig, TrainHooks,
    TrainOutcome, TrainSession, METRICS_HEADER,
};

use crate::dist::SquashedGaussianHead;
use crate::error::{Error, Result};
use crate::nn::{AdamState, MlpNet, MlpSpec};
use crate::rng::SeededRng;

/// Scale on the fan-in bound for the policy's output layer, so initial
/// action means sit near zero and the log-std head is dominated by its bias.
const POLICY_FINAL_WEIGHT_SCALE: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct AgentHyper {
    pub gamma: f64,
    pub tau: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub init_alpha: f64,
    pub init_policy_std: f64,
    /// Entropy target; the conventional choice is `-action_dim`.
    pub entropy_target: f64,
    pub hidden: Vec<usize>,
}

impl AgentHyper {
    pub fn defaults(action_dim: usize) -> Self {
        AgentHyper {
            gamma: 0.99,
            tau: 5e-3,
            lr_policy: 1e-4,
            lr_critic: 3e-4,
            lr_alpha: 3e-4,
            init_alpha: 0.1,
            init_policy_std: 0.3,
            entropy_target: -(action_dim as f64),
            hidden: vec![256, 256],
        }
    }
}

/// Mixing coefficient between the RL policy loss and the expert MSE.
#[derive(Debug, Clone, PartialEq)]
pub enum EpsilonSchedule {
    /// Constant mixing weight in `[0, 1]`.
    Fixed(f64),
    /// `eps = 1 / (1 + beta * delta_max)`, recomputed once per iteration.
    Adaptive { beta: f64, current: f64 },
}

impl EpsilonSchedule {
    pub fn adaptive(beta: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
        }
        Ok(EpsilonSchedule::Adaptive { beta, current: 1.0 })
    }

    pub fn fixed(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Config(format!(
                "fixed epsilon must be in [0, 1], got {value}"
            )));
        }
        Ok(EpsilonSchedule::Fixed(value))
    }

    pub fn current(&self) -> f64 {
        match self {
            EpsilonSchedule::Fixed(v) => *v,
            EpsilonSchedule::Adaptive { current, .. } => *current,
        }
    }

    /// The expert term can only ever contribute when this is true; a fixed
    /// zero weight degenerates the family to the plain RL algorithm.
    pub fn expert_term_active(&self) -> bool {
        match self {
            EpsilonSchedule::Fixed(v) => *v > 0.0,
            EpsilonSchedule::Adaptive { .. } => true,
        }
    }

    /// Applies the discrepancy measurement; fixed schedules ignore it.
    pub fn update(&mut self, delta_max: f64) -> Result<f64> {
        if !(delta_max >= 0.0) {
            return Err(Error::Usage(format!(
                "delta_max must be non-negative, got {delta_max}"
            )));
        }
        if let EpsilonSchedule::Adaptive { beta, current } = self {
            *current = 1.0 / (1.0 + *beta * delta_max);
        }
        Ok(self.current())
    }
}

/// Policy, twin critics, their delayed targets, and the temperature.
pub struct AgentState {
    state_dim: usize,
    action_dim: usize,
    pub hyper: AgentHyper,
    pub policy: MlpNet,
    pub critics: [MlpNet; 2],
    pub targets: [MlpNet; 2],
    /// Single-element buffer so the temperature shares the optimizer code.
    pub log_alpha: Vec<f64>,
    pub adam_policy: AdamState,
    pub adam_critics: [AdamState; 2],
    pub adam_alpha: AdamState,
}

impl AgentState {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hyper: AgentHyper,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::Config("state and action dims must be positive".into()));
        }
        let policy_spec = MlpSpec::new(state_dim, &hyper.hidden, 2 * action_dim);
        let critic_spec = MlpSpec::new(state_dim + action_dim, &hyper.hidden, 1);

        let mut policy = MlpNet::new(&policy_spec, rng)?;
        // Small final weights, log-std bias at ln(initial std): fresh policies
        // act near zero mean with the configured exploration spread.
        let wr = policy.final_weight_range();
        for i in wr {
            policy.params_mut()[i] *= POLICY_FINAL_WEIGHT_SCALE;
        }
        let br = policy.final_bias_range();
        let log_std0 = hyper.init_policy_std.ln();
        for i in br.start + action_dim..br.end {
            policy.params_mut()[i] = log_std0;
        }

        let critic1 = MlpNet::new(&critic_spec, rng)?;
        let critic2 = MlpNet::new(&critic_spec, rng)?;
        let targets = [critic1.clone(), critic2.clone()];

        let adam_policy = AdamState::new(hyper.lr_policy, policy.param_count());
        let adam_critics = [
            AdamState::new(hyper.lr_critic, critic1.param_count()),
            AdamState::new(hyper.lr_critic, critic2.param_count()),
        ];
        let adam_alpha = AdamState::new(hyper.lr_alpha, 1);

        Ok(AgentState {
            state_dim,
            action_dim,
            log_alpha: vec![hyper.init_alpha.ln()],
            hyper,
            policy,
            critics: [critic1, critic2],
            targets,
            adam_policy,
            adam_critics,
            adam_alpha,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha[0].exp()
    }

    pub fn policy_head(&self, state: &[f64]) -> Result<SquashedGaussianHead> {
        let out = self.policy.apply(state)?;
        SquashedGaussianHead::from_net_output(&out)
    }

    /// tanh of the policy mean.
    pub fn deterministic_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.policy_head(state)?.deterministic_action())
    }

    /// `target = tau * online + (1 - tau) * target`, elementwise.
    pub fn soft_update_targets(&mut self) {
        let tau = self.hyper.tau;
        for i in 0..2 {
            let online = self.critics[i].params().to_vec();
            for (t, o) in self.targets[i].params_mut().iter_mut().zip(online) {
                *t = tau * o + (1.0 - tau) * *t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn agent() -> AgentState {
        let mut rng = SeededRng::new(1, Stream::Agent);
        let mut hyper = AgentHyper::defaults(2);
        hyper.hidden = vec![16, 16];
        AgentState::new(3, 2, hyper, &mut rng).unwrap()
    }

    #[test]
    fn targets_start_as_copies_of_critics() {
        let a = agent();
        for i in 0..2 {
            assert_eq!(a.critics[i].params(), a.targets[i].params());
        }
        assert_ne!(a.critics[0].params(), a.critics[1].params());
    }

    #[test]
    fn initial_policy_std_is_configured() {
        let a = agent();
        let head = a.policy_head(&[0.2, -0.5, 1.0]).unwrap();
        for s in head.std() {
            assert!((s - 0.3).abs() < 0.02, "initial std {s}");
        }
        // Means start near zero thanks to the scaled final layer.
        for m in head.mean {
            assert!(m.abs() < 0.05);
        }
    }

    #[test]
    fn alpha_stays_positive_through_updates() {
        let mut a = agent();
        assert!((a.alpha() - 0.1).abs() < 1e-12);
        for sign in [1.0, -1.0] {
            for _ in 0..200 {
                a.adam_alpha
                    .step(&mut a.log_alpha, &[sign * 5.0])
                    .unwrap();
                assert!(a.alpha() > 0.0);
            }
        }
    }

    #[test]
    fn soft_update_blends_elementwise() {
        let mut a = agent();
        // tau = 1: targets become exact copies.
        a.hyper.tau = 1.0;
        a.critics[0].params_mut()[0] = 7.5;
        a.soft_update_targets();
        assert_eq!(a.targets[0].params(), a.critics[0].params());

        // tau = 0: targets frozen.
        a.hyper.tau = 0.0;
        a.critics[0].params_mut()[0] = -3.0;
        let before = a.targets[0].params().to_vec();
        a.soft_update_targets();
        assert_eq!(a.targets[0].params(), before.as_slice());

        // Scalar probe: tau = 0.5, online 2, target 0 -> 1.
        a.hyper.tau = 0.5;
        a.critics[0].params_mut()[0] = 2.0;
        a.targets[0].params_mut()[0] = 0.0;
        a.soft_update_targets();
        assert_eq!(a.targets[0].params()[0], 1.0);
    }

    #[test]
    fn repeated_soft_updates_converge_geometrically() {
        let mut a = agent();
        a.hyper.tau = 5e-3;
        let p = 2.0;
        let q = -1.0;
        a.critics[0].params_mut()[0] = p;
        a.targets[0].params_mut()[0] = q;
        let n = 100;
        for _ in 0..n {
            // Freeze online params: only index 0 matters for the probe.
            a.soft_update_targets();
        }
        let expected = p + (1.0 - 5e-3_f64).powi(n) * (q - p);
        let got = a.targets[0].params()[0];
        assert!(
            (got - expected).abs() < 1e-9,
            "target {got}, closed form {expected}"
        );
    }

    #[test]
    fn epsilon_schedule_formula() {
        let mut s = EpsilonSchedule::adaptive(100.0).unwrap();
        assert_eq!(s.update(0.01).unwrap(), 0.5);
        assert_eq!(s.update(0.0).unwrap(), 1.0);

        let mut zero_beta = EpsilonSchedule::adaptive(0.0).unwrap();
        for d in [0.0, 0.5, 123.0] {
            assert_eq!(zero_beta.update(d).unwrap(), 1.0);
        }

        let mut fixed = EpsilonSchedule::fixed(0.25).unwrap();
        assert_eq!(fixed.update(50.0).unwrap(), 0.25);

        assert!(EpsilonSchedule::fixed(1.5).is_err());
        assert!(EpsilonSchedule::adaptive(-1.0).is_err());
        assert!(matches!(s.update(-0.1).unwrap_err(), Error::Usage(_)));
    }

    #[test]
    fn adaptive_epsilon_stays_in_unit_interval_and_decreases_in_delta() {
        let mut s = EpsilonSchedule::adaptive(37.0).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..40 {
            let delta = k as f64 * 0.25;
            let eps = s.update(delta).unwrap();
            assert!(eps > 0.0 && eps <= 1.0);
            assert!(eps < last || (k == 0 && eps == 1.0));
            last = eps;
        }
    }
}
