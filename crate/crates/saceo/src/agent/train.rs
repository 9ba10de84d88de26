//! The training loop.
//!
//! One parameterized loop covers the whole algorithm family. Each outer
//! iteration collects one trajectory; when the expert term is active the
//! iteration starts by refitting the dynamics ensemble on the model buffer,
//! measuring the two-model discrepancy on a fresh expert mini-batch under
//! the current policy, setting the mixing coefficient from it, and keeping
//! that mini-batch for the whole trajectory (re-split in two every inner
//! step). Every inner step performs one critic update per critic, one
//! (augmented) policy update, one temperature update, and a target smoothing
//! step.
//!
//! With a fixed mixing weight of zero none of the expert machinery runs and
//! the loop *is* the plain maximum-entropy actor-critic: runs with the same
//! seed produce byte-identical metrics.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::buffers::{sample_expert_pairs, split_pairs, ExpertDataset, ModelBuffer, ReplayBuffer, Transition};
use crate::dynamics::DynamicsEnsemble;
use crate::envs::{make_env, Env};
use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};

use super::losses::{augmented_policy_step, critic_step, temperature_step, CriticBatch, ExpertPair};
use super::{AgentHyper, AgentState, EpsilonSchedule};

/// Static description of a run, enough to build a fresh [`TrainSession`].
#[derive(Debug, Clone)]
pub struct SessionSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hyper: AgentHyper,
    pub schedule: EpsilonSchedule,
    pub model_hidden: Vec<usize>,
    pub lr_model: f64,
    pub replay_capacity: usize,
    pub model_capacity: usize,
    pub master_seed: u64,
}

/// Loop parameters; the session carries the mutable state.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub env_name: String,
    pub total_steps: usize,
    pub horizon: usize,
    pub warmup_steps: usize,
    pub env_batch: usize,
    pub expert_batch: usize,
    pub model_batch: usize,
    pub model_epochs: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Discrepancy over the whole expert dataset instead of the mini-batch.
    pub delta_on_full_expert: bool,
    /// Extra checkpoint every this many iterations; 0 keeps only the final one.
    pub checkpoint_every_iters: usize,
}

/// Per-policy-update instrumentation.
#[derive(Debug, Clone)]
pub struct PolicyUpdateInfo {
    pub step: usize,
    pub epsilon: f64,
    pub rl_weight: f64,
    pub mse_weight: f64,
    pub j_pi: Option<f64>,
    pub mse_avg: Option<f64>,
}

#[derive(Default)]
pub struct TrainHooks<'h> {
    pub on_policy_update: Option<Box<dyn FnMut(&PolicyUpdateInfo) + 'h>>,
}

/// Loss means accumulated since the last metrics row.
#[derive(Debug, Clone, Default)]
pub(crate) struct WindowStats {
    pub jq_sum: f64,
    pub jq_n: u64,
    pub jpi_sum: f64,
    pub jpi_n: u64,
    pub mse_sum: f64,
    pub mse_n: u64,
}

impl WindowStats {
    fn mean(sum: f64, n: u64) -> Option<f64> {
        (n > 0).then(|| sum / n as f64)
    }

    fn reset(&mut self) {
        *self = WindowStats::default();
    }
}

/// All mutable state of a run; checkpoints capture it exactly.
pub struct TrainSession {
    pub agent: AgentState,
    pub ensemble: Option<DynamicsEnsemble>,
    pub schedule: EpsilonSchedule,
    pub replay: ReplayBuffer,
    pub model_buffer: ModelBuffer,
    pub expert: Option<ExpertDataset>,
    pub(crate) rng_env: SeededRng,
    pub(crate) rng_agent: SeededRng,
    pub(crate) rng_model: SeededRng,
    pub(crate) rng_expert: SeededRng,
    pub(crate) rng_eval: SeededRng,
    pub(crate) master_seed: u64,
    pub steps_done: usize,
    pub iters_done: usize,
    pub(crate) window: WindowStats,
    pub(crate) last_delta: Option<f64>,
    pub(crate) last_model_nll: Option<[f64; 2]>,
    pub(crate) model_hidden: Vec<usize>,
    pub(crate) lr_model: f64,
}

impl TrainSession {
    pub fn new(spec: &SessionSpec, expert: Option<ExpertDataset>) -> Result<Self> {
        if spec.model_capacity >= spec.replay_capacity {
            return Err(Error::Config(format!(
                "model buffer capacity {} must be strictly smaller than replay capacity {}",
                spec.model_capacity, spec.replay_capacity
            )));
        }
        let expert_active = spec.schedule.expert_term_active();
        match (&expert, expert_active) {
            (None, true) => {
                return Err(Error::Config(
                    "the expert term is active but no expert dataset was provided".into(),
                ))
            }
            (Some(e), true) if e.dim() != spec.state_dim => {
                return Err(Error::Config(format!(
                    "expert state dim {} does not match env state dim {}",
                    e.dim(),
                    spec.state_dim
                )))
            }
            (Some(e), true) if e.pair_count() == 0 => {
                return Err(Error::Config(
                    "expert dataset has no consecutive state pairs".into(),
                ))
            }
            _ => {}
        }

        let mut rng_agent = SeededRng::new(spec.master_seed, Stream::Agent);
        let mut rng_model = SeededRng::new(spec.master_seed, Stream::Model);
        let agent = AgentState::new(
            spec.state_dim,
            spec.action_dim,
            spec.hyper.clone(),
            &mut rng_agent,
        )?;
        let ensemble = if expert_active {
            Some(DynamicsEnsemble::new(
                spec.state_dim,
                spec.action_dim,
                &spec.model_hidden,
                spec.lr_model,
                &mut rng_model,
            )?)
        } else {
            None
        };

        Ok(TrainSession {
            agent,
            ensemble,
            schedule: spec.schedule.clone(),
            replay: ReplayBuffer::new(spec.replay_capacity)?,
            model_buffer: ModelBuffer::new(spec.model_capacity)?,
            expert,
            rng_env: SeededRng::new(spec.master_seed, Stream::Env),
            rng_agent,
            rng_model,
            rng_expert: SeededRng::new(spec.master_seed, Stream::Expert),
            rng_eval: SeededRng::new(spec.master_seed, Stream::Eval),
            master_seed: spec.master_seed,
            steps_done: 0,
            iters_done: 0,
            window: WindowStats::default(),
            last_delta: None,
            last_model_nll: None,
            model_hidden: spec.model_hidden.clone(),
            lr_model: spec.lr_model,
        })
    }

    fn expert_term_active(&self) -> bool {
        self.schedule.expert_term_active()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalResult {
    pub mean_return: f64,
    pub std_return: f64,
}

/// Deterministic-action rollouts; the mean of summed rewards over episodes.
pub fn evaluate(
    agent: &AgentState,
    env: &mut dyn Env,
    episodes: usize,
    rng: &mut SeededRng,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let horizon = env.spec().horizon;
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        let mut total = 0.0;
        for _ in 0..horizon {
            let action = agent.deterministic_action(&obs)?;
            let (next, reward) = env.step(&action)?;
            obs = next;
            total += reward;
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let std = if episodes > 1 {
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / (episodes - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Ok(EvalResult {
        mean_return: mean,
        std_return: std,
    })
}

pub const METRICS_HEADER: &str = "step,episode_return_mean,episode_return_std,epsilon,delta_max,alpha,j_q,j_pi,mse_expert,model1_nll,model2_nll";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub struct TrainOutcome {
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub rows_written: usize,
}

struct MetricsWriter {
    file: std::fs::File,
    path: PathBuf,
    rows: usize,
}

impl MetricsWriter {
    fn create(path: PathBuf) -> Result<Self> {
        let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(MetricsWriter { file, path, rows: 0 })
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &mut self,
        step: usize,
        eval: EvalResult,
        epsilon: f64,
        delta: Option<f64>,
        alpha: f64,
        jq: Option<f64>,
        jpi: Option<f64>,
        mse: Option<f64>,
        nll: Option<[f64; 2]>,
    ) -> Result<()> {
        writeln!(
            self.file,
            "{},{},{},{},{},{},{},{},{},{},{}",
            step,
            eval.mean_return,
            eval.std_return,
            epsilon,
            fmt_opt(delta),
            alpha,
            fmt_opt(jq),
            fmt_opt(jpi),
            fmt_opt(mse),
            fmt_opt(nll.map(|n| n[0])),
            fmt_opt(nll.map(|n| n[1])),
        )
        .map_err(|e| Error::io(&self.path, e))?;
        self.rows += 1;
        Ok(())
    }
}

/// Runs (or resumes) the training loop, writing `metrics.csv` and
/// checkpoints under `out_dir`.
pub fn train(
    session: &mut TrainSession,
    env: &mut dyn Env,
    cfg: &TrainConfig,
    out_dir: &Path,
    hooks: &mut TrainHooks,
) -> Result<TrainOutcome> {
    validate_train_config(session, env, cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut metrics = MetricsWriter::create(out_dir.join("metrics.csv"))?;

    let mut eval_env = make_env(&cfg.env_name, cfg.horizon)?;
    let mut emit_row = |session: &mut TrainSession, metrics: &mut MetricsWriter| -> Result<()> {
        let eval = evaluate(
            &session.agent,
            eval_env.as_mut(),
            cfg.eval_episodes,
            &mut session.rng_eval,
        )?;
        let w = &session.window;
        metrics.row(
            session.steps_done,
            eval,
            session.schedule.current(),
            session.last_delta,
            session.agent.alpha(),
            WindowStats::mean(w.jq_sum, w.jq_n),
            WindowStats::mean(w.jpi_sum, w.jpi_n),
            WindowStats::mean(w.mse_sum, w.mse_n),
            session.last_model_nll,
        )?;
        session.window.reset();
        Ok(())
    };

    if session.steps_done == 0 {
        emit_row(session, &mut metrics)?;
    }

    let action_dim = session.agent.action_dim();
    let state_dim = session.agent.state_dim();
    let mut expert_batch_pairs: Vec<ExpertPair> = Vec::new();

    while session.steps_done < cfg.total_steps {
        // --- iteration preamble: models, discrepancy, mixing weight.
        if session.expert_term_active() {
            if session.model_buffer.len() >= cfg.model_batch {
                let ensemble = session.ensemble.as_mut().expect("ensemble exists");
                let report = ensemble.train(
                    &session.model_buffer,
                    cfg.model_epochs,
                    cfg.model_batch,
                    &mut session.rng_model,
                )?;
                if let Some(nll) = report.final_nll() {
                    session.last_model_nll = Some(nll);
                }
            }
            let expert = session.expert.as_ref().expect("expert exists");
            expert_batch_pairs = sample_expert_pairs(expert, cfg.expert_batch, &mut session.rng_expert)?
                .into_iter()
                .map(|(a, b)| (a.to_vec(), b.to_vec()))
                .collect();
            let ensemble = session.ensemble.as_ref().expect("ensemble exists");
            let agent = &session.agent;
            let delta = if cfg.delta_on_full_expert {
                ensemble.discrepancy_max(expert.iter_states(), |s| agent.deterministic_action(s))?
            } else {
                ensemble.discrepancy_max(
                    expert_batch_pairs.iter().map(|p| p.0.as_slice()),
                    |s| agent.deterministic_action(s),
                )?
            };
            session.last_delta = Some(delta);
            session.schedule.update(delta)?;
        }

        // --- one trajectory.
        let mut obs = env.reset(&mut session.rng_env);
        for _ in 0..cfg.horizon {
            if session.steps_done >= cfg.total_steps {
                break;
            }
            let action = if session.steps_done < cfg.warmup_steps {
                (0..action_dim)
                    .map(|_| session.rng_agent.uniform_in(-1.0, 1.0))
                    .collect::<Vec<f64>>()
            } else {
                let head = session.agent.policy_head(&obs)?;
                let mut noise = vec![0.0; action_dim];
                session.rng_agent.fill_standard_normal(&mut noise);
                head.sample(&noise)?.0
            };
            let (next_obs, reward) = env.step(&action)?;
            session.replay.push(Transition {
                state: obs.clone(),
                action: action.clone(),
                reward,
                next_state: next_obs.clone(),
            });
            session
                .model_buffer
                .push(obs.clone(), action, next_obs.clone());
            obs = next_obs;
            session.steps_done += 1;

            let update_due = session.steps_done >= cfg.warmup_steps
                && session.replay.len() >= cfg.env_batch;
            if update_due {
                update_once(session, cfg, state_dim, action_dim, hooks, &expert_batch_pairs)
                    .map_err(|e| annotate_step(e, session.steps_done))?;
            }

            if session.steps_done % cfg.eval_interval == 0 {
                emit_row(session, &mut metrics)?;
            }
        }
        session.iters_done += 1;

        if cfg.checkpoint_every_iters > 0 && session.iters_done % cfg.checkpoint_every_iters == 0 {
            let path = out_dir.join(format!("checkpoint_iter{}.bin", session.iters_done));
            super::save_checkpoint(session, &path)?;
        }
    }

    let final_checkpoint = out_dir.join("checkpoint_final.bin");
    super::save_checkpoint(session, &final_checkpoint)?;
    Ok(TrainOutcome {
        metrics_path: metrics.path.clone(),
        final_checkpoint,
        rows_written: metrics.rows,
    })
}

fn annotate_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numerical { context, detail } => Error::Numerical {
            context: format!("{context} at env step {step}"),
            detail,
        },
        other => other,
    }
}

fn validate_train_config(session: &TrainSession, env: &dyn Env, cfg: &TrainConfig) -> Result<()> {
    let mut problems = Vec::new();
    let spec = env.spec();
    if spec.name != cfg.env_name {
        problems.push(format!(
            "env '{}' does not match configured '{}'",
            spec.name, cfg.env_name
        ));
    }
    if spec.state_dim != session.agent.state_dim()
        || spec.action_dim != session.agent.action_dim()
    {
        problems.push("env dimensions do not match the agent".into());
    }
    if spec.horizon != cfg.horizon {
        problems.push(format!(
            "env horizon {} does not match configured {}",
            spec.horizon, cfg.horizon
        ));
    }
    if cfg.total_steps == 0 {
        problems.push("total_steps must be positive".into());
    }
    if cfg.horizon == 0 {
        problems.push("horizon must be positive".into());
    }
    if cfg.env_batch == 0 {
        problems.push("env_batch must be positive".into());
    }
    if cfg.eval_interval == 0 {
        problems.push("eval_interval must be positive".into());
    }
    if cfg.eval_episodes == 0 {
        problems.push("eval_episodes must be positive".into());
    }
    if session.expert_term_active() {
        if cfg.expert_batch == 0 {
            problems.push("expert_batch must be positive".into());
        }
        if cfg.model_batch == 0 {
            problems.push("model_batch must be positive".into());
        }
        if session.expert.is_none() {
            problems.push("the expert term is active but no expert dataset is loaded".into());
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems.join("; ")))
    }
}

fn update_once(
    session: &mut TrainSession,
    cfg: &TrainConfig,
    state_dim: usize,
    action_dim: usize,
    hooks: &mut TrainHooks,
    expert_batch_pairs: &[ExpertPair],
) -> Result<()> {
    let b = cfg.env_batch;
    let indices = session.replay.sample_indices(b, &mut session.rng_agent)?;
    let mut states = Vec::with_capacity(b * state_dim);
    let mut actions = Vec::with_capacity(b * action_dim);
    let mut rewards = Vec::with_capacity(b);
    let mut next_states = Vec::with_capacity(b * state_dim);
    for &i in &indices {
        let t = session.replay.get_physical(i);
        states.extend_from_slice(&t.state);
        actions.extend_from_slice(&t.action);
        rewards.push(t.reward);
        next_states.extend_from_slice(&t.next_state);
    }

    // Critic updates, one per critic, shared bootstrap target.
    let mut next_noise = vec![0.0; b * action_dim];
    session.rng_agent.fill_standard_normal(&mut next_noise);
    let cb = CriticBatch {
        states: &states,
        actions: &actions,
        rewards: &rewards,
        next_states: &next_states,
        batch: b,
    };
    let cstep = critic_step(&session.agent, &cb, &next_noise)?;
    for c in 0..2 {
        session.agent.adam_critics[c]
            .step(session.agent.critics[c].params_mut(), cstep.grads[c].as_slice())?;
    }
    session.window.jq_sum += (cstep.j_q[0] + cstep.j_q[1]) / 2.0;
    session.window.jq_n += 1;

    // Augmented policy update.
    let mut policy_noise = vec![0.0; b * action_dim];
    session.rng_agent.fill_standard_normal(&mut policy_noise);
    let eps = session.schedule.current();
    let pstep = if session.expert_term_active() {
        let (half1, half2) = split_pairs(expert_batch_pairs, &mut session.rng_expert);
        augmented_policy_step(
            &session.agent,
            session.ensemble.as_ref(),
            &states,
            b,
            &policy_noise,
            eps,
            Some((&half1, &half2)),
        )?
    } else {
        augmented_policy_step(&session.agent, None, &states, b, &policy_noise, eps, None)?
    };
    session
        .agent
        .adam_policy
        .step(session.agent.policy.params_mut(), pstep.grads.as_slice())?;
    if let Some(jpi) = pstep.j_pi {
        session.window.jpi_sum += jpi;
        session.window.jpi_n += 1;
    }
    if let Some(mse) = pstep.mse_avg {
        session.window.mse_sum += mse;
        session.window.mse_n += 1;
    }
    if let Some(hook) = hooks.on_policy_update.as_mut() {
        hook(&PolicyUpdateInfo {
            step: session.steps_done,
            epsilon: eps,
            rl_weight: 1.0 - eps,
            mse_weight: eps,
            j_pi: pstep.j_pi,
            mse_avg: pstep.mse_avg,
        });
    }

    // Temperature update on its own action sample.
    let mut temp_noise = vec![0.0; b * action_dim];
    session.rng_agent.fill_standard_normal(&mut temp_noise);
    let tstep = temperature_step(&session.agent, &states, b, &temp_noise)?;
    session
        .agent
        .adam_alpha
        .step(&mut session.agent.log_alpha, &[tstep.grad_log_alpha])?;

    session.agent.soft_update_targets();
    Ok(())
}
