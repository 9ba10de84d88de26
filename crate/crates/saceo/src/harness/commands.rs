//! The four pipeline commands behind the CLI: run a training job, train an
//! expert, record its observations, and compare finished runs.

use std::path::{Path, PathBuf};

use crate::agent::{
    evaluate, load_checkpoint, save_checkpoint, train, EvalResult, TrainHooks, TrainSession,
};
use crate::buffers::{load_expert_file, save_expert_file, ExpertDataset};
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};

use super::config::{Algorithm, RunConfig};

pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
}

fn write_snapshot(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("config.resolved");
    std::fs::write(&path, cfg.resolved_snapshot()).map_err(|e| Error::io(&path, e))
}

fn load_expert_if_used(cfg: &RunConfig) -> Result<Option<ExpertDataset>> {
    if cfg.uses_expert() {
        let path = cfg
            .expert_path
            .as_ref()
            .expect("validation guarantees expert_path");
        Ok(Some(load_expert_file(path)?))
    } else {
        if cfg.expert_path.is_some() {
            eprintln!(
                "warning: algorithm '{}' does not use expert data; ignoring expert_path",
                cfg.algo.name()
            );
        }
        Ok(None)
    }
}

/// Executes the configured algorithm, writing the resolved config, metrics
/// CSV, and checkpoints into the run directory.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out_dir = cfg.resolved_out_dir();
    write_snapshot(cfg, &out_dir)?;
    let expert = load_expert_if_used(cfg)?;
    let mut env = make_env(&cfg.env, cfg.horizon)?;
    let spec = cfg.session_spec(env.spec().state_dim, env.spec().action_dim)?;
    let mut session = TrainSession::new(&spec, expert)?;
    let outcome = train(
        &mut session,
        env.as_mut(),
        &cfg.train_config(),
        &out_dir,
        &mut TrainHooks::default(),
    )?;
    Ok(RunOutcome {
        out_dir,
        metrics_path: outcome.metrics_path,
        final_checkpoint: outcome.final_checkpoint,
    })
}

pub struct ExpertTrainOutcome {
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub record_path: PathBuf,
    pub evaluation: EvalResult,
}

/// Trains a plain maximum-entropy agent as the expert and records its
/// evaluated performance next to the checkpoint.
pub fn cmd_train_expert(cfg: &RunConfig) -> Result<ExpertTrainOutcome> {
    let mut cfg = cfg.clone();
    if cfg.algo != Algorithm::Sac {
        eprintln!(
            "warning: train-expert always trains 'sac'; overriding configured '{}'",
            cfg.algo.name()
        );
        cfg.algo = Algorithm::Sac;
    }
    cfg.validate()?;
    let out_dir = cfg.resolved_out_dir();
    write_snapshot(&cfg, &out_dir)?;

    let mut env = make_env(&cfg.env, cfg.horizon)?;
    let spec = cfg.session_spec(env.spec().state_dim, env.spec().action_dim)?;
    let mut session = TrainSession::new(&spec, None)?;
    let checkpoint = if cfg.steps == 0 {
        // Zero budget: the record describes the freshly initialized policy.
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let path = out_dir.join("checkpoint_final.bin");
        save_checkpoint(&session, &path)?;
        path
    } else {
        train(
            &mut session,
            env.as_mut(),
            &cfg.train_config(),
            &out_dir,
            &mut TrainHooks::default(),
        )?
        .final_checkpoint
    };

    // Dedicated post-training evaluation on its own stream.
    let mut eval_env = make_env(&cfg.env, cfg.horizon)?;
    let mut eval_rng = SeededRng::new(cfg.seed.wrapping_add(1), Stream::Eval);
    let evaluation = evaluate(
        &session.agent,
        eval_env.as_mut(),
        cfg.eval_episodes,
        &mut eval_rng,
    )?;

    let record_path = out_dir.join("expert_record.txt");
    let mut record = String::new();
    record.push_str(&format!("env = {}\n", cfg.env));
    record.push_str(&format!("steps_trained = {}\n", cfg.steps));
    record.push_str(&format!("episodes = {}\n", cfg.eval_episodes));
    record.push_str(&format!("mean_return = {}\n", evaluation.mean_return));
    record.push_str(&format!("std_return = {}\n", evaluation.std_return));
    if let Some(threshold) = cfg.expert_return_threshold {
        record.push_str(&format!("threshold = {threshold}\n"));
        if evaluation.mean_return < threshold {
            eprintln!(
                "warning: expert return {} is below the declared threshold {threshold}",
                evaluation.mean_return
            );
        }
    }
    std::fs::write(&record_path, record).map_err(|e| Error::io(&record_path, e))?;

    Ok(ExpertTrainOutcome {
        out_dir,
        checkpoint,
        record_path,
        evaluation,
    })
}

/// Reads `key = value` lines from an expert performance record.
pub fn parse_expert_record(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (no, line) in text.lines().enumerate() {
        if let Some((key, value)) = line.split_once('=') {
            if key.trim() == "mean_return" {
                return value.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: no + 1,
                    msg: format!("bad mean_return value '{}'", value.trim()),
                });
            }
        }
    }
    Err(Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "no mean_return entry found".into(),
    })
}

pub struct RecordOutcome {
    pub path: PathBuf,
    pub trajectories: usize,
    pub states: usize,
}

/// Rolls out the checkpointed policy deterministically and writes the
/// visited states (only states) in the expert file format. Each trajectory
/// block holds the initial state plus one state per step, so every step
/// contributes a consecutive pair.
pub fn cmd_record_expert(
    checkpoint: &Path,
    env_name: &str,
    horizon: usize,
    trajectories: usize,
    max_states: Option<usize>,
    out_path: &Path,
    seed: u64,
) -> Result<RecordOutcome> {
    if trajectories == 0 {
        return Err(Error::Config("need at least one trajectory".into()));
    }
    let session = load_checkpoint(checkpoint, None)?;
    let mut env = make_env(env_name, horizon)?;
    let spec = env.spec();
    if spec.state_dim != session.agent.state_dim() || spec.action_dim != session.agent.action_dim()
    {
        return Err(Error::Config(format!(
            "checkpoint dims ({}, {}) do not match env '{}' ({}, {})",
            session.agent.state_dim(),
            session.agent.action_dim(),
            env_name,
            spec.state_dim,
            spec.action_dim
        )));
    }

    let mut rng = SeededRng::new(seed, Stream::Eval);
    let mut trajs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(trajectories);
    let mut total = 0usize;
    'outer: for _ in 0..trajectories {
        let mut obs = env.reset(&mut rng);
        let mut states = vec![obs.clone()];
        total += 1;
        if max_states.is_some_and(|cap| total >= cap) {
            trajs.push(states);
            break 'outer;
        }
        for _ in 0..horizon {
            let action = session.agent.deterministic_action(&obs)?;
            let (next, _reward) = env.step(&action)?;
            obs = next;
            states.push(obs.clone());
            total += 1;
            if max_states.is_some_and(|cap| total >= cap) {
                trajs.push(states);
                break 'outer;
            }
        }
        trajs.push(states);
    }

    let dataset = ExpertDataset::new(session.agent.state_dim(), trajs)?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    save_expert_file(&dataset, out_path)?;
    Ok(RecordOutcome {
        path: out_path.to_path_buf(),
        trajectories: dataset.trajectories().len(),
        states: dataset.state_count(),
    })
}
