//! Run configuration: built-in defaults, overridden by a flat `key = value`
//! config file, overridden by command-line flags. Validation reports every
//! violation at once, and the fully resolved configuration is snapshotted
//! next to the run outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::agent::{AgentHyper, EpsilonSchedule, SessionSpec, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sac,
    SacEo,
    Bco,
    SacEoFixed,
}

impl Algorithm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sac" => Ok(Algorithm::Sac),
            "sac-eo" => Ok(Algorithm::SacEo),
            "bco" => Ok(Algorithm::Bco),
            "sac-eo-fixed" => Ok(Algorithm::SacEoFixed),
            other => Err(Error::Config(format!(
                "unknown algorithm '{other}' (available: sac, sac-eo, bco, sac-eo-fixed)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sac => "sac",
            Algorithm::SacEo => "sac-eo",
            Algorithm::Bco => "bco",
            Algorithm::SacEoFixed => "sac-eo-fixed",
        }
    }
}

/// Every tunable of a run, fully resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub algo: Algorithm,
    pub env: String,
    pub seed: u64,
    pub beta: f64,
    /// Fixed mixing weight; only meaningful for `sac-eo-fixed`.
    pub epsilon: Option<f64>,
    pub gamma: f64,
    pub tau: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub lr_model: f64,
    pub init_alpha: f64,
    pub init_policy_std: f64,
    /// Entropy target; resolved to `-action_dim` when absent.
    pub entropy_target: Option<f64>,
    pub hidden: Vec<usize>,
    pub model_hidden: Vec<usize>,
    pub replay_capacity: usize,
    pub model_capacity: usize,
    pub steps: usize,
    pub horizon: usize,
    pub warmup_steps: usize,
    pub env_batch: usize,
    pub expert_batch: usize,
    pub model_batch: usize,
    pub model_epochs: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub delta_on_full_expert: bool,
    pub checkpoint_every_iters: usize,
    pub expert_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Evaluated return a trained expert is expected to clear; recorded in
    /// the expert performance file.
    pub expert_return_threshold: Option<f64>,
    /// Trajectories recorded by the expert-recording command.
    pub record_trajectories: usize,
    /// Optional cap on recorded expert states.
    pub record_states: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algo: Algorithm::Sac,
            env: "pendulum-swingup".into(),
            seed: 0,
            beta: 100.0,
            epsilon: None,
            gamma: 0.99,
            tau: 5e-3,
            lr_policy: 1e-4,
            lr_critic: 3e-4,
            lr_alpha: 3e-4,
            lr_model: 1e-3,
            init_alpha: 0.1,
            init_policy_std: 0.3,
            entropy_target: None,
            hidden: vec![256, 256],
            model_hidden: vec![256, 256],
            replay_capacity: 1_000_000,
            model_capacity: 100_000,
            steps: 1_000_000,
            horizon: 1000,
            warmup_steps: 1000,
            env_batch: 1024,
            expert_batch: 256,
            model_batch: 256,
            model_epochs: 10,
            eval_interval: 2000,
            eval_episodes: 5,
            delta_on_full_expert: false,
            checkpoint_every_iters: 0,
            expert_path: None,
            out_dir: None,
            expert_return_threshold: None,
            record_trajectories: 4,
            record_states: None,
        }
    }
}

/// Optional command-line overrides, applied after the config file.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub algo: Option<String>,
    pub env: Option<String>,
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub expert: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub steps: Option<usize>,
}

fn parse_usize_list(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad layer width '{}'", p.trim())))
        })
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad_num = |k: &str, v: &str| Error::Config(format!("bad value '{v}' for {k}"));
        macro_rules! num {
            ($field:expr, $ty:ty) => {
                $field = value.parse::<$ty>().map_err(|_| bad_num(key, value))?
            };
        }
        match key {
            "algo" => self.algo = Algorithm::parse(value)?,
            "env" => self.env = value.to_string(),
            "seed" => num!(self.seed, u64),
            "beta" => num!(self.beta, f64),
            "epsilon" => {
                self.epsilon = Some(value.parse::<f64>().map_err(|_| bad_num(key, value))?)
            }
            "gamma" => num!(self.gamma, f64),
            "tau" => num!(self.tau, f64),
            "lr_policy" => num!(self.lr_policy, f64),
            "lr_critic" => num!(self.lr_critic, f64),
            "lr_alpha" => num!(self.lr_alpha, f64),
            "lr_model" => num!(self.lr_model, f64),
            "init_alpha" => num!(self.init_alpha, f64),
            "init_policy_std" => num!(self.init_policy_std, f64),
            "entropy_target" => {
                self.entropy_target = Some(value.parse::<f64>().map_err(|_| bad_num(key, value))?)
            }
            "hidden" => self.hidden = parse_usize_list(value)?,
            "model_hidden" => self.model_hidden = parse_usize_list(value)?,
            "replay_capacity" => num!(self.replay_capacity, usize),
            "model_capacity" => num!(self.model_capacity, usize),
            "steps" => num!(self.steps, usize),
            "horizon" => num!(self.horizon, usize),
            "warmup_steps" => num!(self.warmup_steps, usize),
            "env_batch" => num!(self.env_batch, usize),
            "expert_batch" => num!(self.expert_batch, usize),
            "model_batch" => num!(self.model_batch, usize),
            "model_epochs" => num!(self.model_epochs, usize),
            "eval_interval" => num!(self.eval_interval, usize),
            "eval_episodes" => num!(self.eval_episodes, usize),
            "delta_on_full_expert" => {
                self.delta_on_full_expert = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(bad_num(key, value)),
                }
            }
            "checkpoint_every_iters" => num!(self.checkpoint_every_iters, usize),
            "expert_path" => self.expert_path = Some(PathBuf::from(value)),
            "out" => self.out_dir = Some(PathBuf::from(value)),
            "expert_return_threshold" => {
                self.expert_return_threshold =
                    Some(value.parse::<f64>().map_err(|_| bad_num(key, value))?)
            }
            "record_trajectories" => num!(self.record_trajectories, usize),
            "record_states" => {
                self.record_states = Some(value.parse::<usize>().map_err(|_| bad_num(key, value))?)
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Loads a flat `key = value` file over the current values.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: no + 1,
                    msg: format!("expected 'key = value', got '{line}'"),
                });
            };
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: no + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_cli(&mut self, cli: &CliOverrides) -> Result<()> {
        if let Some(a) = &cli.algo {
            self.algo = Algorithm::parse(a)?;
        }
        if let Some(e) = &cli.env {
            self.env = e.clone();
        }
        if let Some(s) = cli.seed {
            self.seed = s;
        }
        if let Some(b) = cli.beta {
            self.beta = b;
        }
        if let Some(e) = cli.epsilon {
            self.epsilon = Some(e);
        }
        if let Some(p) = &cli.expert {
            self.expert_path = Some(p.clone());
        }
        if let Some(o) = &cli.out {
            self.out_dir = Some(o.clone());
        }
        if let Some(s) = cli.steps {
            self.steps = s;
        }
        Ok(())
    }

    /// Whether this algorithm ever weighs the expert term.
    pub fn uses_expert(&self) -> bool {
        match self.algo {
            Algorithm::Sac => false,
            Algorithm::SacEo | Algorithm::Bco => true,
            Algorithm::SacEoFixed => self.epsilon.unwrap_or(0.0) > 0.0,
        }
    }

    /// Full validation; collects every violation.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let pos =
            |v: usize, name: &str, problems: &mut Vec<String>| {
                if v == 0 {
                    problems.push(format!("{name} must be positive"));
                }
            };
        pos(self.steps, "steps", &mut problems);
        pos(self.horizon, "horizon", &mut problems);
        pos(self.env_batch, "env_batch", &mut problems);
        pos(self.eval_interval, "eval_interval", &mut problems);
        pos(self.eval_episodes, "eval_episodes", &mut problems);
        pos(self.replay_capacity, "replay_capacity", &mut problems);
        pos(self.model_capacity, "model_capacity", &mut problems);
        if self.model_capacity >= self.replay_capacity {
            problems.push(format!(
                "model_capacity {} must be strictly smaller than replay_capacity {}",
                self.model_capacity, self.replay_capacity
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            problems.push(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            problems.push(format!("tau must be in (0, 1], got {}", self.tau));
        }
        for (lr, name) in [
            (self.lr_policy, "lr_policy"),
            (self.lr_critic, "lr_critic"),
            (self.lr_alpha, "lr_alpha"),
            (self.lr_model, "lr_model"),
            (self.init_alpha, "init_alpha"),
            (self.init_policy_std, "init_policy_std"),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                problems.push(format!("{name} must be positive and finite, got {lr}"));
            }
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            problems.push("hidden must list positive layer widths".into());
        }
        if self.model_hidden.is_empty() || self.model_hidden.iter().any(|&h| h == 0) {
            problems.push("model_hidden must list positive layer widths".into());
        }

        match self.algo {
            Algorithm::Sac => {}
            Algorithm::SacEo => {
                if self.beta == 0.0 {
                    problems.push(
                        "sac-eo with beta = 0 is the cloning-only corner; select 'bco' explicitly"
                            .into(),
                    );
                } else if !(self.beta > 0.0 && self.beta.is_finite()) {
                    problems.push(format!("beta must be positive and finite, got {}", self.beta));
                }
                if self.expert_path.is_none() {
                    problems.push("sac-eo requires expert_path".into());
                }
            }
            Algorithm::Bco => {
                if self.beta != 0.0 {
                    problems.push(format!("bco requires beta = 0, got {}", self.beta));
                }
                if self.expert_path.is_none() {
                    problems.push("bco requires expert_path".into());
                }
            }
            Algorithm::SacEoFixed => match self.epsilon {
                None => problems.push("sac-eo-fixed requires an epsilon value".into()),
                Some(e) if !(0.0..=1.0).contains(&e) => {
                    problems.push(format!("fixed epsilon must be in [0, 1], got {e}"))
                }
                Some(e) => {
                    if e > 0.0 && self.expert_path.is_none() {
                        problems.push("sac-eo-fixed with epsilon > 0 requires expert_path".into());
                    }
                }
            },
        }
        if self.uses_expert() {
            pos(self.expert_batch, "expert_batch", &mut problems);
            pos(self.model_batch, "model_batch", &mut problems);
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn schedule(&self) -> Result<EpsilonSchedule> {
        match self.algo {
            Algorithm::Sac => EpsilonSchedule::fixed(0.0),
            Algorithm::SacEo => EpsilonSchedule::adaptive(self.beta),
            Algorithm::Bco => EpsilonSchedule::adaptive(0.0),
            Algorithm::SacEoFixed => EpsilonSchedule::fixed(self.epsilon.unwrap_or(0.0)),
        }
    }

    pub fn session_spec(&self, state_dim: usize, action_dim: usize) -> Result<SessionSpec> {
        Ok(SessionSpec {
            state_dim,
            action_dim,
            hyper: AgentHyper {
                gamma: self.gamma,
                tau: self.tau,
                lr_policy: self.lr_policy,
                lr_critic: self.lr_critic,
                lr_alpha: self.lr_alpha,
                init_alpha: self.init_alpha,
                init_policy_std: self.init_policy_std,
                entropy_target: self
                    .entropy_target
                    .unwrap_or(-(action_dim as f64)),
                hidden: self.hidden.clone(),
            },
            schedule: self.schedule()?,
            model_hidden: self.model_hidden.clone(),
            lr_model: self.lr_model,
            replay_capacity: self.replay_capacity,
            model_capacity: self.model_capacity,
            master_seed: self.seed,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            env_name: self.env.clone(),
            total_steps: self.steps,
            horizon: self.horizon,
            warmup_steps: self.warmup_steps,
            env_batch: self.env_batch,
            expert_batch: self.expert_batch,
            model_batch: self.model_batch,
            model_epochs: self.model_epochs,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
            delta_on_full_expert: self.delta_on_full_expert,
            checkpoint_every_iters: self.checkpoint_every_iters,
        }
    }

    /// Output directory, derived when not set explicitly.
    pub fn resolved_out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| {
            PathBuf::from("runs").join(format!(
                "{}-{}-seed{}",
                self.algo.name(),
                self.env,
                self.seed
            ))
        })
    }

    /// Deterministic `key = value` snapshot of every resolved setting.
    pub fn resolved_snapshot(&self) -> String {
        let mut map = BTreeMap::new();
        let fmt_list =
            |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        map.insert("algo", self.algo.name().to_string());
        map.insert("env", self.env.clone());
        map.insert("seed", self.seed.to_string());
        map.insert("beta", format!("{}", self.beta));
        map.insert(
            "epsilon",
            self.epsilon.map(|e| format!("{e}")).unwrap_or_default(),
        );
        map.insert("gamma", format!("{}", self.gamma));
        map.insert("tau", format!("{}", self.tau));
        map.insert("lr_policy", format!("{}", self.lr_policy));
        map.insert("lr_critic", format!("{}", self.lr_critic));
        map.insert("lr_alpha", format!("{}", self.lr_alpha));
        map.insert("lr_model", format!("{}", self.lr_model));
        map.insert("init_alpha", format!("{}", self.init_alpha));
        map.insert("init_policy_std", format!("{}", self.init_policy_std));
        map.insert(
            "entropy_target",
            self.entropy_target
                .map(|e| format!("{e}"))
                .unwrap_or_default(),
        );
        map.insert("hidden", fmt_list(&self.hidden));
        map.insert("model_hidden", fmt_list(&self.model_hidden));
        map.insert("replay_capacity", self.replay_capacity.to_string());
        map.insert("model_capacity", self.model_capacity.to_string());
        map.insert("steps", self.steps.to_string());
        map.insert("horizon", self.horizon.to_string());
        map.insert("warmup_steps", self.warmup_steps.to_string());
        map.insert("env_batch", self.env_batch.to_string());
        map.insert("expert_batch", self.expert_batch.to_string());
        map.insert("model_batch", self.model_batch.to_string());
        map.insert("model_epochs", self.model_epochs.to_string());
        map.insert("eval_interval", self.eval_interval.to_string());
        map.insert("eval_episodes", self.eval_episodes.to_string());
        map.insert(
            "delta_on_full_expert",
            self.delta_on_full_expert.to_string(),
        );
        map.insert(
            "checkpoint_every_iters",
            self.checkpoint_every_iters.to_string(),
        );
        map.insert(
            "expert_path",
            self.expert_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        map.insert(
            "out",
            self.resolved_out_dir().display().to_string(),
        );
        map.insert(
            "expert_return_threshold",
            self.expert_return_threshold
                .map(|t| format!("{t}"))
                .unwrap_or_default(),
        );
        map.insert(
            "record_trajectories",
            self.record_trajectories.to_string(),
        );
        map.insert(
            "record_states",
            self.record_states
                .map(|n| n.to_string())
                .unwrap_or_default(),
        );
        let mut out = String::new();
        for (k, v) in map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
