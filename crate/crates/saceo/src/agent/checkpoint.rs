//! Binary checkpoint: every quantity a run needs to continue bit-exactly.
//!
//! Parameters, optimizer moments, the temperature, both buffers in physical
//! layout, the mixing schedule, the dynamics ensemble with its normalizer,
//! all random-stream positions, and the metrics window accumulators. Floats
//! are stored as little-endian bit patterns, so save/load is exact.

use std::path::Path;

use crate::buffers::{ModelBuffer, ReplayBuffer, Transition};
use crate::dynamics::{DynamicsEnsemble, ModelNormalizer};
use crate::error::{Error, Result};
use crate::nn::{AdamState, MlpNet};
use crate::rng::{SeededRng, Stream};

use super::train::{TrainSession, WindowStats};
use super::{AgentHyper, AgentState, EpsilonSchedule};
use crate::buffers::ExpertDataset;

const MAGIC: &[u8] = b"SACEO-CKPT v1\n";

/// A deserialized run, ready to resume or to strip for its policy.
pub type SavedRun = TrainSession;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer {
            buf: Vec::with_capacity(1 << 20),
        }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.f64(*v);
        }
    }

    fn usizes(&mut self, vs: &[usize]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.u64(*v as u64);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                line: 0,
                msg: format!("truncated checkpoint at byte {}", self.pos),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.u64()? as usize);
        }
        Ok(out)
    }
}

fn write_adam(w: &mut Writer, adam: &AdamState) {
    w.u64(adam.step_count());
    w.f64(adam.learning_rate());
    let (m, v) = adam.moments();
    w.f64s(m);
    w.f64s(v);
}

fn read_adam(r: &mut Reader, param_count: usize) -> Result<AdamState> {
    let step = r.u64()?;
    let lr = r.f64()?;
    let m = r.f64s()?;
    let v = r.f64s()?;
    let mut adam = AdamState::new(lr, param_count);
    adam.restore(step, &m, &v)?;
    Ok(adam)
}

fn write_buffer(w: &mut Writer, buf: &ReplayBuffer) {
    let (items, head) = buf.raw_items();
    w.u64(buf.capacity() as u64);
    w.u64(items.len() as u64);
    w.u64(head as u64);
    for t in items {
        w.f64s(&t.state);
        w.f64s(&t.action);
        w.f64(t.reward);
        w.f64s(&t.next_state);
    }
}

fn read_buffer(r: &mut Reader) -> Result<ReplayBuffer> {
    let capacity = r.u64()? as usize;
    let len = r.u64()? as usize;
    let head = r.u64()? as usize;
    let mut items = Vec::with_capacity(len);
    for _ in 0..len {
        items.push(Transition {
            state: r.f64s()?,
            action: r.f64s()?,
            reward: r.f64()?,
            next_state: r.f64s()?,
        });
    }
    let mut buf = ReplayBuffer::new(capacity)?;
    buf.restore_raw(items, head);
    Ok(buf)
}

pub fn save_checkpoint(session: &TrainSession, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u64(session.master_seed);
    w.u64(session.agent.state_dim() as u64);
    w.u64(session.agent.action_dim() as u64);
    w.u64(session.steps_done as u64);
    w.u64(session.iters_done as u64);

    let h = &session.agent.hyper;
    w.f64(h.gamma);
    w.f64(h.tau);
    w.f64(h.lr_policy);
    w.f64(h.lr_critic);
    w.f64(h.lr_alpha);
    w.f64(h.init_alpha);
    w.f64(h.init_policy_std);
    w.f64(h.entropy_target);
    w.usizes(&h.hidden);

    match &session.schedule {
        EpsilonSchedule::Fixed(v) => {
            w.u8(0);
            w.f64(*v);
            w.f64(*v);
        }
        EpsilonSchedule::Adaptive { beta, current } => {
            w.u8(1);
            w.f64(*beta);
            w.f64(*current);
        }
    }

    w.f64(session.agent.log_alpha[0]);
    w.f64s(session.agent.policy.params());
    w.f64s(session.agent.critics[0].params());
    w.f64s(session.agent.critics[1].params());
    w.f64s(session.agent.targets[0].params());
    w.f64s(session.agent.targets[1].params());
    write_adam(&mut w, &session.agent.adam_policy);
    write_adam(&mut w, &session.agent.adam_critics[0]);
    write_adam(&mut w, &session.agent.adam_critics[1]);
    write_adam(&mut w, &session.agent.adam_alpha);

    match &session.ensemble {
        None => w.u8(0),
        Some(ens) => {
            w.u8(1);
            w.usizes(&session.model_hidden);
            w.f64(session.lr_model);
            w.f64s(ens.net(crate::dynamics::ModelId::One).params());
            w.f64s(ens.net(crate::dynamics::ModelId::Two).params());
            write_adam(&mut w, ens.adam(crate::dynamics::ModelId::One));
            write_adam(&mut w, ens.adam(crate::dynamics::ModelId::Two));
            let norm = ens.normalizer();
            w.f64s(&norm.in_mean);
            w.f64s(&norm.in_std);
            w.f64s(&norm.delta_mean);
            w.f64s(&norm.delta_std);
        }
    }

    for rng in [
        &session.rng_env,
        &session.rng_agent,
        &session.rng_model,
        &session.rng_expert,
        &session.rng_eval,
    ] {
        w.u128(rng.word_pos());
    }

    write_buffer(&mut w, &session.replay);
    write_buffer(&mut w, session.model_buffer.raw());

    let win = &session.window;
    w.f64(win.jq_sum);
    w.u64(win.jq_n);
    w.f64(win.jpi_sum);
    w.u64(win.jpi_n);
    w.f64(win.mse_sum);
    w.u64(win.mse_n);
    match session.last_delta {
        None => w.u8(0),
        Some(d) => {
            w.u8(1);
            w.f64(d);
        }
    }
    match session.last_model_nll {
        None => w.u8(0),
        Some([a, b]) => {
            w.u8(1);
            w.f64(a);
            w.f64(b);
        }
    }

    std::fs::write(path, &w.buf).map_err(|e| Error::io(path, e))
}

/// Rebuilds the full session. The expert dataset is external data and must
/// be re-supplied when the expert term is active.
pub fn load_checkpoint(path: &Path, expert: Option<ExpertDataset>) -> Result<SavedRun> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        data: &data,
        pos: 0,
        path,
    };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "not a checkpoint file (bad magic)".into(),
        });
    }
    let master_seed = r.u64()?;
    let state_dim = r.u64()? as usize;
    let action_dim = r.u64()? as usize;
    let steps_done = r.u64()? as usize;
    let iters_done = r.u64()? as usize;

    let hyper = AgentHyper {
        gamma: r.f64()?,
        tau: r.f64()?,
        lr_policy: r.f64()?,
        lr_critic: r.f64()?,
        lr_alpha: r.f64()?,
        init_alpha: r.f64()?,
        init_policy_std: r.f64()?,
        entropy_target: r.f64()?,
        hidden: r.usizes()?,
    };

    let schedule = match r.u8()? {
        0 => {
            let v = r.f64()?;
            let _current = r.f64()?;
            EpsilonSchedule::Fixed(v)
        }
        1 => {
            let beta = r.f64()?;
            let current = r.f64()?;
            EpsilonSchedule::Adaptive { beta, current }
        }
        other => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("unknown schedule tag {other}"),
            })
        }
    };

    let log_alpha = r.f64()?;
    // Fresh nets with a throwaway stream; every parameter is overwritten.
    let mut scratch_rng = SeededRng::new(0, Stream::Agent);
    let mut agent = AgentState::new(state_dim, action_dim, hyper, &mut scratch_rng)?;
    let set = |net: &mut MlpNet, vals: Vec<f64>| net.set_params(&vals);
    set(&mut agent.policy, r.f64s()?)?;
    set(&mut agent.critics[0], r.f64s()?)?;
    set(&mut agent.critics[1], r.f64s()?)?;
    set(&mut agent.targets[0], r.f64s()?)?;
    set(&mut agent.targets[1], r.f64s()?)?;
    agent.log_alpha = vec![log_alpha];
    agent.adam_policy = read_adam(&mut r, agent.policy.param_count())?;
    agent.adam_critics[0] = read_adam(&mut r, agent.critics[0].param_count())?;
    agent.adam_critics[1] = read_adam(&mut r, agent.critics[1].param_count())?;
    agent.adam_alpha = read_adam(&mut r, 1)?;

    let mut model_hidden = Vec::new();
    let mut lr_model = 0.0;
    let ensemble = match r.u8()? {
        0 => None,
        _ => {
            model_hidden = r.usizes()?;
            lr_model = r.f64()?;
            let mut ens = DynamicsEnsemble::new(
                state_dim,
                action_dim,
                &model_hidden,
                lr_model,
                &mut scratch_rng,
            )?;
            let p1 = r.f64s()?;
            let p2 = r.f64s()?;
            ens.net_mut(crate::dynamics::ModelId::One).set_params(&p1)?;
            ens.net_mut(crate::dynamics::ModelId::Two).set_params(&p2)?;
            *ens.adam_mut(crate::dynamics::ModelId::One) =
                read_adam(&mut r, p1.len())?;
            *ens.adam_mut(crate::dynamics::ModelId::Two) =
                read_adam(&mut r, p2.len())?;
            ens.set_normalizer(ModelNormalizer {
                in_mean: r.f64s()?,
                in_std: r.f64s()?,
                delta_mean: r.f64s()?,
                delta_std: r.f64s()?,
            })?;
            Some(ens)
        }
    };

    let mut rngs = Vec::with_capacity(5);
    for stream in [
        Stream::Env,
        Stream::Agent,
        Stream::Model,
        Stream::Expert,
        Stream::Eval,
    ] {
        let mut rng = SeededRng::new(master_seed, stream);
        rng.set_word_pos(r.u128()?);
        rngs.push(rng);
    }
    let mut rngs = rngs.into_iter();

    let replay = read_buffer(&mut r)?;
    let model_raw = read_buffer(&mut r)?;
    let mut model_buffer = ModelBuffer::new(model_raw.capacity())?;
    let (items, head) = model_raw.raw_items();
    model_buffer.raw_mut().restore_raw(items.to_vec(), head);

    let window = WindowStats {
        jq_sum: r.f64()?,
        jq_n: r.u64()?,
        jpi_sum: r.f64()?,
        jpi_n: r.u64()?,
        mse_sum: r.f64()?,
        mse_n: r.u64()?,
    };
    let last_delta = match r.u8()? {
        0 => None,
        _ => Some(r.f64()?),
    };
    let last_model_nll = match r.u8()? {
        0 => None,
        _ => Some([r.f64()?, r.f64()?]),
    };

    let session = TrainSession {
        agent,
        ensemble,
        schedule,
        replay,
        model_buffer,
        expert,
        rng_env: rngs.next().unwrap(),
        rng_agent: rngs.next().unwrap(),
        rng_model: rngs.next().unwrap(),
        rng_expert: rngs.next().unwrap(),
        rng_eval: rngs.next().unwrap(),
        master_seed,
        steps_done,
        iters_done,
        window,
        last_delta,
        last_model_nll,
        model_hidden,
        lr_model,
    };
    // A missing expert only matters if the session is trained further;
    // `train` validates that, so policy-only consumers can load anything.
    Ok(session)
}
