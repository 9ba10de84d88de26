//! Two-model probabilistic forward-dynamics ensemble.
//!
//! Each model maps a standardized `(state, action)` input to a diagonal
//! Gaussian over the state *delta*; predictions add the current state back.
//! The two models see identical batches in identical order every round and
//! differ only through their random initializations, which is what makes
//! their disagreement on expert states a usable reliability signal.

use crate::buffers::ModelBuffer;
use crate::dist::GaussianStateHead;
use crate::error::{Error, Result};
use crate::nn::{AdamState, MlpGradients, MlpNet, MlpSpec};
use crate::rng::SeededRng;

const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelId {
    One,
    Two,
}

impl ModelId {
    pub const BOTH: [ModelId; 2] = [ModelId::One, ModelId::Two];

    fn label(self) -> &'static str {
        match self {
            ModelId::One => "model 1",
            ModelId::Two => "model 2",
        }
    }
}

/// Standardization statistics for model inputs `(s, a)` and regression
/// targets `s' - s`, refreshed from the model buffer at every training call.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelNormalizer {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub delta_mean: Vec<f64>,
    pub delta_std: Vec<f64>,
}

impl ModelNormalizer {
    fn identity(in_dim: usize, state_dim: usize) -> Self {
        ModelNormalizer {
            in_mean: vec![0.0; in_dim],
            in_std: vec![1.0; in_dim],
            delta_mean: vec![0.0; state_dim],
            delta_std: vec![1.0; state_dim],
        }
    }

    fn fit(buffer: &ModelBuffer, in_dim: usize, state_dim: usize) -> Self {
        let n = buffer.len() as f64;
        let mut in_mean = vec![0.0; in_dim];
        let mut delta_mean = vec![0.0; state_dim];
        for i in 0..buffer.len() {
            let (s, a, s2) = buffer.get_ordered(i);
            for (j, v) in s.iter().chain(a.iter()).enumerate() {
                in_mean[j] += v;
            }
            for j in 0..state_dim {
                delta_mean[j] += s2[j] - s[j];
            }
        }
        for m in in_mean.iter_mut().chain(delta_mean.iter_mut()) {
            *m /= n;
        }
        let mut in_var = vec![0.0; in_dim];
        let mut delta_var = vec![0.0; state_dim];
        for i in 0..buffer.len() {
            let (s, a, s2) = buffer.get_ordered(i);
            for (j, v) in s.iter().chain(a.iter()).enumerate() {
                let d = v - in_mean[j];
                in_var[j] += d * d;
            }
            for j in 0..state_dim {
                let d = (s2[j] - s[j]) - delta_mean[j];
                delta_var[j] += d * d;
            }
        }
        let floor = |v: &f64| (v / n).sqrt().max(STD_FLOOR);
        ModelNormalizer {
            in_std: in_var.iter().map(floor).collect(),
            delta_std: delta_var.iter().map(floor).collect(),
            in_mean,
            delta_mean,
        }
    }

    #[inline]
    fn write_normalized(&self, state: &[f64], action: &[f64], out: &mut Vec<f64>) {
        for (j, v) in state.iter().chain(action.iter()).enumerate() {
            out.push((v - self.in_mean[j]) / self.in_std[j]);
        }
    }
}

/// Per-epoch mean negative log-likelihood for both models.
#[derive(Debug, Clone, Default)]
pub struct ModelTrainingReport {
    pub epoch_nll: Vec<[f64; 2]>,
}

impl ModelTrainingReport {
    pub fn final_nll(&self) -> Option<[f64; 2]> {
        self.epoch_nll.last().copied()
    }
}

pub struct DynamicsEnsemble {
    state_dim: usize,
    action_dim: usize,
    nets: [MlpNet; 2],
    adams: [AdamState; 2],
    normalizer: ModelNormalizer,
}

impl DynamicsEnsemble {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        learning_rate: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let spec = MlpSpec::new(state_dim + action_dim, hidden, 2 * state_dim);
        let net1 = MlpNet::new(&spec, rng)?;
        let net2 = MlpNet::new(&spec, rng)?;
        let adam1 = AdamState::new(learning_rate, net1.param_count());
        let adam2 = AdamState::new(learning_rate, net2.param_count());
        Ok(DynamicsEnsemble {
            state_dim,
            action_dim,
            nets: [net1, net2],
            adams: [adam1, adam2],
            normalizer: ModelNormalizer::identity(state_dim + action_dim, state_dim),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn net(&self, id: ModelId) -> &MlpNet {
        &self.nets[id as usize]
    }

    pub fn net_mut(&mut self, id: ModelId) -> &mut MlpNet {
        &mut self.nets[id as usize]
    }

    pub fn adam(&self, id: ModelId) -> &AdamState {
        &self.adams[id as usize]
    }

    pub fn adam_mut(&mut self, id: ModelId) -> &mut AdamState {
        &mut self.adams[id as usize]
    }

    pub fn normalizer(&self) -> &ModelNormalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: ModelNormalizer) -> Result<()> {
        let in_dim = self.state_dim + self.action_dim;
        if normalizer.in_mean.len() != in_dim
            || normalizer.in_std.len() != in_dim
            || normalizer.delta_mean.len() != self.state_dim
            || normalizer.delta_std.len() != self.state_dim
        {
            return Err(Error::Usage("normalizer shape mismatch".into()));
        }
        self.normalizer = normalizer;
        Ok(())
    }

    fn check_dims(&self, state: &[f64], action: &[f64]) -> Result<()> {
        if state.len() != self.state_dim || action.len() != self.action_dim {
            return Err(Error::Usage(format!(
                "dynamics input dims ({}, {}) do not match ({}, {})",
                state.len(),
                action.len(),
                self.state_dim,
                self.action_dim
            )));
        }
        Ok(())
    }

    /// Mean of the predictive Gaussian over the next state.
    pub fn predict_mean(&self, id: ModelId, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(state, action)?;
        let mut x = Vec::with_capacity(state.len() + action.len());
        self.normalizer.write_normalized(state, action, &mut x);
        let out = self.nets[id as usize].apply(&x)?;
        let head = GaussianStateHead::from_net_output(&out)?;
        Ok((0..self.state_dim)
            .map(|j| {
                state[j] + self.normalizer.delta_mean[j] + self.normalizer.delta_std[j] * head.mean[j]
            })
            .collect())
    }

    /// Prediction plus the gradient of `upstream . prediction` with respect
    /// to the raw action. Model parameters receive no gradient here.
    pub fn predict_mean_with_action_grad(
        &self,
        id: ModelId,
        state: &[f64],
        action: &[f64],
        upstream: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dims(state, action)?;
        if upstream.len() != self.state_dim {
            return Err(Error::Usage("upstream gradient dim mismatch".into()));
        }
        let mut x = Vec::with_capacity(state.len() + action.len());
        self.normalizer.write_normalized(state, action, &mut x);
        let net = &self.nets[id as usize];
        let tape = net.forward(&x)?;
        let out = tape.output();
        let head = GaussianStateHead::from_net_output(out)?;
        let prediction: Vec<f64> = (0..self.state_dim)
            .map(|j| {
                state[j] + self.normalizer.delta_mean[j] + self.normalizer.delta_std[j] * head.mean[j]
            })
            .collect();

        // Only the delta-mean outputs carry upstream signal, scaled by the
        // target standardization.
        let mut out_grad = vec![0.0; out.len()];
        for j in 0..self.state_dim {
            out_grad[j] = upstream[j] * self.normalizer.delta_std[j];
        }
        let mut input_grad = vec![0.0; x.len()];
        net.backward_into(&tape, &out_grad, None, Some(&mut input_grad))?;
        let action_grad = (0..self.action_dim)
            .map(|k| {
                let j = self.state_dim + k;
                input_grad[j] / self.normalizer.in_std[j]
            })
            .collect();
        Ok((prediction, action_grad))
    }

    /// Maximum-likelihood training on the model buffer. Both models are
    /// updated on the same shuffled batch sequence each epoch.
    pub fn train(
        &mut self,
        buffer: &ModelBuffer,
        epochs: usize,
        batch_size: usize,
        rng: &mut SeededRng,
    ) -> Result<ModelTrainingReport> {
        if buffer.is_empty() {
            return Err(Error::Usage("model buffer is empty".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("model batch size must be positive".into()));
        }
        let mut report = ModelTrainingReport::default();
        if epochs == 0 {
            return Ok(report);
        }
        self.normalizer = ModelNormalizer::fit(buffer, self.state_dim + self.action_dim, self.state_dim);

        let n = buffer.len();
        let mut indices: Vec<usize> = (0..n).collect();
        let mut grads = [
            MlpGradients::zeros_like(&self.nets[0]),
            MlpGradients::zeros_like(&self.nets[1]),
        ];
        for _ in 0..epochs {
            rng.shuffle(&mut indices);
            let mut nll_sum = [0.0_f64; 2];
            for chunk in indices.chunks(batch_size) {
                let batch = chunk.len();
                let mut inputs = Vec::with_capacity(batch * (self.state_dim + self.action_dim));
                let mut targets = Vec::with_capacity(batch * self.state_dim);
                for &i in chunk {
                    let (s, a, s2) = buffer.get_ordered(i);
                    self.normalizer.write_normalized(s, a, &mut inputs);
                    for j in 0..self.state_dim {
                        targets.push(
                            (s2[j] - s[j] - self.normalizer.delta_mean[j])
                                / self.normalizer.delta_std[j],
                        );
                    }
                }
                for id in ModelId::BOTH {
                    let m = id as usize;
                    let net = &self.nets[m];
                    let tape = net.forward_batch(&inputs, batch)?;
                    let out = tape.output();
                    let mut out_grad = vec![0.0; out.len()];
                    let mut nll = 0.0;
                    let width = 2 * self.state_dim;
                    for b in 0..batch {
                        let head = GaussianStateHead::from_net_output(&out[b * width..(b + 1) * width])?;
                        let target = &targets[b * self.state_dim..(b + 1) * self.state_dim];
                        nll += head.nll(target)?;
                        let (g_mean, g_logvar) = head.nll_backward(target)?;
                        let row = &mut out_grad[b * width..(b + 1) * width];
                        for j in 0..self.state_dim {
                            row[j] = g_mean[j] / batch as f64;
                            row[self.state_dim + j] = g_logvar[j] / batch as f64;
                        }
                    }
                    let mean_nll = nll / batch as f64;
                    if !mean_nll.is_finite() {
                        return Err(Error::numerical(
                            id.label(),
                            format!("non-finite training NLL {mean_nll}"),
                        ));
                    }
                    nll_sum[m] += nll;
                    grads[m].fill_zero();
                    net.backward_into(&tape, &out_grad, Some(&mut grads[m]), None)?;
                    self.adams[m]
                        .step(self.nets[m].params_mut(), grads[m].as_slice())
                        .map_err(|e| match e {
                            Error::Numerical { detail, .. } => Error::numerical(id.label(), detail),
                            other => other,
                        })?;
                }
            }
            report
                .epoch_nll
                .push([nll_sum[0] / n as f64, nll_sum[1] / n as f64]);
        }
        Ok(report)
    }

    /// Mean squared l2 deviation between predicted next states and targets
    /// over a batch, plus the gradient of that mean with respect to the raw
    /// actions. Model parameters receive no gradient.
    pub fn expert_mse_and_action_grads(
        &self,
        id: ModelId,
        states: &[f64],
        actions: &[f64],
        next_targets: &[f64],
        batch: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let (sd, ad) = (self.state_dim, self.action_dim);
        if batch == 0
            || states.len() != batch * sd
            || actions.len() != batch * ad
            || next_targets.len() != batch * sd
        {
            return Err(Error::Usage("expert mse batch shape mismatch".into()));
        }
        let mut inputs = Vec::with_capacity(batch * (sd + ad));
        for b in 0..batch {
            self.normalizer
                .write_normalized(&states[b * sd..(b + 1) * sd], &actions[b * ad..(b + 1) * ad], &mut inputs);
        }
        let net = &self.nets[id as usize];
        let tape = net.forward_batch(&inputs, batch)?;
        let out = tape.output();
        let width = 2 * sd;
        let mut out_grad = vec![0.0; out.len()];
        let mut mse_sum = 0.0;
        for b in 0..batch {
            let row = &out[b * width..(b + 1) * width];
            let head = GaussianStateHead::from_net_output(row)?;
            for j in 0..sd {
                let predicted = states[b * sd + j]
                    + self.normalizer.delta_mean[j]
                    + self.normalizer.delta_std[j] * head.mean[j];
                let diff = predicted - next_targets[b * sd + j];
                mse_sum += diff * diff;
                out_grad[b * width + j] =
                    2.0 * diff * self.normalizer.delta_std[j] / batch as f64;
            }
        }
        let mut input_grad = vec![0.0; inputs.len()];
        net.backward_into(&tape, &out_grad, None, Some(&mut input_grad))?;
        let mut action_grads = vec![0.0; batch * ad];
        for b in 0..batch {
            for k in 0..ad {
                let j = sd + k;
                action_grads[b * ad + k] = input_grad[b * (sd + ad) + j] / self.normalizer.in_std[j];
            }
        }
        Ok((mse_sum / batch as f64, action_grads))
    }

    /// Maximum l2 disagreement between the two models' next-state means over
    /// the given states, each paired with the policy's point action there.
    pub fn discrepancy_max<'a, F>(
        &self,
        states: impl IntoIterator<Item = &'a [f64]>,
        mut policy_action: F,
    ) -> Result<f64>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let mut max = f64::NEG_INFINITY;
        let mut seen = false;
        for s in states {
            seen = true;
            let a = policy_action(s)?;
            let p1 = self.predict_mean(ModelId::One, s, &a)?;
            let p2 = self.predict_mean(ModelId::Two, s, &a)?;
            let d2: f64 = p1
                .iter()
                .zip(&p2)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            max = max.max(d2.sqrt());
        }
        if !seen {
            return Err(Error::Usage(
                "discrepancy requires at least one expert state".into(),
            ));
        }
        Ok(max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn small_ensemble(rng: &mut SeededRng) -> DynamicsEnsemble {
        DynamicsEnsemble::new(2, 1, &[16, 16], 1e-3, rng).unwrap()
    }

    #[test]
    fn untrained_prediction_is_repeatable() {
        let mut rng = SeededRng::new(1, Stream::Model);
        let ens = small_ensemble(&mut rng);
        let s = [0.3, -0.7];
        let a = [0.5];
        let p1 = ens.predict_mean(ModelId::One, &s, &a).unwrap();
        let p2 = ens.predict_mean(ModelId::One, &s, &a).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn copied_models_have_zero_discrepancy() {
        let mut rng = SeededRng::new(2, Stream::Model);
        let mut ens = small_ensemble(&mut rng);
        let params = ens.net(ModelId::One).params().to_vec();
        ens.net_mut(ModelId::Two).set_params(&params).unwrap();
        let states = [vec![0.1, 0.2], vec![-0.5, 0.9]];
        let delta = ens
            .discrepancy_max(states.iter().map(Vec::as_slice), |_| Ok(vec![0.3]))
            .unwrap();
        assert_eq!(delta, 0.0);
    }

    #[test]
    fn hand_pinned_mean_difference_gives_its_l2_norm() {
        let mut rng = SeededRng::new(3, Stream::Model);
        let mut ens = DynamicsEnsemble::new(3, 1, &[4], 1e-3, &mut rng).unwrap();
        // Zero both nets, then bias model 2's delta-mean head to (3, 4, 0).
        for id in ModelId::BOTH {
            let n = ens.net_mut(id);
            let count = n.param_count();
            n.params_mut()[..count].fill(0.0);
        }
        let fb = ens.net(ModelId::Two).final_bias_range();
        ens.net_mut(ModelId::Two).params_mut()[fb.start] = 3.0;
        ens.net_mut(ModelId::Two).params_mut()[fb.start + 1] = 4.0;
        let state = [0.0, 0.0, 0.0];
        let delta = ens
            .discrepancy_max(std::iter::once(&state[..]), |_| Ok(vec![0.0]))
            .unwrap();
        assert!((delta - 5.0).abs() < 1e-12, "delta {delta}");
    }

    #[test]
    fn discrepancy_is_monotone_over_supersets() {
        let mut rng = SeededRng::new(4, Stream::Model);
        let ens = small_ensemble(&mut rng);
        let states: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.53).cos()])
            .collect();
        let policy = |_: &[f64]| Ok(vec![0.1]);
        let full = ens
            .discrepancy_max(states.iter().map(Vec::as_slice), policy)
            .unwrap();
        for k in 1..states.len() {
            let sub = ens
                .discrepancy_max(states[..k].iter().map(Vec::as_slice), policy)
                .unwrap();
            assert!(full >= sub);
        }
    }

    #[test]
    fn empty_state_set_is_a_usage_error() {
        let mut rng = SeededRng::new(5, Stream::Model);
        let ens = small_ensemble(&mut rng);
        assert!(matches!(
            ens.discrepancy_max(std::iter::empty(), |_| Ok(vec![0.0]))
                .unwrap_err(),
            Error::Usage(_)
        ));
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let mut rng = SeededRng::new(6, Stream::Model);
        let mut ens = small_ensemble(&mut rng);
        let mut buffer = ModelBuffer::new(10).unwrap();
        buffer.push(vec![0.0, 0.0], vec![0.0], vec![0.1, 0.1]);
        let before: Vec<Vec<f64>> = ModelId::BOTH
            .iter()
            .map(|&id| ens.net(id).params().to_vec())
            .collect();
        let report = ens.train(&buffer, 0, 4, &mut rng).unwrap();
        assert!(report.epoch_nll.is_empty());
        for (id, want) in ModelId::BOTH.iter().zip(&before) {
            assert_eq!(ens.net(*id).params(), want.as_slice());
        }
    }

    #[test]
    fn constant_dynamics_are_learned_quickly() {
        // s' = s everywhere: after a few epochs the held-out prediction
        // error must collapse.
        let mut rng = SeededRng::new(7, Stream::Model);
        let mut ens = DynamicsEnsemble::new(2, 1, &[16, 16], 1e-3, &mut rng).unwrap();
        let mut buffer = ModelBuffer::new(4096).unwrap();
        for _ in 0..2000 {
            let s = vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
            let a = vec![rng.uniform_in(-1.0, 1.0)];
            buffer.push(s.clone(), a, s.clone());
        }
        ens.train(&buffer, 10, 16, &mut rng).unwrap();
        let n = 200;
        let mut mean_err = [0.0_f64; 2];
        for _ in 0..n {
            let s = vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
            let a = vec![rng.uniform_in(-1.0, 1.0)];
            let p = ens.predict_mean(ModelId::One, &s, &a).unwrap();
            for j in 0..2 {
                mean_err[j] += (p[j] - s[j]).abs();
            }
        }
        for e in mean_err {
            let mean = e / n as f64;
            assert!(mean < 1e-3, "held-out mean error {mean}");
        }
    }

    #[test]
    fn training_nll_is_mostly_non_increasing() {
        let mut rng = SeededRng::new(8, Stream::Model);
        let mut ens = small_ensemble(&mut rng);
        let mut buffer = ModelBuffer::new(4096).unwrap();
        for _ in 0..1000 {
            let s = vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
            let a = vec![rng.uniform_in(-1.0, 1.0)];
            let s2 = vec![0.9 * s[0] + 0.1 * a[0], 0.8 * s[1]];
            buffer.push(s, a, s2);
        }
        let report = ens.train(&buffer, 10, 128, &mut rng).unwrap();
        for m in 0..2 {
            let curve: Vec<f64> = report.epoch_nll.iter().map(|e| e[m]).collect();
            let decreases = curve
                .windows(2)
                .filter(|w| w[1] <= w[0] + 1e-9)
                .count();
            assert!(
                decreases >= curve.len() - 2,
                "model {m} NLL curve not mostly decreasing: {curve:?}"
            );
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let run = || {
            let mut rng = SeededRng::new(9, Stream::Model);
            let mut ens = small_ensemble(&mut rng);
            let mut buffer = ModelBuffer::new(512).unwrap();
            for _ in 0..300 {
                let s = vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
                let a = vec![rng.uniform_in(-1.0, 1.0)];
                let s2 = vec![s[0] + 0.05 * a[0], s[1] - 0.02];
                buffer.push(s, a, s2);
            }
            ens.train(&buffer, 3, 64, &mut rng).unwrap();
            (
                ens.net(ModelId::One).params().to_vec(),
                ens.net(ModelId::Two).params().to_vec(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn action_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(10, Stream::Model);
        let ens = small_ensemble(&mut rng);
        let s = [0.4, -0.3];
        let a = [0.2];
        // Loss: || prediction ||^2, upstream = 2 * prediction.
        let p = ens.predict_mean(ModelId::One, &s, &a).unwrap();
        let upstream: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        let (_, grad) = ens
            .predict_mean_with_action_grad(ModelId::One, &s, &a, &upstream)
            .unwrap();
        let h = 1e-5;
        let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let up = norm2(&ens.predict_mean(ModelId::One, &s, &[a[0] + h]).unwrap());
        let down = norm2(&ens.predict_mean(ModelId::One, &s, &[a[0] - h]).unwrap());
        let numeric = (up - down) / (2.0 * h);
        let denom = grad[0].abs().max(numeric.abs()).max(1e-6);
        assert!(
            (grad[0] - numeric).abs() / denom < 1e-4,
            "analytic {}, numeric {numeric}",
            grad[0]
        );
    }
}
