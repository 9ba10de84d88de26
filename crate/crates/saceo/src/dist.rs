//! Probability heads: squashed diagonal Gaussian over actions, diagonal
//! Gaussian over next states.
//!
//! The policy head samples by reparameterization (`a = tanh(mean + std * noise)`)
//! and its log-density carries the tanh change-of-variables correction. The
//! state head exposes the negative log-likelihood used for dynamics-model
//! training. Both also expose the analytic derivative pieces the loss
//! assembly needs, so gradient flow stays exact end to end.

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Epsilon inside the tanh correction `log(1 - a^2 + eps)`.
pub const SQUASH_EPS: f64 = 1e-6;
/// tanh saturates to exactly 1.0 in f64 for |u| above ~19; actions are
/// pinched a few ulps inside so they stay strictly within (-1, 1).
const ACTION_LIMIT: f64 = 1.0 - 1e-15;

#[inline]
fn squash(u: f64) -> f64 {
    u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT)
}
pub const MODEL_LOGVAR_MIN: f64 = -10.0;
pub const MODEL_LOGVAR_MAX: f64 = 4.0;

const HALF_LOG_TAU: f64 = 0.918938533204672741780329736406; // 0.5 * ln(2*pi)

#[inline]
fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

#[inline]
fn clamp_passthrough(v: f64, lo: f64, hi: f64) -> f64 {
    if v > lo && v < hi {
        1.0
    } else {
        0.0
    }
}

/// Policy head: tanh-squashed diagonal Gaussian over `[-1, 1]^dim`.
#[derive(Debug, Clone)]
pub struct SquashedGaussianHead {
    pub mean: Vec<f64>,
    /// Raw log-std straight from the network; clamped on use.
    pub log_std_raw: Vec<f64>,
}

/// Derivatives of one reparameterized sample with respect to the head
/// parameters, holding the noise fixed.
#[derive(Debug, Clone)]
pub struct SampleGrads {
    pub da_dmean: Vec<f64>,
    pub da_dlogstd: Vec<f64>,
    pub dlogp_dmean: Vec<f64>,
    pub dlogp_dlogstd: Vec<f64>,
}

impl SquashedGaussianHead {
    /// Splits a policy-network output `[mean; log_std]` in half.
    pub fn from_net_output(out: &[f64]) -> Result<Self> {
        if out.len() % 2 != 0 || out.is_empty() {
            return Err(Error::Usage(format!(
                "policy head needs an even, nonzero output width, got {}",
                out.len()
            )));
        }
        let dim = out.len() / 2;
        Ok(SquashedGaussianHead {
            mean: out[..dim].to_vec(),
            log_std_raw: out[dim..].to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std_raw
            .iter()
            .map(|&r| clamp(r, LOG_STD_MIN, LOG_STD_MAX).exp())
            .collect()
    }

    fn check_finite(&self) -> Result<()> {
        if self.mean.iter().chain(&self.log_std_raw).any(|v| !v.is_finite()) {
            return Err(Error::numerical("policy head", "non-finite mean or log-std"));
        }
        Ok(())
    }

    /// Reparameterized sample: `a = tanh(mean + std * noise)`, plus the
    /// log-density of that action under the squashed Gaussian.
    pub fn sample(&self, noise: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_finite()?;
        if noise.len() != self.dim() {
            return Err(Error::Usage(format!(
                "noise dim {} does not match action dim {}",
                noise.len(),
                self.dim()
            )));
        }
        let mut action = Vec::with_capacity(self.dim());
        let mut log_prob = 0.0;
        for i in 0..self.dim() {
            let log_std = clamp(self.log_std_raw[i], LOG_STD_MIN, LOG_STD_MAX);
            let std = log_std.exp();
            let u = self.mean[i] + std * noise[i];
            let a = squash(u);
            action.push(a);
            log_prob += -0.5 * noise[i] * noise[i] - log_std - HALF_LOG_TAU
                - (1.0 - a * a + SQUASH_EPS).ln();
        }
        Ok((action, log_prob))
    }

    /// Same sample plus all derivative pieces, for loss assembly.
    pub fn sample_with_grads(&self, noise: &[f64]) -> Result<(Vec<f64>, f64, SampleGrads)> {
        let (action, log_prob) = self.sample(noise)?;
        let dim = self.dim();
        let mut grads = SampleGrads {
            da_dmean: Vec::with_capacity(dim),
            da_dlogstd: Vec::with_capacity(dim),
            dlogp_dmean: Vec::with_capacity(dim),
            dlogp_dlogstd: Vec::with_capacity(dim),
        };
        for i in 0..dim {
            let pass = clamp_passthrough(self.log_std_raw[i], LOG_STD_MIN, LOG_STD_MAX);
            let std = clamp(self.log_std_raw[i], LOG_STD_MIN, LOG_STD_MAX).exp();
            let a = action[i];
            let sech2 = 1.0 - a * a;
            let corr = 2.0 * a * sech2 / (sech2 + SQUASH_EPS);
            grads.da_dmean.push(sech2);
            grads.da_dlogstd.push(sech2 * std * noise[i] * pass);
            grads.dlogp_dmean.push(corr);
            grads.dlogp_dlogstd.push(pass * (corr * std * noise[i] - 1.0));
        }
        Ok((action, log_prob, grads))
    }

    /// tanh of the mean; used wherever a point action is required.
    pub fn deterministic_action(&self) -> Vec<f64> {
        self.mean.iter().map(|&m| squash(m)).collect()
    }

    /// Gradient of the deterministic action with respect to the mean.
    pub fn deterministic_action_grad(&self) -> Vec<f64> {
        self.mean
            .iter()
            .map(|&m| {
                let a = squash(m);
                1.0 - a * a
            })
            .collect()
    }

    /// Log-density of a given action strictly inside `(-1, 1)^dim`.
    pub fn log_prob_at(&self, action: &[f64]) -> Result<f64> {
        self.check_finite()?;
        if action.len() != self.dim() {
            return Err(Error::Usage("action dim mismatch".into()));
        }
        let mut log_prob = 0.0;
        for i in 0..self.dim() {
            let a = action[i];
            if a.abs() >= 1.0 {
                return Err(Error::Usage("action outside the open interval (-1, 1)".into()));
            }
            let log_std = clamp(self.log_std_raw[i], LOG_STD_MIN, LOG_STD_MAX);
            let std = log_std.exp();
            let u = 0.5 * ((1.0 + a) / (1.0 - a)).ln(); // atanh
            let z = (u - self.mean[i]) / std;
            log_prob += -0.5 * z * z - log_std - HALF_LOG_TAU - (1.0 - a * a + SQUASH_EPS).ln();
        }
        Ok(log_prob)
    }
}

/// Next-state head: diagonal Gaussian with log-variance parameterization.
#[derive(Debug, Clone)]
pub struct GaussianStateHead {
    pub mean: Vec<f64>,
    /// Raw log-variance straight from the network; clamped on use.
    pub log_var_raw: Vec<f64>,
}

impl GaussianStateHead {
    pub fn from_net_output(out: &[f64]) -> Result<Self> {
        if out.len() % 2 != 0 || out.is_empty() {
            return Err(Error::Usage(format!(
                "state head needs an even, nonzero output width, got {}",
                out.len()
            )));
        }
        let dim = out.len() / 2;
        Ok(GaussianStateHead {
            mean: out[..dim].to_vec(),
            log_var_raw: out[dim..].to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.log_var_raw
            .iter()
            .map(|&r| clamp(r, MODEL_LOGVAR_MIN, MODEL_LOGVAR_MAX).exp())
            .collect()
    }

    /// Negative log-density of `target` under `N(mean, diag(var))`.
    pub fn nll(&self, target: &[f64]) -> Result<f64> {
        if target.len() != self.dim() {
            return Err(Error::Usage(format!(
                "target dim {} does not match state dim {}",
                target.len(),
                self.dim()
            )));
        }
        if self.mean.iter().chain(&self.log_var_raw).any(|v| !v.is_finite()) {
            return Err(Error::numerical("gaussian nll", "non-finite head parameters"));
        }
        let mut nll = 0.0;
        for i in 0..self.dim() {
            let lv = clamp(self.log_var_raw[i], MODEL_LOGVAR_MIN, MODEL_LOGVAR_MAX);
            let diff = target[i] - self.mean[i];
            nll += 0.5 * (2.0 * HALF_LOG_TAU + lv + diff * diff * (-lv).exp());
        }
        Ok(nll)
    }

    /// Gradients of [`Self::nll`] with respect to `(mean, log_var_raw)`.
    pub fn nll_backward(&self, target: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let _ = self.nll(target)?;
        let dim = self.dim();
        let mut g_mean = Vec::with_capacity(dim);
        let mut g_logvar = Vec::with_capacity(dim);
        for i in 0..dim {
            let pass = clamp_passthrough(self.log_var_raw[i], MODEL_LOGVAR_MIN, MODEL_LOGVAR_MAX);
            let lv = clamp(self.log_var_raw[i], MODEL_LOGVAR_MIN, MODEL_LOGVAR_MAX);
            let diff = target[i] - self.mean[i];
            g_mean.push(-diff * (-lv).exp());
            g_logvar.push(0.5 * (1.0 - diff * diff * (-lv).exp()) * pass);
        }
        Ok((g_mean, g_logvar))
    }
}
