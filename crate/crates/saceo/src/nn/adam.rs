//! Adam optimizer over flat parameter buffers.

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second-moment accumulators for one parameter buffer.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(lr: f64, param_count: usize) -> Self {
        AdamState {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Restores a checkpointed state; lengths must match.
    pub fn restore(&mut self, step: u64, m: &[f64], v: &[f64]) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::Usage("adam state shape mismatch on restore".into()));
        }
        self.step = step;
        self.m.copy_from_slice(m);
        self.v.copy_from_slice(v);
        Ok(())
    }

    /// One Adam update with bias correction. Rejects non-finite gradients
    /// before touching the parameters or the moments.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Usage(format!(
                "adam step shape mismatch: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::numerical(
                "adam step",
                format!("non-finite gradient at index {pos}"),
            ));
        }
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut state = AdamState::new(1e-3, 3);
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        state.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut state = AdamState::new(1e-2, 1);
        let mut params = vec![0.0];
        let mut last = params[0];
        for _ in 0..50 {
            state.step(&mut params, &[2.5]).unwrap();
            assert!(params[0] < last, "positive gradient must decrease the parameter");
            last = params[0];
        }

        let mut state = AdamState::new(1e-2, 1);
        let mut params = vec![0.0];
        let mut last = params[0];
        for _ in 0..50 {
            state.step(&mut params, &[-0.3]).unwrap();
            assert!(params[0] > last);
            last = params[0];
        }
    }

    #[test]
    fn quadratic_loss_strictly_decreases_and_matches_recurrence() {
        // Loss (x - 3)^2 from x = 0, lr 0.1: compare against the textbook
        // recurrence run side by side, and require monotone descent.
        let lr = 0.1;
        let mut state = AdamState::new(lr, 1);
        let mut x = vec![0.0];

        let (mut m, mut v) = (0.0, 0.0);
        let mut x_ref = 0.0_f64;
        let mut last_loss = (x[0] - 3.0_f64).powi(2);
        for t in 1..=10 {
            let g = 2.0 * (x[0] - 3.0);
            state.step(&mut x, &[g]).unwrap();

            let g_ref = 2.0 * (x_ref - 3.0);
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g_ref;
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g_ref * g_ref;
            let m_hat = m / (1.0 - ADAM_BETA1.powi(t));
            let v_hat = v / (1.0 - ADAM_BETA2.powi(t));
            x_ref -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);

            assert!((x[0] - x_ref).abs() < 1e-15, "step {t}: {} vs {x_ref}", x[0]);
            let loss = (x[0] - 3.0_f64).powi(2);
            assert!(loss < last_loss, "loss must decrease every step");
            last_loss = loss;
        }
    }

    #[test]
    fn nan_gradient_aborts_without_touching_state() {
        let mut state = AdamState::new(1e-3, 2);
        let mut params = vec![1.0, 2.0];
        state.step(&mut params, &[0.1, 0.2]).unwrap();
        let params_before = params.clone();
        let (m_before, v_before) = (state.m.clone(), state.v.clone());
        let err = state.step(&mut params, &[f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
        assert_eq!(params, params_before);
        assert_eq!(state.m, m_before);
        assert_eq!(state.v, v_before);
        assert_eq!(state.step_count(), 1);
    }
}
