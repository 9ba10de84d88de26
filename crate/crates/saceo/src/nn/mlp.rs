//! Multilayer perceptron with exact reverse-mode gradients.
//!
//! The default shape used everywhere in this crate is two hidden layers
//! with layer normalization followed by tanh after the first layer, ReLU
//! on later hidden layers, and a linear output. All math is `f64`.
//!
//! Parameters live in one flat buffer laid out as
//! `[W0, b0, W1, b1, ..., ln_gain, ln_bias]` with each weight matrix stored
//! input-major (`w[i * out + o]`), which keeps the hot loops streaming over
//! contiguous memory. Gradients use the identical layout, so optimizer
//! steps, finite-difference probes and checkpointing all index the same way.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

/// Shape of an [`MlpNet`] before construction.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    /// Layer normalization + tanh after the first hidden layer; later hidden
    /// layers use ReLU. Without it every hidden layer is ReLU.
    pub layernorm_tanh_first: bool,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            layernorm_tanh_first: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("mlp dims must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("mlp hidden widths must be positive".into()));
        }
        if self.layernorm_tanh_first && self.hidden.is_empty() {
            return Err(Error::Config(
                "layer norm requires at least one hidden layer".into(),
            ));
        }
        Ok(())
    }
}

/// Dense network with flat parameter storage.
#[derive(Debug, Clone)]
pub struct MlpNet {
    dims: Vec<usize>,
    acts: Vec<Activation>,
    layernorm: bool,
    params: Vec<f64>,
    w_off: Vec<usize>,
    b_off: Vec<usize>,
    ln_gain_off: usize,
    ln_bias_off: usize,
    version: u64,
}

/// Parameter gradients, same flat layout as [`MlpNet::params`].
#[derive(Debug, Clone)]
pub struct MlpGradients {
    data: Vec<f64>,
}

impl MlpGradients {
    pub fn zeros_like(net: &MlpNet) -> Self {
        MlpGradients {
            data: vec![0.0; net.param_count()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(0.0);
    }

    /// `self += scale * other`, used to mix loss terms.
    pub fn add_scaled(&mut self, other: &MlpGradients, scale: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Cached forward activations for one batch; consumed by [`MlpNet::backward_into`].
#[derive(Debug, Clone)]
pub struct GradientTape {
    batch: usize,
    net_version: u64,
    inputs: Vec<f64>,
    /// Post-activation values per layer, each `batch * dims[l + 1]`.
    post: Vec<Vec<f64>>,
    /// First-layer normalized values (x-hat), when layer norm is active.
    ln_normed: Vec<f64>,
    /// Per-row 1 / sqrt(var + eps) for the first layer.
    ln_inv_std: Vec<f64>,
}

impl GradientTape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Output of the forward pass this tape was recorded on.
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("tape has at least one layer")
    }
}

impl MlpNet {
    /// Fan-in-scaled uniform initialization; biases zero, layer-norm
    /// gain one and bias zero.
    pub fn new(spec: &MlpSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let mut dims = Vec::with_capacity(spec.hidden.len() + 2);
        dims.push(spec.input_dim);
        dims.extend_from_slice(&spec.hidden);
        dims.push(spec.output_dim);

        let n_layers = dims.len() - 1;
        let mut acts = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            if l + 1 == n_layers {
                acts.push(Activation::Linear);
            } else if l == 0 && spec.layernorm_tanh_first {
                acts.push(Activation::Tanh);
            } else {
                acts.push(Activation::Relu);
            }
        }

        let mut w_off = Vec::with_capacity(n_layers);
        let mut b_off = Vec::with_capacity(n_layers);
        let mut cursor = 0usize;
        for l in 0..n_layers {
            w_off.push(cursor);
            cursor += dims[l] * dims[l + 1];
            b_off.push(cursor);
            cursor += dims[l + 1];
        }
        let ln_gain_off = cursor;
        if spec.layernorm_tanh_first {
            cursor += dims[1];
        }
        let ln_bias_off = cursor;
        if spec.layernorm_tanh_first {
            cursor += dims[1];
        }

        let mut params = vec![0.0; cursor];
        for l in 0..n_layers {
            let bound = 1.0 / (dims[l] as f64).sqrt();
            for w in &mut params[w_off[l]..w_off[l] + dims[l] * dims[l + 1]] {
                *w = rng.uniform_in(-bound, bound);
            }
        }
        if spec.layernorm_tanh_first {
            for g in &mut params[ln_gain_off..ln_gain_off + dims[1]] {
                *g = 1.0;
            }
        }

        Ok(MlpNet {
            dims,
            acts,
            layernorm: spec.layernorm_tanh_first,
            params,
            w_off,
            b_off,
            ln_gain_off,
            ln_bias_off,
            version: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates existing tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "set_params length {} does not match parameter count {}",
                values.len(),
                self.params.len()
            )));
        }
        self.version += 1;
        self.params.copy_from_slice(values);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn layer_count(&self) -> usize {
        self.acts.len()
    }

    pub fn weight_range(&self, layer: usize) -> Range<usize> {
        self.w_off[layer]..self.w_off[layer] + self.dims[layer] * self.dims[layer + 1]
    }

    pub fn bias_range(&self, layer: usize) -> Range<usize> {
        self.b_off[layer]..self.b_off[layer] + self.dims[layer + 1]
    }

    pub fn final_weight_range(&self) -> Range<usize> {
        self.weight_range(self.layer_count() - 1)
    }

    pub fn final_bias_range(&self) -> Range<usize> {
        self.bias_range(self.layer_count() - 1)
    }

    /// Output without a tape. `x` is `batch * input_dim` row-major.
    pub fn apply_batch(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(x, batch)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in 0..self.layer_count() {
            self.affine(&cur, batch, l, &mut next);
            if l == 0 && self.layernorm {
                self.layernorm_forward(&mut next, batch, None);
            }
            let act = self.acts[l];
            for v in next.iter_mut() {
                *v = act.apply(*v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply_batch(x, 1)
    }

    /// Forward pass recording a tape for [`Self::backward_into`].
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<GradientTape> {
        self.check_input(x, batch)?;
        let mut post = Vec::with_capacity(self.layer_count());
        let mut ln_normed = Vec::new();
        let mut ln_inv_std = Vec::new();
        let mut cur = x.to_vec();
        for l in 0..self.layer_count() {
            let mut z = Vec::new();
            self.affine(&cur, batch, l, &mut z);
            if l == 0 && self.layernorm {
                ln_inv_std = vec![0.0; batch];
                self.layernorm_forward(&mut z, batch, Some((&mut ln_normed, &mut ln_inv_std)));
            }
            let act = self.acts[l];
            for v in z.iter_mut() {
                *v = act.apply(*v);
            }
            post.push(z.clone());
            cur = z;
        }
        Ok(GradientTape {
            batch,
            net_version: self.version,
            inputs: x.to_vec(),
            post,
            ln_normed,
            ln_inv_std,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<GradientTape> {
        self.forward_batch(x, 1)
    }

    /// Reverse pass. Accumulates parameter gradients into `grads` (`+=`) and,
    /// when requested, the gradient with respect to the inputs into
    /// `input_grad` (also `+=`). `out_grad` is `batch * output_dim`. Either
    /// destination may be omitted.
    ///
    /// Gradients are exact for the recorded forward; the net itself is never
    /// mutated. A tape recorded before any parameter change is rejected.
    pub fn backward_into(
        &self,
        tape: &GradientTape,
        out_grad: &[f64],
        mut grads: Option<&mut MlpGradients>,
        mut input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        if tape.net_version != self.version {
            return Err(Error::Usage(
                "gradient tape is stale: parameters changed since forward".into(),
            ));
        }
        let batch = tape.batch;
        if out_grad.len() != batch * self.output_dim() {
            return Err(Error::Usage(format!(
                "output gradient length {} does not match batch {} x output dim {}",
                out_grad.len(),
                batch,
                self.output_dim()
            )));
        }
        if let Some(g) = grads.as_ref() {
            if g.data.len() != self.params.len() {
                return Err(Error::Usage("gradient buffer shape mismatch".into()));
            }
        }
        if let Some(ig) = input_grad.as_ref() {
            if ig.len() != batch * self.input_dim() {
                return Err(Error::Usage("input gradient buffer shape mismatch".into()));
            }
        }

        let mut g = out_grad.to_vec();
        let mut g_prev: Vec<f64> = Vec::new();
        for l in (0..self.layer_count()).rev() {
            let dout = self.dims[l + 1];
            let din = self.dims[l];
            let y = &tape.post[l];
            let act = self.acts[l];
            // dL/d(pre-activation); for the layer-norm layer this is the
            // gradient at the post-affine, pre-tanh point.
            for (gv, &yv) in g.iter_mut().zip(y.iter()) {
                *gv *= act.grad_from_output(yv);
            }
            if l == 0 && self.layernorm {
                self.layernorm_backward(&mut g, tape, batch, grads.as_deref_mut());
            }

            let input: &[f64] = if l == 0 { &tape.inputs } else { &tape.post[l - 1] };
            let w = &self.params[self.w_off[l]..self.w_off[l] + din * dout];
            if let Some(gr) = grads.as_deref_mut() {
                let gw = &mut gr.data[self.w_off[l]..self.w_off[l] + din * dout];
                for b in 0..batch {
                    let grow = &g[b * dout..(b + 1) * dout];
                    let xrow = &input[b * din..(b + 1) * din];
                    for i in 0..din {
                        let xi = xrow[i];
                        let gwrow = &mut gw[i * dout..(i + 1) * dout];
                        for o in 0..dout {
                            gwrow[o] += xi * grow[o];
                        }
                    }
                }
                let gb = &mut gr.data[self.b_off[l]..self.b_off[l] + dout];
                for b in 0..batch {
                    let grow = &g[b * dout..(b + 1) * dout];
                    for o in 0..dout {
                        gb[o] += grow[o];
                    }
                }
            }

            let need_input_grad = l > 0 || input_grad.is_some();
            if need_input_grad {
                g_prev.clear();
                g_prev.resize(batch * din, 0.0);
                for b in 0..batch {
                    let grow = &g[b * dout..(b + 1) * dout];
                    let prow = &mut g_prev[b * din..(b + 1) * din];
                    for (i, pv) in prow.iter_mut().enumerate() {
                        let wrow = &w[i * dout..(i + 1) * dout];
                        let mut s = 0.0;
                        for o in 0..dout {
                            s += wrow[o] * grow[o];
                        }
                        *pv = s;
                    }
                }
                if l == 0 {
                    if let Some(ig) = input_grad.as_mut() {
                        for (a, b) in ig.iter_mut().zip(&g_prev) {
                            *a += b;
                        }
                    }
                } else {
                    std::mem::swap(&mut g, &mut g_prev);
                }
            }
        }
        Ok(())
    }

    /// Convenience wrapper: fresh zero accumulators, returns `(param grads,
    /// input grads)`.
    pub fn backward(
        &self,
        tape: &GradientTape,
        out_grad: &[f64],
    ) -> Result<(MlpGradients, Vec<f64>)> {
        let mut grads = MlpGradients::zeros_like(self);
        let mut input_grad = vec![0.0; tape.batch * self.input_dim()];
        self.backward_into(tape, out_grad, Some(&mut grads), Some(&mut input_grad))?;
        Ok((grads, input_grad))
    }

    fn check_input(&self, x: &[f64], batch: usize) -> Result<()> {
        if batch == 0 || x.len() != batch * self.input_dim() {
            return Err(Error::Config(format!(
                "input length {} does not match batch {} x input dim {}",
                x.len(),
                batch,
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(&self, x: &[f64], batch: usize, layer: usize, out: &mut Vec<f64>) {
        let din = self.dims[layer];
        let dout = self.dims[layer + 1];
        let w = &self.params[self.w_off[layer]..self.w_off[layer] + din * dout];
        let bias = &self.params[self.b_off[layer]..self.b_off[layer] + dout];
        out.clear();
        out.reserve(batch * dout);
        for b in 0..batch {
            out.extend_from_slice(bias);
            let yrow_start = b * dout;
            let xrow = &x[b * din..(b + 1) * din];
            let yrow = &mut out[yrow_start..yrow_start + dout];
            for i in 0..din {
                let xi = xrow[i];
                let wrow = &w[i * dout..(i + 1) * dout];
                for o in 0..dout {
                    yrow[o] += xi * wrow[o];
                }
            }
        }
    }

    /// In-place layer norm over the first hidden width; optionally records
    /// (x-hat, 1/std) per row for the backward pass.
    fn layernorm_forward(
        &self,
        z: &mut [f64],
        batch: usize,
        mut record: Option<(&mut Vec<f64>, &mut Vec<f64>)>,
    ) {
        let d = self.dims[1];
        let gain = &self.params[self.ln_gain_off..self.ln_gain_off + d];
        let bias = &self.params[self.ln_bias_off..self.ln_bias_off + d];
        if let Some((normed, _)) = record.as_mut() {
            normed.clear();
            normed.reserve(batch * d);
        }
        for b in 0..batch {
            let row = &mut z[b * d..(b + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + LAYERNORM_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                let xhat = (*v - mean) * inv_std;
                if let Some((normed, _)) = record.as_mut() {
                    normed.push(xhat);
                }
                *v = gain[j] * xhat + bias[j];
            }
            if let Some((_, inv)) = record.as_mut() {
                inv[b] = inv_std;
            }
        }
    }

    /// Turns dL/d(gain*xhat+bias) in `g` into dL/dz in place, accumulating
    /// gain/bias gradients.
    fn layernorm_backward(
        &self,
        g: &mut [f64],
        tape: &GradientTape,
        batch: usize,
        mut grads: Option<&mut MlpGradients>,
    ) {
        let d = self.dims[1];
        let gain = &self.params[self.ln_gain_off..self.ln_gain_off + d];
        for b in 0..batch {
            let grow = &mut g[b * d..(b + 1) * d];
            let xhat = &tape.ln_normed[b * d..(b + 1) * d];
            let inv_std = tape.ln_inv_std[b];
            if let Some(gr) = grads.as_deref_mut() {
                for j in 0..d {
                    gr.data[self.ln_gain_off + j] += grow[j] * xhat[j];
                    gr.data[self.ln_bias_off + j] += grow[j];
                }
            }
            // g_xhat = g * gain, then
            // g_z = inv_std * (g_xhat - mean(g_xhat) - xhat * mean(g_xhat . xhat))
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for j in 0..d {
                grow[j] *= gain[j];
                sum_g += grow[j];
                sum_gx += grow[j] * xhat[j];
            }
            let mean_g = sum_g / d as f64;
            let mean_gx = sum_gx / d as f64;
            for j in 0..d {
                grow[j] = inv_std * (grow[j] - mean_g - xhat[j] * mean_gx);
            }
        }
    }
}
