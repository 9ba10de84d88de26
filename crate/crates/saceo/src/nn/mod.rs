//! Differentiable MLP kernel and optimizer.

mod adam;
mod mlp;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use mlp::{Activation, GradientTape, MlpGradients, MlpNet, MlpSpec, LAYERNORM_EPS};
