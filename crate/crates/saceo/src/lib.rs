//! Maximum-entropy actor-critic with expert-observation cloning.
//!
//! One parameterized training loop covers classic soft actor-critic, the
//! expert-observation variant (an augmented policy loss that pulls the
//! policy toward reproducing expert state transitions through a learned
//! forward-dynamics ensemble, with an adaptive mixing coefficient), and the
//! pure-cloning corner of that family. Everything is self-contained: a
//! from-scratch MLP kernel with exact gradients, in-repo control tasks,
//! an expert recording pipeline, and a reproducible experiment harness.

pub mod agent;
pub mod buffers;
pub mod dist;
pub mod dynamics;
pub mod envs;
pub mod harness;
pub mod error;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
