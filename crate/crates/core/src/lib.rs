//! Lyapunov-guided soft actor-critic: policy, probabilistic world model and
//! neural Lyapunov function trained together, with stability analysis tools.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod config;
pub mod env;
pub mod error;
pub mod lyapunov;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod scalar;
pub mod stability;
pub mod trainer;
pub mod world_model;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision models, as used for training.
pub type Mlp32 = nn::Mlp<f32>;
pub type WorldModel32 = world_model::WorldModel<f32>;
pub type Nlf32 = lyapunov::Nlf<f32>;
pub type Policy32 = agent::Policy<f32>;
pub type Agent32 = agent::Agent<f32>;

/// Double-precision models, used for gradient checks and oracles.
pub type Mlp64 = nn::Mlp<f64>;
pub type WorldModel64 = world_model::WorldModel<f64>;
pub type Nlf64 = lyapunov::Nlf<f64>;
pub type Policy64 = agent::Policy<f64>;
pub type Agent64 = agent::Agent<f64>;
